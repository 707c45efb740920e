#include "maf/maf_loop.hpp"

#include "maf/archive.hpp"

namespace maf {

std::string to_string(FeedbackMode m) {
  switch (m) {
    case FeedbackMode::global: return "global";
    case FeedbackMode::grid: return "grid";
    case FeedbackMode::mesh_aligned: return "mesh_aligned";
  }
  return "?";
}

std::string to_string(InitMode m) {
  return m == InitMode::grid ? "grid" : "mean_pose_mesh";
}

FeedbackMode parse_feedback_mode(const std::string& s) {
  if (s == "global") return FeedbackMode::global;
  if (s == "grid") return FeedbackMode::grid;
  if (s == "mesh_aligned") return FeedbackMode::mesh_aligned;
  throw ConfigError("unknown feedback mode '" + s + "' (global, grid, mesh_aligned)");
}

InitMode parse_init_mode(const std::string& s) {
  if (s == "grid") return InitMode::grid;
  if (s == "mean_pose_mesh") return InitMode::mean_pose_mesh;
  throw ConfigError("unknown init mode '" + s + "' (grid, mean_pose_mesh)");
}

LoopConfig LoopConfig::for_mode(FeedbackMode mode, int T) {
  LoopConfig c;
  c.T = T;
  c.feedback = mode;
  c.pyramidal = mode != FeedbackMode::global;
  c.share_regressor = !c.pyramidal;
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.preset = "toy";
  c.body = BodyConfig::toy();
  c.encoder = EncoderConfig::toy(c.body.parts);
  c.grid_n = 11;
  return c;
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = "paper";
  c.body = BodyConfig::paper();
  c.encoder = EncoderConfig::paper(c.body.parts);
  c.grid_n = 21;
  return c;
}

ModelConfig ModelConfig::preset_named(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "paper") return paper();
  throw ConfigError("unknown preset '" + name + "' (toy, paper)");
}

int ModelConfig::point_count(int t) const {
  if (loop.feedback == FeedbackMode::global) return 0;
  const bool mesh = t == 0 ? loop.init == InitMode::mean_pose_mesh
                           : loop.feedback == FeedbackMode::mesh_aligned;
  return mesh ? body.down_vertices : grid_n * grid_n;
}

int ModelConfig::feature_len(int t) const {
  if (loop.feedback == FeedbackMode::global) return encoder.global_dim();
  return point_count(t) * point_dim;
}

int ModelConfig::mlp_count() const {
  if (loop.feedback == FeedbackMode::global) return 0;
  return loop.pyramidal ? loop.T : 1;
}

int ModelConfig::map_level(int t) const {
  return loop.pyramidal ? encoder.levels - loop.T + t : encoder.levels - 1;
}

void ModelConfig::validate() const {
  encoder.validate();
  if (loop.T < 1) throw ConfigError("T must be at least 1");
  if (encoder.parts != body.parts) throw ConfigError("encoder part count differs from body");
  if (grid_n < 1 || point_dim < 1 || reg_hidden < 1) throw ConfigError("non-positive model size");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0,1)");
  if (!loop.pyramidal && !loop.share_regressor)
    throw ConfigError("non-pyramidal loops use a single shared regressor");
  if (loop.feedback == FeedbackMode::global && loop.pyramidal)
    throw ConfigError("global feedback has no pyramid; set pyramidal=false");
  if (loop.pyramidal && loop.T > encoder.levels)
    throw ConfigError("pyramidal loop with T=" + std::to_string(loop.T) + " needs as many levels; encoder has " +
                      std::to_string(encoder.levels));
  if (loop.share_regressor)
    for (int t = 1; t < loop.T; ++t)
      if (feature_len(t) != feature_len(0))
        throw ConfigError("a shared regressor needs equal feature lengths at every iteration (" +
                          std::to_string(feature_len(0)) + " vs " + std::to_string(feature_len(t)) +
                          "); use init_mode=mean_pose_mesh");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"preset", preset},
          {"body", {{"vertices", body.vertices}, {"joints", body.joints}, {"betas", body.betas},
                    {"parts", body.parts}, {"down_vertices", body.down_vertices}}},
          {"encoder", {{"image_size", encoder.image_size}, {"trunk", encoder.trunk},
                       {"c_s", encoder.c_s}, {"levels", encoder.levels},
                       {"lateral", encoder.lateral}, {"iuv_kernel", encoder.iuv_kernel}}},
          {"loop", {{"T", loop.T}, {"feedback_mode", to_string(loop.feedback)},
                    {"init_mode", to_string(loop.init)}, {"pyramidal", loop.pyramidal},
                    {"share_regressor", loop.share_regressor},
                    {"detach_points", loop.detach_points}}},
          {"grid_n", grid_n},
          {"point_dim", point_dim},
          {"mlp_hidden", mlp_hidden},
          {"reg_hidden", reg_hidden},
          {"dropout", dropout}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.preset = j.at("preset").get<std::string>();
  const auto& b = j.at("body");
  c.body = {b.at("vertices").get<int>(), b.at("joints").get<int>(), b.at("betas").get<int>(),
            b.at("parts").get<int>(), b.at("down_vertices").get<int>()};
  const auto& e = j.at("encoder");
  c.encoder = {e.at("image_size").get<int>(), e.at("trunk").get<std::vector<int>>(),
               e.at("c_s").get<int>(), e.at("levels").get<int>(), c.body.parts,
               e.at("lateral").get<bool>(), e.at("iuv_kernel").get<int>()};
  const auto& l = j.at("loop");
  c.loop.T = l.at("T").get<int>();
  c.loop.feedback = parse_feedback_mode(l.at("feedback_mode").get<std::string>());
  c.loop.init = parse_init_mode(l.at("init_mode").get<std::string>());
  c.loop.pyramidal = l.at("pyramidal").get<bool>();
  c.loop.share_regressor = l.at("share_regressor").get<bool>();
  c.loop.detach_points = l.at("detach_points").get<bool>();
  c.grid_n = j.at("grid_n").get<int>();
  c.point_dim = j.at("point_dim").get<int>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
  c.reg_hidden = j.at("reg_hidden").get<int>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

std::string ModelConfig::fingerprint() const {
  const std::string s = to_json().dump();
  return archive::fnv1a_hex(std::vector<std::uint8_t>(s.begin(), s.end()));
}

template <class S>
Regressor<S>::Regressor(int feature_len, int theta_dim, int hidden, double dropout_,
                        std::mt19937_64& rng)
    : fc1(feature_len + theta_dim, hidden, rng),
      fc2(hidden, hidden, rng),
      out(hidden, theta_dim, rng),
      dropout(dropout_) {
  out.zero();
}

template <class S>
Var<S> Regressor<S>::operator()(const Var<S>& features, const Var<S>& theta, bool training,
                                std::mt19937_64& rng) const {
  if (features.value().rank() != 2 || features.dim(1) + theta.dim(1) != fc1.in())
    throw ConfigError("regressor expects " + std::to_string(fc1.in() - theta.dim(1)) +
                      " features, got " + shape_str(features.shape()));
  Var<S> x = ops::concat_cols<S>({features, theta});
  x = ops::dropout(fc1(x), dropout, training, rng);
  x = ops::dropout(fc2(x), dropout, training, rng);
  return out(x);
}

template <class S>
void Regressor<S>::collect(nn::Registry<S>& reg, const std::string& prefix) {
  fc1.collect(reg, prefix + "fc1");
  fc2.collect(reg, prefix + "fc2");
  out.collect(reg, prefix + "out");
}

template <class S>
MafNet<S>::MafNet(const ModelConfig& config, const TemplateBody& body,
                  std::span<const double> mean_theta, std::uint64_t seed)
    : config_(config), body_(&body), mean_theta_(mean_theta.begin(), mean_theta.end()) {
  config_.validate();
  const BodyConfig& bc = body.config;
  if (bc.vertices != config_.body.vertices || bc.joints != config_.body.joints ||
      bc.betas != config_.body.betas || bc.parts != config_.body.parts ||
      bc.down_vertices != config_.body.down_vertices)
    throw ConfigError("body asset sizes do not match the model preset");
  if (static_cast<int>(mean_theta_.size()) != config_.theta_dim())
    throw ConfigError("mean params have length " + std::to_string(mean_theta_.size()) +
                      ", expected " + std::to_string(config_.theta_dim()));
  std::mt19937_64 rng(seed);
  encoder_ = Encoder<S>(config_.encoder, rng);
  for (int i = 0; i < config_.mlp_count(); ++i)
    mlps_.emplace_back(config_.encoder.c_s, config_.mlp_hidden, config_.point_dim, rng);
  for (int i = 0; i < config_.regressor_count(); ++i)
    regressors_.emplace_back(config_.feature_len(i), config_.theta_dim(), config_.reg_hidden,
                             config_.dropout, rng);
  encoder_.collect(registry_, "encoder.");
  for (std::size_t i = 0; i < mlps_.size(); ++i)
    mlps_[i].collect(registry_, "mlp" + std::to_string(i) + ".");
  for (std::size_t i = 0; i < regressors_.size(); ++i)
    regressors_[i].collect(registry_, "reg" + std::to_string(i) + ".");
}

template <class S>
NetTrace<S> MafNet<S>::run(const Var<S>& images, bool training, std::mt19937_64& rng) {
  const ModelConfig& c = config_;
  const int B = images.dim(0), D = c.theta_dim();
  NetTrace<S> tr;
  tr.encoded = encoder_.forward(images, training);
  tr.iuv_logits = encoder_.predict_iuv(tr.encoded.pyramid);
  if (c.loop.feedback == FeedbackMode::global) tr.global = Encoder<S>::global_feature(tr.encoded);

  Tensor<S> theta0({B, D});
  for (int b = 0; b < B; ++b)
    for (int d = 0; d < D; ++d) theta0[b * D + d] = S(mean_theta_[d]);
  tr.theta.push_back(Var<S>::leaf(std::move(theta0)));
  tr.bodies.push_back(decode_params(tr.theta[0], *body_));

  const SamplePoints grid = grid_points(c.grid_n);
  for (int t = 0; t < c.loop.T; ++t) {
    Var<S> feats, pts;
    if (c.loop.feedback == FeedbackMode::global) {
      feats = tr.global;
    } else {
      const bool mesh = t == 0 ? c.loop.init == InitMode::mean_pose_mesh
                               : c.loop.feedback == FeedbackMode::mesh_aligned;
      if (mesh) {
        pts = tr.bodies[t].mesh_points;
      } else {
        const int M = grid.count();
        Tensor<S> g({B, M, 2});
        for (int b = 0; b < B; ++b)
          for (int i = 0; i < 2 * M; ++i) g[b * 2 * M + i] = S(grid.points[i]);
        pts = Var<S>::leaf(std::move(g));
      }
      const int mlp = c.loop.pyramidal ? t : 0;
      feats = extract_point_features(mlps_[mlp], tr.encoded.pyramid[c.map_level(t)], pts,
                                     c.loop.detach_points);
    }
    const Regressor<S>& reg = regressors_[c.loop.share_regressor ? 0 : t];
    Var<S> delta = reg(feats, tr.theta[t], training, rng);
    tr.points.push_back(pts);
    tr.features.push_back(feats);
    tr.delta.push_back(delta);
    tr.theta.push_back(ops::add(tr.theta[t], delta));
    tr.bodies.push_back(decode_params(tr.theta[t + 1], *body_));
  }
  return tr;
}

template <class S>
std::vector<LoopTrace> to_loop_traces(const NetTrace<S>& trace, const TemplateBody& body) {
  const int B = trace.theta[0].dim(0), D = trace.theta[0].dim(1);
  const int K = body.num_joints(), Bs = body.num_betas();
  std::vector<LoopTrace> out(B);
  auto params_of = [&](const Var<S>& th, int b) {
    std::vector<double> flat(th.value().data.begin() + b * D, th.value().data.begin() + (b + 1) * D);
    return BodyParams::unflatten(flat, K, Bs);
  };
  for (int b = 0; b < B; ++b) {
    out[b].initial = params_of(trace.theta[0], b);
    for (std::size_t t = 1; t < trace.theta.size(); ++t) {
      BodyParams p = params_of(trace.theta[t], b);
      MeshState m = forward(p, body);
      out[b].keypoints_per_iter.push_back(project(m.joints, p.camera));
      out[b].meshes_per_iter.push_back(std::move(m));
      out[b].params_per_iter.push_back(std::move(p));
    }
  }
  return out;
}

template <class S>
std::vector<LoopTrace> run(MafNet<S>& net, const Tensor<S>& images) {
  NoGradGuard ng;
  std::mt19937_64 rng(0);  // unused: dropout is off at inference
  return to_loop_traces(net.run(Var<S>::leaf(images), false, rng), net.body());
}

template struct Regressor<float>;
template struct Regressor<double>;
template class MafNet<float>;
template class MafNet<double>;
template std::vector<LoopTrace> to_loop_traces<float>(const NetTrace<float>&, const TemplateBody&);
template std::vector<LoopTrace> to_loop_traces<double>(const NetTrace<double>&,
                                                       const TemplateBody&);
template std::vector<LoopTrace> run<float>(MafNet<float>&, const Tensor<float>&);
template std::vector<LoopTrace> run<double>(MafNet<double>&, const Tensor<double>&);

}  // namespace maf
