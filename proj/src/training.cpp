#include "maf/training.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <fstream>

#include "maf/camera.hpp"

namespace maf {

namespace {

std::mt19937_64 step_rng(std::uint64_t seed, long step, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    stream};
  return std::mt19937_64(seq);
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (batch < 1) throw ConfigError("batch size must be at least 1");
  if (steps < 0) throw ConfigError("step count must be non-negative");
  if (probe < 0) throw ConfigError("probe size must be non-negative");
  if (!(adam.lr > 0)) throw ConfigError("learning rate must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"weights", {{"kp2d", weights.kp2d}, {"joints3d", weights.joints3d},
                       {"pose", weights.pose}, {"shape", weights.shape},
                       {"part", weights.part}, {"uv", weights.uv}}},
          {"aux", aux},
          {"adam", {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2},
                    {"eps", adam.eps}}},
          {"batch", batch},
          {"steps", steps},
          {"seed", seed},
          {"probe", probe}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.model = ModelConfig::from_json(j.at("model"));
  const auto& w = j.at("weights");
  c.weights = {w.at("kp2d").get<double>(), w.at("joints3d").get<double>(),
               w.at("pose").get<double>(), w.at("shape").get<double>(),
               w.at("part").get<double>(), w.at("uv").get<double>()};
  c.aux = j.at("aux").get<bool>();
  const auto& a = j.at("adam");
  c.adam = {a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
            a.at("eps").get<double>()};
  c.batch = j.at("batch").get<int>();
  c.steps = j.at("steps").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.probe = j.at("probe").get<int>();
  return c;
}

PreparedData prepare_data(const Dataset& ds, const ModelConfig& model) {
  const TemplateBody& body = ds.body;
  const int N = static_cast<int>(ds.samples.size());
  if (N == 0) throw ConfigError("dataset is empty");
  const int H = model.encoder.image_size;
  const int K = body.num_joints(), Bs = body.num_betas();
  const int fine = model.encoder.level_size(model.encoder.levels - 1);
  PreparedData d;
  d.images = Tensor<float>({N, 3, H, H});
  d.keypoints = Tensor<float>({N, K, 2});
  d.joints = Tensor<float>({N, K, 3});
  d.rotmats = Tensor<float>({N, K, 9});
  d.shape = Tensor<float>({N, Bs});
  d.iuv_fine.resize(N);
  const std::size_t img = 3ull * H * H;
  for (int i = 0; i < N; ++i) {
    const auto& s = ds.samples[i];
    if (s.image.shape != Shape{3, H, H})
      throw ConfigError("sample " + s.id + " has image " + shape_str(s.image.shape) +
                        "; the model expects " + std::to_string(H) + "x" + std::to_string(H));
    d.ids.push_back(s.id);
    std::copy(s.image.data.begin(), s.image.data.end(), d.images.data.begin() + i * img);
    for (int k = 0; k < K; ++k) {
      for (int c = 0; c < 2; ++c) d.keypoints[(i * K + k) * 2 + c] = float(s.keypoints[k * 2 + c]);
      for (int c = 0; c < 3; ++c) d.joints[(i * K + k) * 3 + c] = float(s.joints[k * 3 + c]);
      double R[9];
      rot6d_forward(s.params.pose.ptr() + 6 * k, R);
      for (int c = 0; c < 9; ++c) d.rotmats[(i * K + k) * 9 + c] = float(R[c]);
    }
    for (int b = 0; b < Bs; ++b) d.shape[i * Bs + b] = float(s.params.shape[b]);
  }
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < N; ++i) {
    const auto& s = ds.samples[i];
    d.iuv_fine[i] = rasterize_iuv(forward(s.params, body), body, s.params.camera, fine, fine);
  }
  return d;
}

Tensor<float> gather(const Tensor<float>& t, const std::vector<int>& idx) {
  Shape s = t.shape;
  const std::size_t row = t.size() / s[0];
  s[0] = static_cast<int>(idx.size());
  Tensor<float> out(s);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(t.data.begin() + idx[i] * row, row, out.data.begin() + i * row);
  return out;
}

RegTargets<float> gather_targets(const PreparedData& d, const std::vector<int>& idx) {
  RegTargets<float> g;
  g.keypoints = gather(d.keypoints, idx);
  g.joints = gather(d.joints, idx);
  g.rotmats = gather(d.rotmats, idx);
  g.shape = gather(d.shape, idx);
  return g;
}

std::string step_log_header(int T) {
  std::string h = "step,total,kp2d,joints3d,pose,shape,aux_part,aux_u,aux_v";
  for (int t = 1; t <= T; ++t) h += ",probe_mpjpe_" + std::to_string(t);
  return h;
}

std::string step_log_row(const StepLog& s) {
  std::string r = std::to_string(s.step);
  for (double x : {s.total, s.kp2d, s.joints3d, s.pose, s.shape, s.part, s.u, s.v})
    r += "," + fmt(x);
  for (double x : s.probe_mpjpe) r += "," + fmt(x);
  return r;
}

std::vector<int> batch_indices(std::uint64_t seed, long step, int count, int batch) {
  auto rng = step_rng(seed, step, 0);
  std::vector<int> all(count);
  std::iota(all.begin(), all.end(), 0);
  const int n = std::min(batch, count);
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<int> pick(i, count - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(n);
  return all;
}

Trainer::Trainer(const TrainConfig& cfg, const Dataset& train) : cfg_(cfg), train_(&train) {
  cfg_.validate();
  std::vector<BodyParams> ps;
  for (const auto& s : train.samples) ps.push_back(s.params);
  std::vector<double> m = mean_params(ps).flatten();
  for (auto& x : m) x = round_f32(x);
  init(m);
}

Trainer::Trainer(const std::filesystem::path& checkpoint, const Dataset& train) : train_(&train) {
  const auto rec = archive::read_file(checkpoint);
  const auto& h = rec.header;
  if (h.value("kind", "") != "checkpoint" || h.value("version", 0) != kCheckpointVersion)
    throw archive::IoError(checkpoint.string() + ": not a checkpoint of version " +
                           std::to_string(kCheckpointVersion));
  if (h.at("body_hash").get<std::string>() != body_hash(train.body))
    throw ConfigError(checkpoint.string() + ": checkpoint was trained with a different body");
  cfg_ = TrainConfig::from_json(h.at("train"));
  const auto mv = rec.get("mean_theta").as_f32();
  init(std::vector<double>(mv.begin(), mv.end()));
  nn::load_weights(net_->registry(), rec);
  adam_->load(rec);
}

void Trainer::init(const std::vector<double>& mean_theta) {
  data_ = prepare_data(*train_, cfg_.model);
  net_ = std::make_unique<MafNet<float>>(cfg_.model, train_->body, mean_theta, cfg_.seed);
  adam_ = std::make_unique<nn::Adam<float>>(net_->registry(), cfg_.adam);
}

StepLog Trainer::step() {
  const long step = adam_->steps();
  const auto idx = batch_indices(cfg_.seed, step, data_.count(), cfg_.batch);
  std::vector<std::string> ids;
  for (int i : idx) ids.push_back(data_.ids[i]);
  auto rng = step_rng(cfg_.seed, step, 1);

  net_->registry().zero_grad();
  StepLog log;
  log.step = step + 1;
  Var<float> loss;
  try {
    const auto trace = net_->run(Var<float>::leaf(gather(data_.images, idx)), true, rng);
    const auto targets = gather_targets(data_, idx);
    std::vector<IUVMap> iuv;
    if (cfg_.aux)
      for (int i : idx) iuv.push_back(data_.iuv_fine[i]);
    const auto tl = total_loss<float>(std::span(trace.bodies).subspan(1), targets, cfg_.weights,
                                      cfg_.aux ? &trace.iuv_logits : nullptr, &iuv);
    for (const auto& r : tl.per_iter) {
      log.kp2d += r.kp2d;
      log.joints3d += r.joints3d;
      log.pose += r.pose;
      log.shape += r.shape;
    }
    log.part = tl.aux.part;
    log.u = tl.aux.u;
    log.v = tl.aux.v;
    loss = tl.total;
  } catch (const DegenerateRotation& e) {
    throw TrainingDiverged(std::string("degenerate rotation: ") + e.what(), step + 1, ids);
  }
  log.total = loss.value()[0];
  if (!std::isfinite(log.total))
    throw TrainingDiverged("non-finite loss", step + 1, ids);
  backward(loss);
  for (auto& [name, p] : net_->registry().params)
    if (p->has_grad())
      for (float g : p->grad().data)
        if (!std::isfinite(g)) throw TrainingDiverged("non-finite gradient in " + name, step + 1, ids);
  adam_->step();
  log.probe_mpjpe = probe_mpjpe();
  return log;
}

std::vector<double> Trainer::probe_mpjpe() {
  const int n = std::min(cfg_.probe, data_.count());
  const int T = cfg_.model.loop.T;
  std::vector<double> out(T, 0.0);
  if (n == 0) return out;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<LoopTrace> traces;
  try {
    traces = run(*net_, gather(data_.images, idx));
  } catch (const DegenerateRotation&) {
    return std::vector<double>(T, std::numeric_limits<double>::quiet_NaN());
  }
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < T; ++t)
      out[t] += mpjpe(traces[i].meshes_per_iter[t].joints, train_->samples[i].joints) / n;
  return out;
}

void Trainer::save(const std::filesystem::path& path) const {
  archive::Record rec;
  rec.header = {{"kind", "checkpoint"},
                {"version", kCheckpointVersion},
                {"preset", cfg_.model.preset},
                {"c_s", cfg_.model.encoder.c_s},
                {"T", cfg_.model.loop.T},
                {"seed", cfg_.seed},
                {"step", adam_->steps()},
                {"fingerprint", cfg_.model.fingerprint()},
                {"body_hash", body_hash(train_->body)},
                {"train", cfg_.to_json()}};
  rec.add("mean_theta", archive::f32_from({static_cast<int>(net_->mean_theta().size())},
                                          net_->mean_theta()));
  nn::save_weights(const_cast<MafNet<float>&>(*net_).registry(), rec);
  adam_->save(rec);
  archive::write_file(path, rec);
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& checkpoint) {
  std::ifstream is(checkpoint, std::ios::binary);
  if (!is) throw archive::IoError("cannot open for reading: " + checkpoint.string());
  std::uint64_t len = 0;
  if (!is.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1ull << 30))
    throw archive::IoError(checkpoint.string() + ": truncated header");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len)))
    throw archive::IoError(checkpoint.string() + ": truncated header");
  auto h = nlohmann::json::parse(text, nullptr, false);
  if (h.is_discarded() || h.value("kind", "") != "checkpoint")
    throw archive::IoError(checkpoint.string() + ": not a checkpoint");
  if (h.value("version", 0) != kCheckpointVersion)
    throw archive::IoError(checkpoint.string() + ": checkpoint version " +
                           std::to_string(h.value("version", 0)) + ", expected " +
                           std::to_string(kCheckpointVersion));
  return h;
}

LoadedModel load_model(const std::filesystem::path& checkpoint, const TemplateBody& body) {
  read_checkpoint_header(checkpoint);
  const auto rec = archive::read_file(checkpoint);
  if (rec.header.at("body_hash").get<std::string>() != body_hash(body))
    throw ConfigError(checkpoint.string() + ": checkpoint was trained with a different body");
  LoadedModel m;
  m.config = TrainConfig::from_json(rec.header.at("train"));
  if (m.config.model.fingerprint() != rec.header.at("fingerprint").get<std::string>())
    throw ConfigError(checkpoint.string() + ": config fingerprint mismatch");
  m.step = rec.header.at("step").get<long>();
  const auto mv = rec.get("mean_theta").as_f32();
  m.net = std::make_unique<MafNet<float>>(m.config.model, body,
                                          std::vector<double>(mv.begin(), mv.end()), 0);
  nn::load_weights(m.net->registry(), rec);
  return m;
}

// ---------------------------------------------------------------------------

namespace {

struct Accumulator {
  const Dataset& ds;
  EvalResult result;
  SegCounter seg;
  std::vector<double> oks_values;

  explicit Accumulator(const Dataset& d) : ds(d), seg(d.body.num_parts()) {}

  void add(int i, const std::vector<BodyParams>& iters) {
    const auto& s = ds.samples[i];
    const TemplateBody& body = ds.body;
    const MeshState gt_mesh = forward(s.params, body);
    SampleMetrics m;
    m.id = s.id;
    MeshState last;
    for (const auto& p : iters) {
      last = forward(p, body);
      m.mpjpe.push_back(maf::mpjpe(last.joints, gt_mesh.joints));
      m.pa_mpjpe.push_back(maf::pa_mpjpe(last.joints, gt_mesh.joints));
      m.pve.push_back(maf::pve(last.vertices, gt_mesh.vertices));
    }
    const BodyParams& fin = iters.back();
    const int W = s.iuv.width, H = s.iuv.height;
    const Tensor<double> pk = to_pixel(project(last.joints, fin.camera), W, H);
    const Tensor<double> gk = to_pixel(s.keypoints, W, H);
    m.oks = maf::oks(pk, gk, double(s.area), std::vector<double>(body.num_joints(), kDefaultKappa));
    oks_values.push_back(m.oks);
    seg.add(part_segmentation(rasterize_iuv(last, body, fin.camera, W, H)), part_segmentation(s.iuv));
    result.samples.push_back(std::move(m));
  }

  EvalResult finish() {
    result.ap = oks_ap(oks_values);
    result.mesh_seg = seg.scores();
    return std::move(result);
  }
};

}  // namespace

EvalResult evaluate(MafNet<float>& net, const Dataset& ds, int batch) {
  const ModelConfig& mc = net.config();
  const PreparedData data = prepare_data(ds, mc);
  Accumulator acc(ds);
  long fg = 0, fg_hit = 0;
  const int classes = mc.body.parts + 1;
  for (int start = 0; start < data.count(); start += batch) {
    std::vector<int> idx;
    for (int i = start; i < std::min(start + batch, data.count()); ++i) idx.push_back(i);
    NoGradGuard ng;
    std::mt19937_64 rng(0);
    const auto trace = net.run(Var<float>::leaf(gather(data.images, idx)), false, rng);
    const auto loops = to_loop_traces(trace, ds.body);
    const Tensor<float>& logits = trace.iuv_logits.value();
    const int h = logits.dim(2), w = logits.dim(3), Ch = logits.dim(1);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      std::vector<BodyParams> iters{loops[j].initial};
      for (const auto& p : loops[j].params_per_iter) iters.push_back(p);
      acc.add(idx[j], iters);
      const IUVMap& gt = data.iuv_fine[idx[j]];
      for (std::size_t p = 0; p < plane; ++p) {
        if (gt.part[p] == 0) continue;
        int best = 0;
        const float* x = logits.ptr() + j * Ch * plane + p;
        for (int c = 1; c < classes; ++c)
          if (x[c * plane] > x[best * plane]) best = c;
        ++fg;
        fg_hit += best == gt.part[p];
      }
    }
  }
  EvalResult r = acc.finish();
  r.iuv_fg_part_accuracy = fg ? double(fg_hit) / fg : 1.0;
  return r;
}

EvalResult evaluate_params(const std::vector<BodyParams>& pred, const Dataset& ds) {
  if (pred.size() != ds.samples.size()) throw ConfigError("one prediction per sample expected");
  Accumulator acc(ds);
  for (std::size_t i = 0; i < pred.size(); ++i) acc.add(static_cast<int>(i), {pred[i]});
  EvalResult r = acc.finish();
  r.iuv_fg_part_accuracy = std::numeric_limits<double>::quiet_NaN();
  return r;
}

nlohmann::json EvalResult::summary() const {
  const std::size_t iters = samples.empty() ? 0 : samples[0].mpjpe.size();
  std::vector<double> mp(iters), pa(iters), pv(iters);
  std::vector<double> oks_v;
  for (const auto& s : samples) {
    for (std::size_t t = 0; t < iters; ++t) {
      mp[t] += s.mpjpe[t] / samples.size();
      pa[t] += s.pa_mpjpe[t] / samples.size();
      pv[t] += s.pve[t] / samples.size();
    }
    oks_v.push_back(s.oks);
  }
  nlohmann::json j = {{"count", samples.size()},
                      {"mpjpe", iters ? mp.back() : 0.0},
                      {"pa_mpjpe", iters ? pa.back() : 0.0},
                      {"pve", iters ? pv.back() : 0.0},
                      {"per_iteration", {{"mpjpe", mp}, {"pa_mpjpe", pa}, {"pve", pv}}},
                      {"oks_mean", mean(oks_v)},
                      {"ap", ap.ap},
                      {"ap50", ap.ap50},
                      {"ap75", ap.ap75},
                      {"fb_accuracy", mesh_seg.fb_accuracy},
                      {"fb_f1", mesh_seg.fb_f1},
                      {"part_accuracy", mesh_seg.part_accuracy},
                      {"part_f1", mesh_seg.part_f1}};
  if (std::isfinite(iuv_fg_part_accuracy)) j["iuv_fg_part_accuracy"] = iuv_fg_part_accuracy;
  return j;
}

std::string EvalResult::csv() const {
  std::string out = "sample_id,mpjpe,pa_mpjpe,pve,oks\n";
  for (const auto& s : samples)
    out += s.id + "," + fmt(s.mpjpe.back()) + "," + fmt(s.pa_mpjpe.back()) + "," +
           fmt(s.pve.back()) + "," + fmt(s.oks) + "\n";
  return out;
}

std::vector<AblationRow> ablation_rows(const LoopConfig& loop, std::uint64_t seed,
                                       const EvalResult& result) {
  const auto s = result.summary().at("per_iteration");
  const auto mp = s.at("mpjpe").get<std::vector<double>>();
  const auto pa = s.at("pa_mpjpe").get<std::vector<double>>();
  const auto pv = s.at("pve").get<std::vector<double>>();
  std::vector<AblationRow> rows;
  const int first = loop.init == InitMode::mean_pose_mesh ? 0 : 1;
  for (int t = first; t < static_cast<int>(mp.size()); ++t)
    rows.push_back({to_string(loop.feedback), to_string(loop.init), t, seed, mp[t], pa[t], pv[t]});
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "mode,init,iteration,seed,mpjpe,pa_mpjpe,pve\n";
  for (const auto& r : rows)
    out += r.mode + "," + r.init + "," + std::to_string(r.iteration) + "," + std::to_string(r.seed) +
           "," + fmt(r.mpjpe) + "," + fmt(r.pa_mpjpe) + "," + fmt(r.pve) + "\n";
  return out;
}

std::filesystem::path ablation_checkpoint(const std::filesystem::path& dir, const LoopConfig& loop,
                                          std::uint64_t seed) {
  return dir / (to_string(loop.feedback) + "_" + to_string(loop.init) + "_seed" +
                std::to_string(seed) + ".ckpt");
}

}  // namespace maf
