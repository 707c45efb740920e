#include "maf/synth_data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

namespace maf {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index, int attempt, int stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(attempt), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

double f32(double x) { return round_f32(x); }

std::string sample_id(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace

double joint_limit(int id) {
  static const double deg[24] = {
      35,            // pelvis (global orientation)
      20, 20, 20,    // spine
      30, 35,        // neck, head
      20, 80, 110, 45, 30,   // left collar..hand
      20, 80, 110, 45, 30,   // right
      60, 100, 35, 25,       // left hip..foot
      60, 100, 35, 25};      // right
  if (id < 0 || id >= 24) throw ConfigError("joint id out of range");
  return deg[id] * kDeg;
}

BodyParams sample_params(std::uint64_t seed, std::uint64_t index, const TemplateBody& body,
                         int attempt) {
  auto rng = sample_rng(seed, index, attempt, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const int K = body.num_joints(), B = body.num_betas();
  const auto ids = skeleton_joint_ids(K);
  BodyParams p = BodyParams::identity(K, B);
  for (int k = 0; k < K; ++k) {
    Eigen::Vector3d axis(normal(rng), normal(rng), normal(rng));
    if (axis.norm() < 1e-9) axis = Eigen::Vector3d::UnitZ();
    const double angle = uni(rng) * joint_limit(ids[k]);
    const Eigen::Matrix3d R = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
    const auto r6 = matrix_to_rot6d(R);
    for (int i = 0; i < 6; ++i) p.pose[6 * k + i] = f32(r6[i]);
  }
  for (int b = 0; b < B; ++b) {
    double x;
    do x = 0.5 * normal(rng);
    while (std::abs(x) > 2.0);
    p.shape[b] = f32(x);
  }
  p.camera.scale = f32(0.7 + 0.4 * uni(rng));
  p.camera.tx = f32(-0.15 + 0.3 * uni(rng));
  p.camera.ty = f32(-0.15 + 0.3 * uni(rng));
  return p;
}

GroundTruthSample make_sample(std::uint64_t seed, std::uint64_t index, const TemplateBody& body,
                              const SynthOptions& opt) {
  const int R = opt.resolution;
  for (int attempt = 0; attempt < opt.max_attempts; ++attempt) {
    GroundTruthSample s;
    s.params = sample_params(seed, index, body, attempt);
    const MeshState mesh = forward(s.params, body);
    s.iuv = rasterize_iuv(mesh, body, s.params.camera, R, R);
    s.area = s.iuv.foreground();
    if (s.area < opt.min_coverage * R * R) continue;
    const std::uint64_t bg = sample_rng(seed, index, attempt, 1)();
    s.id = sample_id(index);
    s.image = render_input(mesh, body, s.params.camera, R, R, bg, opt.background_contrast);
    s.joints = mesh.joints;
    s.keypoints = project(mesh.joints, s.params.camera);
    return s;
  }
  throw GenerationError("sample " + std::to_string(index) + ": foreground below " +
                        std::to_string(opt.min_coverage) + " after " +
                        std::to_string(opt.max_attempts) + " attempts");
}

archive::Record sample_record(const GroundTruthSample& s) {
  archive::Record rec;
  const int K = s.joints.dim(0);
  rec.header = {{"kind", "sample"}, {"version", kDatasetFormatVersion}, {"id", s.id},
                {"area", s.area}};
  rec.add("image", archive::f32(s.image.shape, s.image.data));
  rec.add("keypoints", archive::f32_from({K, 2}, s.keypoints.data));
  rec.add("joints", archive::f32_from({K, 3}, s.joints.data));
  const auto theta = s.params.flatten();
  rec.add("theta", archive::f32_from({static_cast<int>(theta.size())}, theta));
  add_iuv(rec, s.iuv);
  return rec;
}

GroundTruthSample sample_from_record(const archive::Record& rec, const TemplateBody& body) {
  if (rec.header.value("kind", "") != "sample" ||
      rec.header.value("version", 0) != kDatasetFormatVersion)
    throw archive::IoError("not a sample record of version " +
                           std::to_string(kDatasetFormatVersion));
  GroundTruthSample s;
  s.id = rec.header.at("id").get<std::string>();
  s.area = rec.header.at("area").get<int>();
  const auto& img = rec.get("image");
  s.image = Tensor<float>(img.shape, img.as_f32());
  auto load = [&](const char* name) {
    const auto& a = rec.get(name);
    const auto v = a.as_f32();
    return Tensor<double>(a.shape, std::vector<double>(v.begin(), v.end()));
  };
  s.keypoints = load("keypoints");
  s.joints = load("joints");
  const Tensor<double> theta = load("theta");
  s.params = BodyParams::unflatten(theta.data, body.num_joints(), body.num_betas());
  s.iuv = get_iuv(rec);
  return s;
}

nlohmann::json make_dataset(const std::filesystem::path& dir, std::uint64_t seed, int count,
                            const TemplateBody& body, const SynthOptions& opt) {
  if (count < 1) throw ConfigError("dataset count must be at least 1");
  if (opt.resolution < 1) throw ConfigError("resolution must be positive");
  std::vector<GroundTruthSample> samples(count);
  std::vector<std::string> errors(count);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    try {
      samples[i] = make_sample(seed, i, body, opt);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw GenerationError(e);

  std::error_code ec;
  std::filesystem::create_directories(dir / "samples", ec);
  if (ec) throw archive::IoError("cannot create " + (dir / "samples").string() + ": " + ec.message());
  save_body(body, dir / "body.bin");
  nlohmann::json manifest = {{"version", kDatasetFormatVersion},
                             {"seed", seed},
                             {"count", count},
                             {"resolution", opt.resolution},
                             {"background_contrast", opt.background_contrast},
                             {"body_hash", body_hash(body)},
                             {"ids", nlohmann::json::array()}};
  for (const auto& s : samples) {
    archive::write_file(dir / "samples" / (s.id + ".bin"), sample_record(s));
    manifest["ids"].push_back(s.id);
  }
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw archive::IoError("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << "\n";
  return manifest;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw archive::IoError("cannot read " + (dir / "manifest.json").string());
  Dataset ds;
  try {
    ds.manifest = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw archive::IoError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (ds.manifest.value("version", 0) != kDatasetFormatVersion)
    throw archive::IoError((dir / "manifest.json").string() + ": unsupported dataset version");
  ds.body = load_body(dir / "body.bin");
  if (body_hash(ds.body) != ds.manifest.at("body_hash").get<std::string>())
    throw archive::IoError(dir.string() + ": body.bin does not match the manifest hash");
  for (const auto& id : ds.manifest.at("ids")) {
    const auto path = dir / "samples" / (id.get<std::string>() + ".bin");
    ds.samples.push_back(sample_from_record(archive::read_file(path), ds.body));
  }
  return ds;
}

}  // namespace maf
