#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maf/rasterizer.hpp"

namespace maf {

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kDatasetFormatVersion = 1;

struct GroundTruthSample {
  std::string id;
  Tensor<float> image;       // (3,H,W) in [0,1]
  Tensor<double> keypoints;  // (K,2) normalized
  Tensor<double> joints;     // (K,3) meters
  BodyParams params;
  IUVMap iuv;
  int area = 0;  // foreground pixels
};

/// Largest rotation angle (radians) sampled for joint `id` of the reference skeleton.
double joint_limit(int skeleton_id);

/// Deterministic in (seed, index, attempt). Values are rounded to 32-bit
/// floats so stored parameters reproduce the stored geometry.
BodyParams sample_params(std::uint64_t seed, std::uint64_t index, const TemplateBody& body,
                         int attempt = 0);

struct SynthOptions {
  int resolution = 64;
  double min_coverage = 0.05;
  int max_attempts = 50;
  double background_contrast = 0.3;
};

/// Renders one sample, resampling params while coverage is below the floor.
GroundTruthSample make_sample(std::uint64_t seed, std::uint64_t index, const TemplateBody& body,
                              const SynthOptions& opt);

archive::Record sample_record(const GroundTruthSample& s);
GroundTruthSample sample_from_record(const archive::Record& rec, const TemplateBody& body);

struct Dataset {
  nlohmann::json manifest;
  TemplateBody body;
  std::vector<GroundTruthSample> samples;
};

/// Writes `dir`/manifest.json, `dir`/body.bin and `dir`/samples/<id>.bin.
nlohmann::json make_dataset(const std::filesystem::path& dir, std::uint64_t seed, int count,
                            const TemplateBody& body, const SynthOptions& opt);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace maf
