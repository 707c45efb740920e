#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maf/losses.hpp"
#include "maf/maf_loop.hpp"
#include "maf/metrics.hpp"
#include "maf/synth_data.hpp"

namespace maf {

constexpr int kCheckpointVersion = 1;

/// Raised when a step produces a non-finite loss or an unusable rotation.
struct TrainingDiverged : std::runtime_error {
  TrainingDiverged(const std::string& what, long step, std::vector<std::string> batch)
      : std::runtime_error(what), step(step), batch_ids(std::move(batch)) {}
  long step;
  std::vector<std::string> batch_ids;
};

struct TrainConfig {
  ModelConfig model = ModelConfig::toy();
  LossWeights weights;
  bool aux = true;
  nn::AdamConfig adam{1e-4};
  int batch = 16;
  int steps = 2000;
  std::uint64_t seed = 0;
  int probe = 8;  // first samples of the training set, evaluated after every step

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Dataset tensors in training layout, plus IUV truth at the finest pyramid size.
struct PreparedData {
  std::vector<std::string> ids;
  Tensor<float> images;     // (N,3,H,W)
  Tensor<float> keypoints;  // (N,K,2)
  Tensor<float> joints;     // (N,K,3)
  Tensor<float> rotmats;    // (N,K,9)
  Tensor<float> shape;      // (N,Bs)
  std::vector<IUVMap> iuv_fine;
  int count() const { return static_cast<int>(ids.size()); }
};

PreparedData prepare_data(const Dataset& ds, const ModelConfig& model);

/// Gathers rows `idx` of a prepared tensor.
Tensor<float> gather(const Tensor<float>& t, const std::vector<int>& idx);
RegTargets<float> gather_targets(const PreparedData& d, const std::vector<int>& idx);

struct StepLog {
  long step = 0;
  double total = 0, kp2d = 0, joints3d = 0, pose = 0, shape = 0, part = 0, u = 0, v = 0;
  std::vector<double> probe_mpjpe;  // Θ_1..Θ_T
};

std::string step_log_header(int T);
std::string step_log_row(const StepLog& s);

/// Batch indices for `step`: a function of (seed, step) only.
std::vector<int> batch_indices(std::uint64_t seed, long step, int count, int batch);

class Trainer {
 public:
  /// Fresh model; Θ_0 is the mean of the training set's parameters.
  Trainer(const TrainConfig& cfg, const Dataset& train);
  /// Restores weights, optimizer state and step count from a checkpoint.
  Trainer(const std::filesystem::path& checkpoint, const Dataset& train);

  StepLog step();
  long steps_done() const { return adam_->steps(); }
  const TrainConfig& config() const { return cfg_; }
  MafNet<float>& net() { return *net_; }
  void save(const std::filesystem::path& path) const;

 private:
  void init(const std::vector<double>& mean_theta);
  std::vector<double> probe_mpjpe();

  TrainConfig cfg_;
  const Dataset* train_;
  PreparedData data_;
  std::unique_ptr<MafNet<float>> net_;
  std::unique_ptr<nn::Adam<float>> adam_;
};

struct LoadedModel {
  TrainConfig config;
  long step = 0;
  std::unique_ptr<MafNet<float>> net;
};

/// Loads a checkpoint for inference against `body` (hash must match the
/// checkpoint's).
LoadedModel load_model(const std::filesystem::path& checkpoint, const TemplateBody& body);
nlohmann::json read_checkpoint_header(const std::filesystem::path& checkpoint);

struct SampleMetrics {
  std::string id;
  std::vector<double> mpjpe, pa_mpjpe, pve;  // Θ_0..Θ_T
  double oks = 0;
};

struct EvalResult {
  std::vector<SampleMetrics> samples;
  ApResult ap;
  SegScores mesh_seg;            // rendered final mesh vs truth at input resolution
  double iuv_fg_part_accuracy = 0;  // IUV head argmax on truth-foreground pixels
  nlohmann::json summary() const;
  std::string csv() const;  // sample_id,mpjpe,pa_mpjpe,pve,oks (final iteration)
};

/// Per-keypoint OKS constants used for the toy skeleton.
constexpr double kDefaultKappa = 0.08;

EvalResult evaluate(MafNet<float>& net, const Dataset& ds, int batch = 32);

/// Metrics of arbitrary predicted params against the dataset truth.
EvalResult evaluate_params(const std::vector<BodyParams>& pred, const Dataset& ds);

struct AblationRow {
  std::string mode, init;
  int iteration = 0;
  std::uint64_t seed = 0;
  double mpjpe = 0, pa_mpjpe = 0, pve = 0;
};

/// Mean metrics per iteration of one (mode, seed) run. Iteration 0 is listed
/// only for mean-pose-mesh initialization.
std::vector<AblationRow> ablation_rows(const LoopConfig& loop, std::uint64_t seed,
                                       const EvalResult& result);
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::filesystem::path ablation_checkpoint(const std::filesystem::path& dir, const LoopConfig& loop,
                                          std::uint64_t seed);

}  // namespace maf
