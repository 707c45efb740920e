#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maf/encoder.hpp"
#include "maf/sampling.hpp"

namespace maf {

enum class FeedbackMode { global, grid, mesh_aligned };
enum class InitMode { grid, mean_pose_mesh };

std::string to_string(FeedbackMode m);
std::string to_string(InitMode m);
FeedbackMode parse_feedback_mode(const std::string& s);
InitMode parse_init_mode(const std::string& s);

struct LoopConfig {
  int T = 3;
  FeedbackMode feedback = FeedbackMode::mesh_aligned;
  InitMode init = InitMode::grid;
  bool pyramidal = true;
  bool share_regressor = false;
  bool detach_points = false;  // stop gradients through sampling coordinates

  /// Global feedback is non-pyramidal with one shared regressor; the other
  /// modes are pyramidal with one regressor per level.
  static LoopConfig for_mode(FeedbackMode mode, int T = 3);
};

struct ModelConfig {
  std::string preset = "toy";
  BodyConfig body;
  EncoderConfig encoder;
  LoopConfig loop;
  int grid_n = 11;
  int point_dim = 5;
  std::vector<int> mlp_hidden{128, 64};
  int reg_hidden = 1024;
  double dropout = 0.5;

  static ModelConfig toy();
  static ModelConfig paper();
  static ModelConfig preset_named(const std::string& name);

  int theta_dim() const { return body.param_dim(); }
  /// Point count sampled at iteration t (0 for global features).
  int point_count(int t) const;
  /// Regressor feature input length at iteration t (excluding Θ).
  int feature_len(int t) const;
  int regressor_count() const { return loop.share_regressor ? 1 : loop.T; }
  int mlp_count() const;
  /// Pyramid level read at iteration t.
  int map_level(int t) const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  std::string fingerprint() const;
};

/// fc(1024) -> dropout -> fc(1024) -> dropout -> fc(D), no activations; the
/// last layer starts at zero so the first prediction is the mean.
template <class S>
struct Regressor {
  nn::Linear<S> fc1, fc2, out;
  double dropout = 0.5;

  Regressor() = default;
  Regressor(int feature_len, int theta_dim, int hidden, double dropout, std::mt19937_64& rng);
  /// features (B,F), theta (B,D) -> ΔΘ (B,D)
  Var<S> operator()(const Var<S>& features, const Var<S>& theta, bool training,
                    std::mt19937_64& rng) const;
  void collect(nn::Registry<S>& reg, const std::string& prefix);
};

template <class S>
struct NetTrace {
  typename Encoder<S>::Output encoded;
  Var<S> global;                        // (B,C_g)
  Var<S> iuv_logits;                    // finest-level IUV prediction
  std::vector<Var<S>> theta;            // Θ_0..Θ_T, (B,D) each
  std::vector<Var<S>> delta;            // ΔΘ_0..ΔΘ_{T-1}
  std::vector<Var<S>> points;           // sampling points per iteration (undefined for global)
  std::vector<Var<S>> features;         // regressor features per iteration
  std::vector<DecodedBody<S>> bodies;   // decode(Θ_t), t = 0..T
};

/// Encoder, per-level point MLPs and residual regressors. Holds raw pointers
/// into itself through the registry, so it is neither copied nor moved.
template <class S>
class MafNet {
 public:
  MafNet(const ModelConfig& config, const TemplateBody& body, std::span<const double> mean_theta,
         std::uint64_t seed);
  MafNet(const MafNet&) = delete;
  MafNet& operator=(const MafNet&) = delete;

  NetTrace<S> run(const Var<S>& images, bool training, std::mt19937_64& rng);

  const ModelConfig& config() const { return config_; }
  const TemplateBody& body() const { return *body_; }
  nn::Registry<S>& registry() { return registry_; }
  const std::vector<double>& mean_theta() const { return mean_theta_; }
  Encoder<S>& encoder() { return encoder_; }
  std::vector<PointMlp<S>>& mlps() { return mlps_; }
  std::vector<Regressor<S>>& regressors() { return regressors_; }

 private:
  ModelConfig config_;
  const TemplateBody* body_;
  std::vector<double> mean_theta_;
  Encoder<S> encoder_;
  std::vector<PointMlp<S>> mlps_;
  std::vector<Regressor<S>> regressors_;
  nn::Registry<S> registry_;
};

/// Plain per-iteration results for one image.
struct LoopTrace {
  BodyParams initial;                    // Θ_0
  std::vector<BodyParams> params_per_iter;  // Θ_1..Θ_T
  std::vector<MeshState> meshes_per_iter;
  std::vector<Tensor<double>> keypoints_per_iter;  // (K,2)
};

template <class S>
std::vector<LoopTrace> to_loop_traces(const NetTrace<S>& trace, const TemplateBody& body);

/// Inference on a batch of images (B,3,H,W).
template <class S>
std::vector<LoopTrace> run(MafNet<S>& net, const Tensor<S>& images);

}  // namespace maf
