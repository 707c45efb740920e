#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "maf/autograd.hpp"
#include "maf/camera.hpp"
#include "maf/rotation.hpp"
#include "maf/tensor.hpp"

namespace maf {

struct KinematicTree {
  std::vector<int> parent;  // root has -1

  int joint_count() const { return static_cast<int>(parent.size()); }
  /// Throws ConfigError unless topologically ordered with exactly one root.
  void validate() const;
};

struct BodyConfig {
  int vertices = 512;    // N
  int joints = 16;       // K_j, also the number of regressed joints
  int betas = 10;        // B
  int parts = 12;        // P
  int down_vertices = 128;

  static BodyConfig toy() { return {}; }
  static BodyConfig paper() { return {6890, 24, 10, 24, 431}; }
  int param_dim() const { return joints * 6 + betas + 3; }
};

/// Immutable procedural body asset. All arrays are exactly representable in
/// 32-bit floats so that save/load round-trips bit for bit.
struct TemplateBody {
  BodyConfig config;
  std::uint64_t seed = 0;
  KinematicTree tree;
  Tensor<double> template_vertices;  // (N,3) meters
  std::vector<std::array<int, 3>> faces;
  Tensor<double> skin_weights;     // (N,K)
  Tensor<double> shape_basis;      // (N,3,B)
  Tensor<double> joint_regressor;  // (K,N)
  std::vector<int> vertex_parts;   // N labels in 1..P
  Tensor<double> vertex_uv;        // (N,2)
  Tensor<double> downsample;       // (Ñ,N)

  int num_vertices() const { return config.vertices; }
  int num_joints() const { return config.joints; }
  int num_betas() const { return config.betas; }
  int num_parts() const { return config.parts; }
  int num_down() const { return config.down_vertices; }

  /// Checks every structural invariant; throws ConfigError.
  void validate() const;
};

struct BodyParams {
  Tensor<double> pose;        // (K,6)
  std::vector<double> shape;  // B
  CameraParams camera;

  static BodyParams identity(int joints, int betas);
  std::vector<double> flatten() const;
  static BodyParams unflatten(std::span<const double> flat, int joints, int betas);
  bool finite() const;
};

struct MeshState {
  Tensor<double> vertices;  // (N,3)
  Tensor<double> joints;    // (K,3)
};

Eigen::Matrix3d rot6d_to_matrix(std::span<const double, 6> r);
/// Inverse map used by the samplers: first two columns of R.
std::array<double, 6> matrix_to_rot6d(const Eigen::Matrix3d& R);

MeshState forward(const BodyParams& params, const TemplateBody& body);
Tensor<double> downsample_mesh(const MeshState& mesh, const TemplateBody& body);
Tensor<double> apply_rows(const Tensor<double>& matrix, const Tensor<double>& points);

/// Indices into the 24-joint reference skeleton of the joints kept for a
/// body with `joints` joints, ascending (hence topologically ordered).
std::vector<int> skeleton_joint_ids(int joints);
std::string skeleton_joint_name(int id);

TemplateBody make_toy_body(std::uint64_t seed, const BodyConfig& config = BodyConfig::toy());

/// Per-dimension arithmetic mean in raw parameter space.
BodyParams mean_params(std::span<const BodyParams> samples);

void save_body(const TemplateBody& body, const std::filesystem::path& path);
TemplateBody load_body(const std::filesystem::path& path);
/// Hash of the serialized archive bytes.
std::string body_hash(const TemplateBody& body);

/// Differentiable skinning: rotmats (B,K,9), shape (B,Bs) -> posed vertices (B,N,3).
template <class S>
Var<S> skin_vertices(const Var<S>& rotmats, const Var<S>& shape, const TemplateBody& body);

}  // namespace maf
