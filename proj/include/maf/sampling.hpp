#pragma once

#include <random>
#include <vector>

#include "maf/body_model.hpp"
#include "maf/nn.hpp"

namespace maf {

enum class PointSource { grid, mesh_aligned, mean_pose_mesh };

struct SamplePoints {
  Tensor<double> points;  // (M,2) normalized image coordinates
  PointSource source = PointSource::grid;

  int count() const { return points.dim(0); }
};

/// Centers of an n x n partition of [-1,1]^2, row-major (y outer, x inner).
SamplePoints grid_points(int n);

/// Projection of the downsampled posed mesh under the params' own camera.
SamplePoints mesh_aligned_points(const BodyParams& params, const TemplateBody& body,
                                 PointSource source = PointSource::mesh_aligned);

/// map (C,H,W), points (M,2) -> (M,C); pixel-center convention, border clamp.
Tensor<double> bilinear_sample(const Tensor<double>& map, const Tensor<double>& points);

/// Shared per-point reduction C_s -> hidden... -> d_r with LeakyReLU between
/// layers and a linear output.
template <class S>
struct PointMlp {
  std::vector<nn::Linear<S>> layers;
  S slope = S(0.2);

  PointMlp() = default;
  PointMlp(int in, const std::vector<int>& hidden, int out, std::mt19937_64& rng,
           bool bias = true);
  int out_dim() const { return layers.back().out(); }
  /// rows (R,C_s) -> (R,d_r)
  Var<S> operator()(const Var<S>& rows) const;
  void collect(nn::Registry<S>& reg, const std::string& prefix);
};

/// map (B,C,H,W), points (B,M,2) -> (B, M*d_r), point-major concatenation.
template <class S>
Var<S> extract_point_features(const PointMlp<S>& mlp, const Var<S>& map, const Var<S>& points,
                              bool detach_points = false);

/// Differentiable decode of flattened params (B, K*6+Bs+3).
template <class S>
struct DecodedBody {
  Var<S> rotmats;    // (B,K,9)
  Var<S> shape;      // (B,Bs)
  Var<S> camera;     // (B,3)
  Var<S> vertices;   // (B,N,3)
  Var<S> joints;     // (B,K,3)
  Var<S> keypoints;  // (B,K,2)
  Var<S> mesh_points;  // (B,Ñ,2) projected downsampled vertices
};

template <class S>
DecodedBody<S> decode_params(const Var<S>& theta, const TemplateBody& body);

}  // namespace maf
