#pragma once

#include <span>
#include <vector>

#include "maf/rasterizer.hpp"
#include "maf/sampling.hpp"

namespace maf {

struct LossWeights {
  double kp2d = 300.0;
  double joints3d = 300.0;
  double pose = 60.0;
  double shape = 0.6;
  double part = 0.1;  // per-pixel part classification
  double uv = 0.5;

  void validate() const;
  LossWeights scaled(double k) const;
};

/// Ground truth for one batch, laid out like DecodedBody.
template <class S>
struct RegTargets {
  Tensor<S> keypoints;   // (B,K,2)
  Tensor<S> visibility;  // (B,K) in [0,1]; empty means all visible
  Tensor<S> joints;      // (B,K,3)
  Tensor<S> rotmats;     // (B,K,9)
  Tensor<S> shape;       // (B,Bs)
  std::vector<bool> has_3d;  // per sample; empty means all true
};

template <class S>
struct RegLoss {
  Var<S> total;
  double kp2d = 0, joints3d = 0, pose = 0, shape = 0;  // weighted terms
};

/// Weighted mean-squared residuals on keypoints, joints, rotation matrices and
/// shape. 3D and parameter terms are masked to samples carrying 3D truth.
template <class S>
RegLoss<S> reg_loss(const DecodedBody<S>& pred, const RegTargets<S>& gt, const LossWeights& w);

template <class S>
struct AuxLoss {
  Var<S> total;
  double part = 0, u = 0, v = 0;  // weighted terms
};

/// logits (B, P+1+2, h, w): part classes then U, V. Cross-entropy over every
/// pixel plus smooth-L1 (transition 1) on U and V over foreground pixels.
template <class S>
AuxLoss<S> aux_loss(const Var<S>& logits, const std::vector<IUVMap>& gt, const LossWeights& w);

template <class S>
struct TotalLoss {
  Var<S> total;
  std::vector<RegLoss<S>> per_iter;
  AuxLoss<S> aux;  // undefined total when auxiliary supervision is off
};

/// reg_loss summed over every supervised iteration, plus aux_loss when
/// `iuv_logits` is given.
template <class S>
TotalLoss<S> total_loss(std::span<const DecodedBody<S>> iterations, const RegTargets<S>& gt,
                        const LossWeights& w, const Var<S>* iuv_logits = nullptr,
                        const std::vector<IUVMap>* iuv_gt = nullptr);

inline double smooth_l1(double x) {
  const double a = x < 0 ? -x : x;
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

}  // namespace maf
