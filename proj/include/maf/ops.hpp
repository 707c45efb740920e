#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "maf/autograd.hpp"

namespace maf::ops {

template <class S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <class S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <class S> Var<S> scale(const Var<S>& a, S factor);
/// Sum of scalar (size-1) vars.
template <class S> Var<S> sum_scalars(const std::vector<Var<S>>& xs);
template <class S> Var<S> reshape(const Var<S>& a, Shape shape);

/// Rank-2 concatenation / slicing along the last axis.
template <class S> Var<S> concat_cols(const std::vector<Var<S>>& xs);
template <class S> Var<S> slice_cols(const Var<S>& a, int start, int len);

/// x (R x in) * W^T (W is out x in) + b. `b` may be undefined.
template <class S> Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b);
template <class S> Var<S> relu(const Var<S>& a);
template <class S> Var<S> leaky_relu(const Var<S>& a, S slope);
/// Inverted dropout; identity when !training or p == 0.
template <class S> Var<S> dropout(const Var<S>& a, double p, bool training, std::mt19937_64& rng);

template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int stride, int pad);
template <class S>
Var<S> conv_transpose2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int stride, int pad);

/// Batch statistics (and running update) when training, running statistics otherwise.
template <class S>
Var<S> batch_norm2d(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                    Tensor<S>& running_mean, Tensor<S>& running_var, bool training,
                    double momentum = 0.1, double eps = 1e-5);
/// (B,C,H,W) -> (B,C)
template <class S> Var<S> global_avg_pool(const Var<S>& x);

/// map (B,C,H,W), points (B,M,2) normalized -> (B,M,C). With detach_points the
/// coordinates receive no gradient.
template <class S>
Var<S> bilinear_sample(const Var<S>& map, const Var<S>& points, bool detach_points = false);

/// (..., 6) -> (..., 9) row-major 3x3 matrices, columns from Gram-Schmidt.
template <class S> Var<S> rot6d_to_rotmat(const Var<S>& x);

/// x (B,N,3), constant matrix (R,N) -> (B,R,3).
template <class S> Var<S> left_matmul_const(const Tensor<double>& mat, const Var<S>& x);

/// Weak-perspective: points (B,M,3), cam (B,3) = (s,tx,ty) -> (B,M,2).
template <class S> Var<S> weak_project(const Var<S>& points, const Var<S>& cam);

/// mean(weights * (pred - target)^2); empty weights mean all ones.
template <class S>
Var<S> weighted_mse(const Var<S>& pred, const Tensor<S>& target, const Tensor<S>& weights = {});

}  // namespace maf::ops
