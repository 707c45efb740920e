#include "maf/sampling.hpp"

#include "maf/kernels.hpp"

namespace maf {

SamplePoints grid_points(int n) {
  if (n < 1) throw ConfigError("grid size must be at least 1");
  SamplePoints sp;
  sp.points = Tensor<double>({n * n, 2});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      sp.points[(i * n + j) * 2] = -1.0 + (2.0 * j + 1.0) / n;
      sp.points[(i * n + j) * 2 + 1] = -1.0 + (2.0 * i + 1.0) / n;
    }
  return sp;
}

SamplePoints mesh_aligned_points(const BodyParams& params, const TemplateBody& body,
                                 PointSource source) {
  const MeshState mesh = forward(params, body);
  SamplePoints sp;
  sp.points = project(downsample_mesh(mesh, body), params.camera);
  sp.source = source;
  return sp;
}

Tensor<double> bilinear_sample(const Tensor<double>& map, const Tensor<double>& points) {
  if (map.rank() != 3 || points.rank() != 2 || points.dim(1) != 2)
    throw ShapeError("bilinear_sample: map " + shape_str(map.shape) + " points " +
                     shape_str(points.shape));
  const int C = map.dim(0), H = map.dim(1), W = map.dim(2), M = points.dim(0);
  Tensor<double> out({M, C});
  kernels::bilinear_forward(1, C, H, W, M, map.ptr(), points.ptr(), out.ptr());
  return out;
}

template <class S>
PointMlp<S>::PointMlp(int in, const std::vector<int>& hidden, int out, std::mt19937_64& rng,
                      bool bias) {
  int prev = in;
  for (int h : hidden) {
    layers.emplace_back(prev, h, rng, bias);
    prev = h;
  }
  layers.emplace_back(prev, out, rng, bias);
}

template <class S>
Var<S> PointMlp<S>::operator()(const Var<S>& rows) const {
  Var<S> x = rows;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](x);
    if (i + 1 < layers.size()) x = ops::leaky_relu(x, slope);
  }
  return x;
}

template <class S>
void PointMlp<S>::collect(nn::Registry<S>& reg, const std::string& prefix) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(reg, prefix + "fc" + std::to_string(i));
}

template <class S>
Var<S> extract_point_features(const PointMlp<S>& mlp, const Var<S>& map, const Var<S>& points,
                              bool detach_points) {
  const int B = map.dim(0), C = map.dim(1), M = points.dim(1);
  Var<S> sampled = ops::bilinear_sample(map, points, detach_points);  // (B,M,C)
  Var<S> reduced = mlp(ops::reshape(sampled, {B * M, C}));           // (B*M,d_r)
  return ops::reshape(reduced, {B, M * mlp.out_dim()});
}

template <class S>
DecodedBody<S> decode_params(const Var<S>& theta, const TemplateBody& body) {
  const int K = body.num_joints(), Bs = body.num_betas();
  const int D = body.config.param_dim();
  if (theta.value().rank() != 2 || theta.dim(1) != D)
    throw ConfigError("params " + shape_str(theta.shape()) + " do not match body dimension " +
                      std::to_string(D));
  const int B = theta.dim(0);
  DecodedBody<S> d;
  d.rotmats = ops::rot6d_to_rotmat(ops::reshape(ops::slice_cols(theta, 0, K * 6), {B, K, 6}));
  d.shape = ops::slice_cols(theta, K * 6, Bs);
  d.camera = ops::slice_cols(theta, K * 6 + Bs, 3);
  d.vertices = skin_vertices(d.rotmats, d.shape, body);
  d.joints = ops::left_matmul_const(body.joint_regressor, d.vertices);
  d.keypoints = ops::weak_project(d.joints, d.camera);
  d.mesh_points =
      ops::weak_project(ops::left_matmul_const(body.downsample, d.vertices), d.camera);
  return d;
}

template struct PointMlp<float>;
template struct PointMlp<double>;
template Var<float> extract_point_features<float>(const PointMlp<float>&, const Var<float>&,
                                                  const Var<float>&, bool);
template Var<double> extract_point_features<double>(const PointMlp<double>&, const Var<double>&,
                                                    const Var<double>&, bool);
template DecodedBody<float> decode_params<float>(const Var<float>&, const TemplateBody&);
template DecodedBody<double> decode_params<double>(const Var<double>&, const TemplateBody&);

}  // namespace maf
