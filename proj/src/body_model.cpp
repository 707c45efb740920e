#include "maf/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "maf/archive.hpp"

namespace maf {

namespace {

constexpr int kBodyFormatVersion = 1;
constexpr double kRowSumTol = 1e-6;

double f32(double x) { return round_f32(x); }

}  // namespace

void KinematicTree::validate() const {
  if (parent.empty()) throw ConfigError("kinematic tree has no joints");
  int roots = 0;
  for (int k = 0; k < joint_count(); ++k) {
    if (parent[k] < 0) {
      if (parent[k] != -1) throw ConfigError("root sentinel must be -1");
      ++roots;
    } else if (parent[k] >= k) {
      throw ConfigError("joint " + std::to_string(k) + " has parent " +
                        std::to_string(parent[k]) + " (not topologically ordered)");
    }
  }
  if (roots != 1) throw ConfigError("kinematic tree must have exactly one root");
}

void TemplateBody::validate() const {
  const int N = num_vertices(), K = num_joints(), B = num_betas(), D = num_down();
  tree.validate();
  if (tree.joint_count() != K) throw ConfigError("tree size does not match joint count");
  expect_shape(template_vertices.shape, {N, 3}, "template_vertices");
  expect_shape(skin_weights.shape, {N, K}, "skin_weights");
  expect_shape(shape_basis.shape, {N, 3, B}, "shape_basis");
  expect_shape(joint_regressor.shape, {K, N}, "joint_regressor");
  expect_shape(vertex_uv.shape, {N, 2}, "vertex_uv");
  expect_shape(downsample.shape, {D, N}, "downsample");
  if (static_cast<int>(vertex_parts.size()) != N) throw ConfigError("vertex_parts size");
  auto check_rows = [](const Tensor<double>& m, const char* what) {
    const int rows = m.dim(0), cols = m.dim(1);
    for (int r = 0; r < rows; ++r) {
      double s = 0;
      for (int c = 0; c < cols; ++c) {
        const double v = m[static_cast<std::size_t>(r) * cols + c];
        if (!(v >= 0.0)) throw ConfigError(std::string(what) + ": negative or NaN entry");
        s += v;
      }
      if (std::abs(s - 1.0) > kRowSumTol)
        throw ConfigError(std::string(what) + ": row " + std::to_string(r) + " sums to " +
                          std::to_string(s));
    }
  };
  check_rows(skin_weights, "skin_weights");
  check_rows(joint_regressor, "joint_regressor");
  check_rows(downsample, "downsample");
  for (const auto& f : faces)
    for (int v : f)
      if (v < 0 || v >= N) throw ConfigError("face references invalid vertex");
  for (int p : vertex_parts)
    if (p < 1 || p > num_parts()) throw ConfigError("vertex part label out of range");
  for (double x : vertex_uv.data)
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("vertex uv outside [0,1]");
}

BodyParams BodyParams::identity(int joints, int betas) {
  BodyParams p;
  p.pose = Tensor<double>({joints, 6});
  for (int k = 0; k < joints; ++k) {
    p.pose[6 * k + 0] = 1.0;
    p.pose[6 * k + 4] = 1.0;
  }
  p.shape.assign(betas, 0.0);
  return p;
}

std::vector<double> BodyParams::flatten() const {
  std::vector<double> out(pose.data);
  out.insert(out.end(), shape.begin(), shape.end());
  out.push_back(camera.scale);
  out.push_back(camera.tx);
  out.push_back(camera.ty);
  return out;
}

BodyParams BodyParams::unflatten(std::span<const double> flat, int joints, int betas) {
  const std::size_t want = static_cast<std::size_t>(joints) * 6 + betas + 3;
  if (flat.size() != want)
    throw ConfigError("flattened params have length " + std::to_string(flat.size()) +
                      ", expected " + std::to_string(want));
  BodyParams p;
  p.pose = Tensor<double>({joints, 6}, std::vector<double>(flat.begin(), flat.begin() + joints * 6));
  p.shape.assign(flat.begin() + joints * 6, flat.begin() + joints * 6 + betas);
  const std::size_t c = static_cast<std::size_t>(joints) * 6 + betas;
  p.camera = {flat[c], flat[c + 1], flat[c + 2]};
  return p;
}

bool BodyParams::finite() const {
  for (double v : flatten())
    if (!std::isfinite(v)) return false;
  return true;
}

Eigen::Matrix3d rot6d_to_matrix(std::span<const double, 6> r) {
  double m[9];
  rot6d_forward(r.data(), m);
  Eigen::Matrix3d R;
  R << m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8];
  return R;
}

std::array<double, 6> matrix_to_rot6d(const Eigen::Matrix3d& R) {
  return {R(0, 0), R(1, 0), R(2, 0), R(0, 1), R(1, 1), R(2, 1)};
}

// ---------------------------------------------------------------------------
// Skinning core shared by the plain and differentiable paths.

namespace {

struct SparseWeights {
  std::vector<std::vector<std::pair<int, double>>> rows;
};

SparseWeights sparse_rows(const Tensor<double>& m) {
  SparseWeights s;
  const int R = m.dim(0), C = m.dim(1);
  s.rows.resize(R);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      const double w = m[static_cast<std::size_t>(r) * C + c];
      if (w != 0.0) s.rows[r].push_back({c, w});
    }
  return s;
}

// 3x3 row-major helpers
template <class S>
void matmul3(const S* a, const S* b, S* o) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      o[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
}

template <class S>
void matvec3(const S* a, const S* v, S* o) {
  for (int i = 0; i < 3; ++i) o[i] = a[i * 3] * v[0] + a[i * 3 + 1] * v[1] + a[i * 3 + 2] * v[2];
}

template <class S>
void matTvec3(const S* a, const S* v, S* o) {
  for (int i = 0; i < 3; ++i) o[i] = a[i] * v[0] + a[3 + i] * v[1] + a[6 + i] * v[2];
}

template <class S>
struct SkinCache {
  std::vector<S> vrest, joints, rg, tg;  // per sample, concatenated
};

template <class S>
void skin_forward_sample(const TemplateBody& body, const SparseWeights& skin,
                         const SparseWeights& jreg, const S* rot, const S* beta, S* vrest, S* J,
                         S* rg, S* tg, S* out) {
  const int N = body.num_vertices(), K = body.num_joints(), B = body.num_betas();
  const double* T = body.template_vertices.ptr();
  const double* basis = body.shape_basis.ptr();
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < 3; ++c) {
      S acc = S(T[i * 3 + c]);
      const double* bb = basis + (static_cast<std::size_t>(i) * 3 + c) * B;
      for (int b = 0; b < B; ++b) acc += S(bb[b]) * beta[b];
      vrest[i * 3 + c] = acc;
    }
  for (int k = 0; k < K; ++k) {
    S acc[3] = {0, 0, 0};
    for (const auto& [n, w] : jreg.rows[k])
      for (int c = 0; c < 3; ++c) acc[c] += S(w) * vrest[n * 3 + c];
    for (int c = 0; c < 3; ++c) J[k * 3 + c] = acc[c];
  }
  for (int k = 0; k < K; ++k) {
    const int p = body.tree.parent[k];
    const S* R = rot + k * 9;
    if (p < 0) {
      std::copy_n(R, 9, rg + k * 9);
      std::copy_n(J + k * 3, 3, tg + k * 3);
    } else {
      matmul3(rg + p * 9, R, rg + k * 9);
      const S e[3] = {J[k * 3] - J[p * 3], J[k * 3 + 1] - J[p * 3 + 1], J[k * 3 + 2] - J[p * 3 + 2]};
      S re[3];
      matvec3(rg + p * 9, e, re);
      for (int c = 0; c < 3; ++c) tg[k * 3 + c] = re[c] + tg[p * 3 + c];
    }
  }
  for (int i = 0; i < N; ++i) {
    S acc[3] = {0, 0, 0};
    for (const auto& [k, w] : skin.rows[i]) {
      const S d[3] = {vrest[i * 3] - J[k * 3], vrest[i * 3 + 1] - J[k * 3 + 1],
                      vrest[i * 3 + 2] - J[k * 3 + 2]};
      S rd[3];
      matvec3(rg + k * 9, d, rd);
      for (int c = 0; c < 3; ++c) acc[c] += S(w) * (rd[c] + tg[k * 3 + c]);
    }
    for (int c = 0; c < 3; ++c) out[i * 3 + c] = acc[c];
  }
}

template <class S>
void skin_backward_sample(const TemplateBody& body, const SparseWeights& skin,
                          const SparseWeights& jreg, const S* rot, const S* vrest, const S* J,
                          const S* rg, const S* dout, S* drot, S* dbeta) {
  const int N = body.num_vertices(), K = body.num_joints(), B = body.num_betas();
  std::vector<S> dRg(K * 9, 0), dtg(K * 3, 0), dJ(K * 3, 0), dvrest(N * 3, 0);
  for (int i = 0; i < N; ++i) {
    const S* g = dout + i * 3;
    for (const auto& [k, w] : skin.rows[i]) {
      const S d[3] = {vrest[i * 3] - J[k * 3], vrest[i * 3 + 1] - J[k * 3 + 1],
                      vrest[i * 3 + 2] - J[k * 3 + 2]};
      for (int r = 0; r < 3; ++r) {
        const S wg = S(w) * g[r];
        for (int c = 0; c < 3; ++c) dRg[k * 9 + r * 3 + c] += wg * d[c];
        dtg[k * 3 + r] += wg;
      }
      S rtg[3];
      matTvec3(rg + k * 9, g, rtg);
      for (int c = 0; c < 3; ++c) dvrest[i * 3 + c] += S(w) * rtg[c];
    }
  }
  for (int k = 0; k < K; ++k) {
    S q[3];
    matTvec3(rg + k * 9, dtg.data() + k * 3, q);
    for (int c = 0; c < 3; ++c) dJ[k * 3 + c] -= q[c];
  }
  for (int k = K - 1; k >= 0; --k) {
    const int p = body.tree.parent[k];
    const S* R = rot + k * 9;
    S* dR = drot + k * 9;
    if (p < 0) {
      for (int i = 0; i < 9; ++i) dR[i] += dRg[k * 9 + i];
      for (int c = 0; c < 3; ++c) dJ[k * 3 + c] += dtg[k * 3 + c];
      continue;
    }
    const S* Rp = rg + p * 9;
    const S* G = dRg.data() + k * 9;
    // Rg_k = Rg_p R_k
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        S a = 0, b = 0;
        for (int m = 0; m < 3; ++m) {
          a += G[i * 3 + m] * R[j * 3 + m];   // (G R^T)_{ij}
          b += Rp[m * 3 + i] * G[m * 3 + j];  // (Rp^T G)_{ij}
        }
        dRg[p * 9 + i * 3 + j] += a;
        dR[i * 3 + j] += b;
      }
    // tg_k = Rg_p (J_k - J_p) + tg_p
    const S* gt = dtg.data() + k * 3;
    const S e[3] = {J[k * 3] - J[p * 3], J[k * 3 + 1] - J[p * 3 + 1], J[k * 3 + 2] - J[p * 3 + 2]};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) dRg[p * 9 + r * 3 + c] += gt[r] * e[c];
    S q[3];
    matTvec3(Rp, gt, q);
    for (int c = 0; c < 3; ++c) {
      dJ[k * 3 + c] += q[c];
      dJ[p * 3 + c] -= q[c];
      dtg[p * 3 + c] += gt[c];
    }
  }
  for (int k = 0; k < K; ++k)
    for (const auto& [n, w] : jreg.rows[k])
      for (int c = 0; c < 3; ++c) dvrest[n * 3 + c] += S(w) * dJ[k * 3 + c];
  const double* basis = body.shape_basis.ptr();
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < 3; ++c) {
      const double* bb = basis + (static_cast<std::size_t>(i) * 3 + c) * B;
      const S g = dvrest[i * 3 + c];
      for (int b = 0; b < B; ++b) dbeta[b] += S(bb[b]) * g;
    }
}

}  // namespace

template <class S>
Var<S> skin_vertices(const Var<S>& rotmats, const Var<S>& shape, const TemplateBody& body) {
  const int K = body.num_joints(), N = body.num_vertices(), Bs = body.num_betas();
  if (rotmats.value().rank() != 3 || rotmats.dim(1) != K || rotmats.dim(2) != 9)
    throw ConfigError("skin_vertices: rotmats " + shape_str(rotmats.shape()) + " for " +
                      std::to_string(K) + " joints");
  const int batch = rotmats.dim(0);
  expect_shape(shape.shape(), {batch, Bs}, "skin_vertices shape coefficients");
  auto skin = std::make_shared<SparseWeights>(sparse_rows(body.skin_weights));
  auto jreg = std::make_shared<SparseWeights>(sparse_rows(body.joint_regressor));
  auto cache = std::make_shared<SkinCache<S>>();
  cache->vrest.resize(static_cast<std::size_t>(batch) * N * 3);
  cache->joints.resize(static_cast<std::size_t>(batch) * K * 3);
  cache->rg.resize(static_cast<std::size_t>(batch) * K * 9);
  cache->tg.resize(static_cast<std::size_t>(batch) * K * 3);
  Tensor<S> out({batch, N, 3});
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b)
    skin_forward_sample<S>(body, *skin, *jreg, rotmats.value().ptr() + b * K * 9,
                           shape.value().ptr() + b * Bs, cache->vrest.data() + b * N * 3,
                           cache->joints.data() + b * K * 3, cache->rg.data() + b * K * 9,
                           cache->tg.data() + b * K * 3, out.ptr() + static_cast<std::size_t>(b) * N * 3);
  const TemplateBody* bp = &body;
  return make_op<S>(std::move(out), {rotmats, shape},
                    [bp, skin, jreg, cache, batch, K, N, Bs](Node<S>& o) {
                      Node<S>& pr = *o.parents[0];
                      Node<S>& ps = *o.parents[1];
                      std::vector<S> drot(static_cast<std::size_t>(batch) * K * 9, 0);
                      std::vector<S> dbeta(static_cast<std::size_t>(batch) * Bs, 0);
#pragma omp parallel for schedule(static)
                      for (int b = 0; b < batch; ++b)
                        skin_backward_sample<S>(
                            *bp, *skin, *jreg, pr.value.ptr() + b * K * 9,
                            cache->vrest.data() + b * N * 3, cache->joints.data() + b * K * 3,
                            cache->rg.data() + b * K * 9,
                            o.grad.ptr() + static_cast<std::size_t>(b) * N * 3,
                            drot.data() + b * K * 9, dbeta.data() + b * Bs);
                      if (pr.requires_grad) {
                        auto& g = pr.ensure_grad();
                        for (std::size_t i = 0; i < drot.size(); ++i) g[i] += drot[i];
                      }
                      if (ps.requires_grad) {
                        auto& g = ps.ensure_grad();
                        for (std::size_t i = 0; i < dbeta.size(); ++i) g[i] += dbeta[i];
                      }
                    });
}

template Var<float> skin_vertices<float>(const Var<float>&, const Var<float>&, const TemplateBody&);
template Var<double> skin_vertices<double>(const Var<double>&, const Var<double>&,
                                           const TemplateBody&);

Tensor<double> apply_rows(const Tensor<double>& matrix, const Tensor<double>& points) {
  if (matrix.rank() != 2 || points.rank() != 2 || matrix.dim(1) != points.dim(0))
    throw ConfigError("matrix " + shape_str(matrix.shape) + " cannot multiply points " +
                      shape_str(points.shape));
  const int R = matrix.dim(0), N = matrix.dim(1), C = points.dim(1);
  Tensor<double> out({R, C});
  for (int r = 0; r < R; ++r)
    for (int n = 0; n < N; ++n) {
      const double w = matrix[static_cast<std::size_t>(r) * N + n];
      if (w == 0.0) continue;
      for (int c = 0; c < C; ++c) out[r * C + c] += w * points[static_cast<std::size_t>(n) * C + c];
    }
  return out;
}

MeshState forward(const BodyParams& params, const TemplateBody& body) {
  const int K = body.num_joints(), B = body.num_betas();
  if (params.pose.shape != Shape{K, 6} || static_cast<int>(params.shape.size()) != B)
    throw ConfigError("body params " + shape_str(params.pose.shape) + "/" +
                      std::to_string(params.shape.size()) + " do not match body (" +
                      std::to_string(K) + " joints, " + std::to_string(B) + " betas)");
  NoGradGuard ng;
  Tensor<double> rot({1, K, 9});
  for (int k = 0; k < K; ++k) rot6d_forward(params.pose.ptr() + 6 * k, rot.ptr() + 9 * k);
  auto verts = skin_vertices<double>(Var<double>::leaf(std::move(rot)),
                                     Var<double>::leaf(Tensor<double>({1, B}, params.shape)), body);
  MeshState m;
  m.vertices = Tensor<double>({body.num_vertices(), 3}, verts.value().data);
  m.joints = apply_rows(body.joint_regressor, m.vertices);
  return m;
}

Tensor<double> downsample_mesh(const MeshState& mesh, const TemplateBody& body) {
  return apply_rows(body.downsample, mesh.vertices);
}

BodyParams mean_params(std::span<const BodyParams> samples) {
  if (samples.empty()) throw ConfigError("mean_params: empty dataset");
  const auto first = samples.front().flatten();
  std::vector<double> acc(first.size(), 0.0);
  for (const auto& s : samples) {
    const auto f = s.flatten();
    if (f.size() != acc.size()) throw ConfigError("mean_params: inconsistent dimensions");
    for (std::size_t i = 0; i < f.size(); ++i) acc[i] += f[i];
  }
  for (auto& a : acc) a /= static_cast<double>(samples.size());
  return BodyParams::unflatten(acc, samples.front().pose.dim(0),
                               static_cast<int>(samples.front().shape.size()));
}

// ---------------------------------------------------------------------------
// Procedural capsule humanoid.

namespace {

struct BoneSpec {
  const char* name;
  int parent;
  Eigen::Vector3d pos;
  Eigen::Vector3d start;  // capsule start (usually == pos)
  Eigen::Vector3d end;
  double radius;
  int cont;  // chain continuation merged into this capsule when dropped
};

// y points down, +z points away from the camera. Arms hang 50 degrees below
// horizontal.
std::vector<BoneSpec> full_skeleton() {
  const double c = std::cos(50.0 * std::numbers::pi / 180.0);
  const double s = std::sin(50.0 * std::numbers::pi / 180.0);
  const Eigen::Vector3d dir(c, s, 0);
  const Eigen::Vector3d shoulder(0.17, -0.47, 0);
  const Eigen::Vector3d elbow = shoulder + 0.26 * dir;
  const Eigen::Vector3d wrist = elbow + 0.24 * dir;
  const Eigen::Vector3d hand = wrist + 0.08 * dir;
  const Eigen::Vector3d tip = wrist + 0.17 * dir;
  auto mirror = [](Eigen::Vector3d v) {
    v.x() = -v.x();
    return v;
  };
  std::vector<BoneSpec> b;
  auto add = [&](const char* n, int parent, Eigen::Vector3d pos, Eigen::Vector3d end, double r,
                 int cont) { b.push_back({n, parent, pos, pos, end, r, cont}); };
  add("pelvis", -1, {0, 0, 0}, {0.09, 0.02, 0}, 0.10, -1);
  b.back().start = {-0.09, 0.02, 0};
  add("spine1", 0, {0, -0.10, 0}, {0, -0.25, 0}, 0.11, 2);
  add("spine2", 1, {0, -0.25, 0}, {0, -0.38, 0}, 0.13, 3);
  add("spine3", 2, {0, -0.38, 0}, {0, -0.50, 0}, 0.14, 4);
  add("neck", 3, {0, -0.50, 0}, {0, -0.58, 0}, 0.05, 5);
  add("head", 4, {0, -0.58, 0}, {0, -0.78, 0}, 0.09, -1);
  add("l_collar", 3, {0.03, -0.46, 0}, {0.16, -0.47, 0}, 0.05, -1);
  add("l_shoulder", 6, shoulder, elbow, 0.045, 8);
  add("l_elbow", 7, elbow, wrist, 0.04, 9);
  add("l_wrist", 8, wrist, hand, 0.035, 10);
  add("l_hand", 9, hand, tip, 0.035, -1);
  add("r_collar", 3, mirror({0.03, -0.46, 0}), mirror({0.16, -0.47, 0}), 0.05, -1);
  add("r_shoulder", 11, mirror(shoulder), mirror(elbow), 0.045, 13);
  add("r_elbow", 12, mirror(elbow), mirror(wrist), 0.04, 14);
  add("r_wrist", 13, mirror(wrist), mirror(hand), 0.035, 15);
  add("r_hand", 14, mirror(hand), mirror(tip), 0.035, -1);
  add("l_hip", 0, {0.09, 0.05, 0}, {0.10, 0.46, 0}, 0.07, 17);
  add("l_knee", 16, {0.10, 0.46, 0}, {0.10, 0.86, 0}, 0.055, 18);
  add("l_ankle", 17, {0.10, 0.86, 0}, {0.10, 0.90, -0.06}, 0.04, 19);
  add("l_foot", 18, {0.10, 0.90, -0.06}, {0.10, 0.90, -0.15}, 0.035, -1);
  add("r_hip", 0, {-0.09, 0.05, 0}, {-0.10, 0.46, 0}, 0.07, 21);
  add("r_knee", 20, {-0.10, 0.46, 0}, {-0.10, 0.86, 0}, 0.055, 22);
  add("r_ankle", 21, {-0.10, 0.86, 0}, {-0.10, 0.90, -0.06}, 0.04, 23);
  add("r_foot", 22, {-0.10, 0.90, -0.06}, {-0.10, 0.90, -0.15}, 0.035, -1);
  return b;
}

// Joints are kept in this order as K grows; every prefix is ancestor-closed.
constexpr int kPriority[24] = {0, 1, 2, 4, 7, 12, 16, 20, 8, 13, 17, 21,
                               9, 14, 18, 22, 3, 6, 11, 5, 19, 23, 10, 15};

struct Capsule {
  int joint;  // index into the reduced skeleton
  Eigen::Vector3d start, end;
  double radius;
  int chain_child;  // reduced index of the joint continuing the chain, or -1
};

// Ring-to-ring triangle strip for rings with possibly different counts.
void stitch(const std::vector<int>& a, const std::vector<int>& b,
            std::vector<std::array<int, 3>>& faces) {
  const int na = static_cast<int>(a.size()), nb = static_cast<int>(b.size());
  int i = 0, j = 0;
  while (i < na || j < nb) {
    const double next_a = static_cast<double>(i + 1) / na;
    const double next_b = static_cast<double>(j + 1) / nb;
    if (j == nb || (i < na && next_a <= next_b)) {
      faces.push_back({a[i % na], a[(i + 1) % na], b[j % nb]});
      ++i;
    } else {
      faces.push_back({a[i % na], b[(j + 1) % nb], b[j % nb]});
      ++j;
    }
  }
}

}  // namespace

std::vector<int> skeleton_joint_ids(int joints) {
  if (joints < 1 || joints > 24)
    throw ConfigError("toy body supports 1..24 joints, got " + std::to_string(joints));
  std::vector<int> ids(kPriority, kPriority + joints);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::string skeleton_joint_name(int id) {
  static const auto full = full_skeleton();
  return full.at(id).name;
}

TemplateBody make_toy_body(std::uint64_t seed, const BodyConfig& cfg) {
  const int N = cfg.vertices, K = cfg.joints, B = cfg.betas, P = cfg.parts, D = cfg.down_vertices;
  if (K < 1 || K > 24) throw ConfigError("toy body supports 1..24 joints, got " + std::to_string(K));
  if (N < 4 * K) throw ConfigError("toy body needs at least 4 vertices per joint");
  if (P < 1 || P > K) throw ConfigError("part count must be in 1..joints");
  if (B < 0) throw ConfigError("negative shape basis size");
  if (D < 1 || D > N) throw ConfigError("downsampled vertex count must be in 1..N");

  const auto full = full_skeleton();
  const std::vector<int> full_of = skeleton_joint_ids(K);
  std::vector<bool> kept(24, false);
  std::vector<int> reduced_of(24, -1);
  for (int k = 0; k < K; ++k) {
    kept[full_of[k]] = true;
    reduced_of[full_of[k]] = k;
  }
  auto kept_ancestor = [&](int f) {
    int p = full[f].parent;
    while (p >= 0 && !kept[p]) p = full[p].parent;
    return p;
  };

  TemplateBody body;
  body.config = cfg;
  body.seed = seed;
  body.tree.parent.resize(K);
  for (int k = 0; k < K; ++k) {
    const int a = kept_ancestor(full_of[k]);
    body.tree.parent[k] = a < 0 ? -1 : reduced_of[a];
  }

  // part labels: the first P joints by priority own a label, others inherit
  std::vector<int> part_of(K, 0);
  {
    std::vector<bool> labelled(24, false);
    for (int i = 0; i < P; ++i) labelled[kPriority[i]] = true;
    int next = 1;
    for (int k = 0; k < K; ++k)
      if (labelled[full_of[k]]) part_of[k] = next++;
    for (int k = 0; k < K; ++k)
      if (part_of[k] == 0) part_of[k] = part_of[body.tree.parent[k]];
  }

  std::vector<Capsule> caps;
  for (int k = 0; k < K; ++k) {
    const int f = full_of[k];
    Capsule c{k, full[f].start, full[f].end, full[f].radius, -1};
    int nxt = full[f].cont;
    if (nxt >= 0 && kept[nxt]) c.chain_child = reduced_of[nxt];
    while (nxt >= 0 && !kept[nxt]) {
      c.end = full[nxt].end;
      c.radius = std::max(c.radius, full[nxt].radius);
      nxt = full[nxt].cont;
      if (nxt >= 0 && kept[nxt]) c.chain_child = reduced_of[nxt];
    }
    caps.push_back(c);
  }

  // vertex budget: a floor per capsule, the rest proportional to surface area
  std::vector<int> count(K);
  {
    const int floor_each = std::min(8, N / K);
    std::vector<double> area(K);
    double total = 0;
    for (int k = 0; k < K; ++k) {
      const double len = (caps[k].end - caps[k].start).norm();
      area[k] = 2 * std::numbers::pi * caps[k].radius * len +
                4 * std::numbers::pi * caps[k].radius * caps[k].radius;
      total += area[k];
    }
    const int rest = N - floor_each * K;
    std::vector<std::pair<double, int>> remainders;
    int used = 0;
    for (int k = 0; k < K; ++k) {
      const double share = rest * area[k] / total;
      count[k] = floor_each + static_cast<int>(std::floor(share));
      used += count[k];
      remainders.push_back({share - std::floor(share), k});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    for (int i = 0; used < N; ++i, ++used) ++count[remainders[i % K].second];
  }

  body.template_vertices = Tensor<double>({N, 3});
  body.vertex_uv = Tensor<double>({N, 2});
  body.vertex_parts.assign(N, 0);
  body.skin_weights = Tensor<double>({N, K});
  std::vector<int> owner(N);
  std::vector<double> axial(N);
  int vi = 0;
  for (int k = 0; k < K; ++k) {
    const Capsule& c = caps[k];
    const int n = count[k];
    Eigen::Vector3d axis = c.end - c.start;
    const double len = std::max(axis.norm(), 1e-6);
    axis /= len;
    Eigen::Vector3d e1 = axis.cross(Eigen::Vector3d::UnitZ());
    if (e1.norm() < 1e-6) e1 = axis.cross(Eigen::Vector3d::UnitX());
    e1.normalize();
    const Eigen::Vector3d e2 = axis.cross(e1);
    const double span = len + 2 * c.radius;

    const int poles = n >= 5 ? 2 : 1;
    const int m = n - poles;
    int rings = std::max(1, static_cast<int>(std::lround(
                                std::sqrt(m * len / (2 * std::numbers::pi * c.radius)))));
    rings = std::clamp(rings, 1, std::max(1, m / 3));
    std::vector<std::vector<int>> ring_ids(rings);

    auto emit = [&](const Eigen::Vector3d& p, double u, double t_axis) {
      for (int d = 0; d < 3; ++d) body.template_vertices[vi * 3 + d] = p[d];
      body.vertex_uv[vi * 2] = std::clamp(u, 0.0, 1.0);
      body.vertex_uv[vi * 2 + 1] = std::clamp((t_axis * len + c.radius) / span, 0.0, 1.0);
      body.vertex_parts[vi] = part_of[k];
      owner[vi] = k;
      axial[vi] = std::clamp(t_axis, 0.0, 1.0);
      return vi++;
    };

    const int start_pole = emit(c.start - c.radius * axis, 0.0, -c.radius / len);
    for (int r = 0; r < rings; ++r) {
      const int sz = m / rings + (r < m % rings ? 1 : 0);
      double t = rings == 1 ? (poles == 2 ? 0.5 : 1.0) : static_cast<double>(r) / (rings - 1);
      const Eigen::Vector3d center = c.start + t * len * axis;
      for (int q = 0; q < sz; ++q) {
        const double ang = 2 * std::numbers::pi * q / sz;
        ring_ids[r].push_back(
            emit(center + c.radius * (std::cos(ang) * e1 + std::sin(ang) * e2), double(q) / sz, t));
      }
    }
    for (int q = 0; q < static_cast<int>(ring_ids[0].size()); ++q)
      body.faces.push_back({start_pole, ring_ids[0][q],
                            ring_ids[0][(q + 1) % ring_ids[0].size()]});
    for (int r = 0; r + 1 < rings; ++r) stitch(ring_ids[r], ring_ids[r + 1], body.faces);
    const auto& last = ring_ids.back();
    const int nl = static_cast<int>(last.size());
    if (poles == 2) {
      const int end_pole = emit(c.end + c.radius * axis, 0.0, 1.0 + c.radius / len);
      for (int q = 0; q < nl; ++q) body.faces.push_back({end_pole, last[(q + 1) % nl], last[q]});
    } else {
      for (int q = 1; q + 1 < nl; ++q) body.faces.push_back({last[0], last[q + 1], last[q]});
    }
  }

  // skinning: owner-dominant with quadratic falloff into parent / chain child
  for (int i = 0; i < N; ++i) {
    const int k = owner[i];
    const double t = axial[i];
    const int p = body.tree.parent[k];
    const int ch = caps[k].chain_child;
    const double wp = p >= 0 && t < 0.25 ? 0.45 * std::pow(1.0 - t / 0.25, 2) : 0.0;
    const double wc = ch >= 0 && t > 0.75 ? 0.45 * std::pow((t - 0.75) / 0.25, 2) : 0.0;
    double* row = body.skin_weights.ptr() + static_cast<std::size_t>(i) * K;
    if (p >= 0) row[p] = f32(wp);
    if (ch >= 0) row[ch] = f32(wc);
    row[k] = f32(1.0 - (p >= 0 ? row[p] : 0.0) - (ch >= 0 ? row[ch] : 0.0));
  }

  for (auto& x : body.template_vertices.data) x = f32(x);
  for (auto& x : body.vertex_uv.data) x = f32(x);

  // joint regressor: uniform average of the 8 vertices nearest each joint
  body.joint_regressor = Tensor<double>({K, N});
  const int nearest = std::min(8, N);
  for (int k = 0; k < K; ++k) {
    const Eigen::Vector3d j = full[full_of[k]].pos;
    std::vector<std::pair<double, int>> d(N);
    for (int i = 0; i < N; ++i) {
      const Eigen::Vector3d v(body.template_vertices[i * 3], body.template_vertices[i * 3 + 1],
                              body.template_vertices[i * 3 + 2]);
      d[i] = {(v - j).squaredNorm(), i};
    }
    std::partial_sort(d.begin(), d.begin() + nearest, d.end());
    for (int q = 0; q < nearest; ++q)
      body.joint_regressor[static_cast<std::size_t>(k) * N + d[q].second] = f32(1.0 / nearest);
  }
  // 1/nearest is not exact for every count; put the rounding slack on the first entry
  for (int k = 0; k < K; ++k) {
    double s = 0;
    int first = -1;
    for (int i = 0; i < N; ++i) {
      const double w = body.joint_regressor[static_cast<std::size_t>(k) * N + i];
      if (w != 0.0 && first < 0) first = i;
      s += w;
    }
    body.joint_regressor[static_cast<std::size_t>(k) * N + first] += f32(1.0 - s);
  }

  // smooth random shape directions
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
  body.shape_basis = Tensor<double>({N, 3, B});
  for (int b = 0; b < B; ++b) {
    struct Wave {
      Eigen::Vector3d amp, freq;
      double phase;
    };
    std::vector<Wave> waves(3);
    for (auto& w : waves) {
      w.amp = Eigen::Vector3d(normal(rng), normal(rng), 0.5 * normal(rng)) * 0.012;
      w.freq = Eigen::Vector3d(normal(rng), normal(rng), normal(rng)) * 2.5;
      w.phase = phase(rng);
    }
    for (int i = 0; i < N; ++i) {
      const Eigen::Vector3d v(body.template_vertices[i * 3], body.template_vertices[i * 3 + 1],
                              body.template_vertices[i * 3 + 2]);
      Eigen::Vector3d d = Eigen::Vector3d::Zero();
      if (b == 0) {
        d = Eigen::Vector3d(0, 0.04 * v.y(), 0);  // stature
      } else if (b == 1) {
        const Capsule& c = caps[owner[i]];
        const Eigen::Vector3d ax = (c.end - c.start).normalized();
        Eigen::Vector3d radial = (v - c.start) - (v - c.start).dot(ax) * ax;
        if (radial.norm() > 1e-9) d = 0.015 * radial.normalized();  // girth
      } else {
        for (const auto& w : waves) d += w.amp * std::sin(w.freq.dot(v) + w.phase);
      }
      for (int c = 0; c < 3; ++c)
        body.shape_basis[(static_cast<std::size_t>(i) * 3 + c) * B + b] = f32(d[c]);
    }
  }

  // farthest-point selection; each row averages the pick and its 3 nearest neighbours
  body.downsample = Tensor<double>({D, N});
  {
    auto vert = [&](int i) {
      return Eigen::Vector3d(body.template_vertices[i * 3], body.template_vertices[i * 3 + 1],
                             body.template_vertices[i * 3 + 2]);
    };
    std::vector<double> dist(N, std::numeric_limits<double>::infinity());
    int pick = 0;
    const int group = std::min(4, N);
    for (int r = 0; r < D; ++r) {
      const Eigen::Vector3d pv = vert(pick);
      std::vector<std::pair<double, int>> near(N);
      for (int i = 0; i < N; ++i) {
        const double d2 = (vert(i) - pv).squaredNorm();
        near[i] = {d2, i};
        dist[i] = std::min(dist[i], d2);
      }
      std::partial_sort(near.begin(), near.begin() + group, near.end());
      for (int q = 0; q < group; ++q)
        body.downsample[static_cast<std::size_t>(r) * N + near[q].second] += 1.0 / group;
      pick = static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
    }
  }

  body.validate();
  return body;
}

// ---------------------------------------------------------------------------

namespace {

archive::Record body_record(const TemplateBody& body) {
  const auto& c = body.config;
  archive::Record rec;
  rec.header = {{"kind", "template_body"},
                {"version", kBodyFormatVersion},
                {"seed", body.seed},
                {"vertices", c.vertices},
                {"joints", c.joints},
                {"betas", c.betas},
                {"parts", c.parts},
                {"down_vertices", c.down_vertices},
                {"faces", body.faces.size()}};
  std::vector<std::int32_t> faces;
  for (const auto& f : body.faces) faces.insert(faces.end(), f.begin(), f.end());
  rec.add("parent", archive::i32({c.joints}, std::vector<std::int32_t>(body.tree.parent.begin(),
                                                                        body.tree.parent.end())));
  rec.add("template_vertices", archive::f32_from({c.vertices, 3}, body.template_vertices.data));
  rec.add("faces", archive::i32({static_cast<int>(body.faces.size()), 3}, faces));
  rec.add("skin_weights", archive::f32_from({c.vertices, c.joints}, body.skin_weights.data));
  rec.add("shape_basis", archive::f32_from({c.vertices, 3, c.betas}, body.shape_basis.data));
  rec.add("joint_regressor", archive::f32_from({c.joints, c.vertices}, body.joint_regressor.data));
  rec.add("vertex_parts", archive::i32({c.vertices}, std::vector<std::int32_t>(
                                                         body.vertex_parts.begin(),
                                                         body.vertex_parts.end())));
  rec.add("vertex_uv", archive::f32_from({c.vertices, 2}, body.vertex_uv.data));
  rec.add("downsample", archive::f32_from({c.down_vertices, c.vertices}, body.downsample.data));
  return rec;
}

Tensor<double> to_tensor(const archive::Array& a) {
  const auto v = a.as_f32();
  return Tensor<double>(a.shape, std::vector<double>(v.begin(), v.end()));
}

}  // namespace

void save_body(const TemplateBody& body, const std::filesystem::path& path) {
  archive::write_file(path, body_record(body));
}

TemplateBody load_body(const std::filesystem::path& path) {
  const auto rec = archive::read_file(path);
  const auto& h = rec.header;
  if (h.value("kind", "") != "template_body" || h.value("version", 0) != kBodyFormatVersion)
    throw archive::IoError(path.string() + ": not a template body archive of version " +
                           std::to_string(kBodyFormatVersion));
  TemplateBody b;
  b.seed = h.at("seed").get<std::uint64_t>();
  b.config = {h.at("vertices").get<int>(), h.at("joints").get<int>(), h.at("betas").get<int>(),
              h.at("parts").get<int>(), h.at("down_vertices").get<int>()};
  const auto parent = rec.get("parent").as_i32();
  b.tree.parent.assign(parent.begin(), parent.end());
  b.template_vertices = to_tensor(rec.get("template_vertices"));
  const auto faces = rec.get("faces").as_i32();
  for (std::size_t i = 0; i + 2 < faces.size(); i += 3)
    b.faces.push_back({faces[i], faces[i + 1], faces[i + 2]});
  b.skin_weights = to_tensor(rec.get("skin_weights"));
  b.shape_basis = to_tensor(rec.get("shape_basis"));
  b.joint_regressor = to_tensor(rec.get("joint_regressor"));
  const auto parts = rec.get("vertex_parts").as_i32();
  b.vertex_parts.assign(parts.begin(), parts.end());
  b.vertex_uv = to_tensor(rec.get("vertex_uv"));
  b.downsample = to_tensor(rec.get("downsample"));
  b.validate();
  return b;
}

std::string body_hash(const TemplateBody& body) {
  std::ostringstream os(std::ios::binary);
  archive::write(os, body_record(body));
  const std::string s = os.str();
  return archive::fnv1a_hex(std::vector<std::uint8_t>(s.begin(), s.end()));
}

}  // namespace maf
