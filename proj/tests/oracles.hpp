#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// None of these call into the library code they are compared against.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "maf/tensor.hpp"

namespace oracle {

using maf::Tensor;

/// Four-neighbour bilinear interpolation of map (C,H,W) at normalized (x,y),
/// written directly from the pixel-centre convention with border clamping.
inline std::vector<double> bilinear(const Tensor<double>& map, double x, double y) {
  const int C = map.dim(0), H = map.dim(1), W = map.dim(2);
  double px = (x + 1.0) / 2.0 * W - 0.5;
  double py = (y + 1.0) / 2.0 * H - 0.5;
  px = std::min(std::max(px, 0.0), W - 1.0);
  py = std::min(std::max(py, 0.0), H - 1.0);
  const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
  const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double ax = px - x0, ay = py - y0;
  std::vector<double> out(C);
  for (int c = 0; c < C; ++c) {
    auto at = [&](int yy, int xx) { return map[(static_cast<std::size_t>(c) * H + yy) * W + xx]; };
    out[c] = (1 - ax) * (1 - ay) * at(y0, x0) + ax * (1 - ay) * at(y0, x1) +
             (1 - ax) * ay * at(y1, x0) + ax * ay * at(y1, x1);
  }
  return out;
}

struct Similarity {
  Eigen::Matrix3d R;
  double s;
  Eigen::Vector3d t;
};

/// Horn's unit-quaternion closed form: the optimal rotation is the top
/// eigenvector of a symmetric 4x4 matrix built from the cross-covariance.
inline Similarity horn(const std::vector<Eigen::Vector3d>& X, const std::vector<Eigen::Vector3d>& Y) {
  const std::size_t n = X.size();
  Eigen::Vector3d mx = Eigen::Vector3d::Zero(), my = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mx += X[i];
    my += Y[i];
  }
  mx /= double(n);
  my /= double(n);
  Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
  double xx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d a = X[i] - mx, b = Y[i] - my;
    M += a * b.transpose();
    xx += a.squaredNorm();
  }
  const double Sxx = M(0, 0), Sxy = M(0, 1), Sxz = M(0, 2), Syx = M(1, 0), Syy = M(1, 1),
               Syz = M(1, 2), Szx = M(2, 0), Szy = M(2, 1), Szz = M(2, 2);
  Eigen::Matrix4d N;
  N << Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx,
       Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz,
       Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy,
       Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(N);
  const Eigen::Vector4d q = es.eigenvectors().col(3);
  const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
  Similarity r;
  r.R = quat.normalized().toRotationMatrix();
  double num = 0;
  for (std::size_t i = 0; i < n; ++i) num += (Y[i] - my).dot(r.R * (X[i] - mx));
  r.s = num / xx;
  r.t = my - r.s * r.R * mx;
  return r;
}

/// Pixel-centre point-in-triangle test by solving for barycentrics with a
/// 2x2 linear system. Returns false for degenerate triangles.
inline bool barycentric(const std::array<double, 2>& a, const std::array<double, 2>& b,
                        const std::array<double, 2>& c, double px, double py,
                        std::array<double, 3>& w) {
  Eigen::Matrix2d A;
  A << b[0] - a[0], c[0] - a[0], b[1] - a[1], c[1] - a[1];
  if (std::abs(A.determinant()) < 1e-12) return false;
  const Eigen::Vector2d l = A.partialPivLu().solve(Eigen::Vector2d(px - a[0], py - a[1]));
  w = {1.0 - l[0] - l[1], l[0], l[1]};
  return true;
}

/// Central finite-difference Jacobian-vector check helper: derivative of
/// scalar f at x along coordinate i.
inline double central_diff(const std::function<double(const std::vector<double>&)>& f,
                           std::vector<double> x, std::size_t i, double h = 1e-5) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2 * h);
}

/// Relative error with an absolute floor so tiny gradients do not blow up.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double mse_loop(const std::vector<double>& p, const std::vector<double>& t,
                       const std::vector<double>& w) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (w.empty() ? 1.0 : w[i]) * (p[i] - t[i]) * (p[i] - t[i]);
  return s / double(p.size());
}

inline double smooth_l1(double d) {
  if (std::abs(d) < 1.0) return 0.5 * d * d;
  return std::abs(d) - 0.5;
}

/// Gram-Schmidt written out component-wise.
inline Eigen::Matrix3d rot6d(const double* r) {
  Eigen::Vector3d a(r[0], r[1], r[2]), b(r[3], r[4], r[5]);
  const Eigen::Vector3d c1 = a / a.norm();
  Eigen::Vector3d c2 = b - c1.dot(b) * c1;
  c2 /= c2.norm();
  Eigen::Matrix3d R;
  R.col(0) = c1;
  R.col(1) = c2;
  R.col(2) = c1.cross(c2);
  return R;
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

inline Tensor<double> random_tensor(maf::Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : t.data) x = u(rng);
  return t;
}

}  // namespace oracle
