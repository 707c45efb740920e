#include "maf/metrics.hpp"

#include <cmath>

#include <Eigen/LU>
#include <Eigen/SVD>

namespace maf {

namespace {

void check_points(const Tensor<double>& a, const Tensor<double>& b, const char* what) {
  if (a.rank() != 2 || a.dim(1) != 3 || a.shape != b.shape)
    throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape) + " are not matching (N,3)");
}

Eigen::Matrix<double, Eigen::Dynamic, 3> as_matrix(const Tensor<double>& t) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> m(t.dim(0), 3);
  for (int i = 0; i < t.dim(0); ++i)
    for (int c = 0; c < 3; ++c) m(i, c) = t[3 * i + c];
  return m;
}

double mean_distance(const Tensor<double>& a, const Tensor<double>& b) {
  const int n = a.dim(0);
  if (n == 0) throw ShapeError("metric over zero points");
  double s = 0;
  for (int i = 0; i < n; ++i) {
    const double dx = a[3 * i] - b[3 * i], dy = a[3 * i + 1] - b[3 * i + 1],
                 dz = a[3 * i + 2] - b[3 * i + 2];
    s += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return s / n;
}

}  // namespace

Alignment procrustes_align(const Tensor<double>& X, const Tensor<double>& Y) {
  check_points(X, Y, "procrustes_align");
  if (X.dim(0) < 3) throw DegenerateAlignment("procrustes_align needs at least 3 points");
  const auto x = as_matrix(X), y = as_matrix(Y);
  const Eigen::RowVector3d mx = x.colwise().mean(), my = y.colwise().mean();
  const Eigen::MatrixXd x0 = x.rowwise() - mx, y0 = y.rowwise() - my;
  const Eigen::Vector3d sx = Eigen::JacobiSVD<Eigen::MatrixXd>(x0).singularValues();
  if (!(sx(0) > 0) || sx(1) <= 1e-12 * sx(0))
    throw DegenerateAlignment("procrustes_align: source points are collinear or coincident");
  const Eigen::Matrix3d cov = x0.transpose() * y0;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d Z = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) Z(2, 2) = -1;
  Alignment a;
  a.transform.rotation = svd.matrixV() * Z * svd.matrixU().transpose();
  a.transform.scale = (svd.singularValues().asDiagonal() * Z).trace() / x0.squaredNorm();
  a.transform.translation = my.transpose() - a.transform.scale * a.transform.rotation * mx.transpose();
  a.aligned = Tensor<double>(X.shape);
  for (int i = 0; i < X.dim(0); ++i) {
    const Eigen::Vector3d p = a.transform.apply(x.row(i).transpose());
    for (int c = 0; c < 3; ++c) a.aligned[3 * i + c] = p(c);
  }
  return a;
}

double mpjpe(const Tensor<double>& pred, const Tensor<double>& gt, int root) {
  check_points(pred, gt, "mpjpe");
  if (root < 0 || root >= pred.dim(0)) throw ConfigError("mpjpe: root index out of range");
  Tensor<double> a = pred, b = gt;
  for (int i = 0; i < a.dim(0); ++i)
    for (int c = 0; c < 3; ++c) {
      a[3 * i + c] -= pred[3 * root + c];
      b[3 * i + c] -= gt[3 * root + c];
    }
  return kMillimetersPerMeter * mean_distance(a, b);
}

double pa_mpjpe(const Tensor<double>& pred, const Tensor<double>& gt) {
  check_points(pred, gt, "pa_mpjpe");
  return kMillimetersPerMeter * mean_distance(procrustes_align(pred, gt).aligned, gt);
}

double pve(const Tensor<double>& pred, const Tensor<double>& gt) {
  check_points(pred, gt, "pve");
  return kMillimetersPerMeter * mean_distance(pred, gt);
}

double oks(const Tensor<double>& pred, const Tensor<double>& gt, double area,
           const std::vector<double>& kappa, const std::vector<double>& visibility) {
  if (pred.rank() != 2 || pred.dim(1) != 2 || pred.shape != gt.shape)
    throw ShapeError("oks: keypoints must be matching (K,2)");
  const int K = pred.dim(0);
  if (static_cast<int>(kappa.size()) != K) throw ConfigError("oks: kappa length mismatch");
  if (!visibility.empty() && static_cast<int>(visibility.size()) != K)
    throw ConfigError("oks: visibility length mismatch");
  if (!(area > 0)) throw ConfigError("oks: area must be positive");
  double num = 0, den = 0;
  for (int i = 0; i < K; ++i) {
    const double v = visibility.empty() ? 1.0 : visibility[i];
    const double dx = pred[2 * i] - gt[2 * i], dy = pred[2 * i + 1] - gt[2 * i + 1];
    num += v * std::exp(-(dx * dx + dy * dy) / (2.0 * area * kappa[i] * kappa[i]));
    den += v;
  }
  if (den <= 0) throw ConfigError("oks: no visible keypoints");
  return num / den;
}

std::vector<double> oks_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

ApResult oks_ap(const std::vector<double>& oks_values) {
  if (oks_values.empty()) throw ConfigError("oks_ap: empty sample set");
  auto frac = [&](double thr) {
    long n = 0;
    for (double o : oks_values) n += o > thr;
    return double(n) / oks_values.size();
  };
  ApResult r;
  const auto thr = oks_thresholds();
  for (double t : thr) r.ap += frac(t);
  r.ap /= thr.size();
  r.ap50 = frac(thr.front());
  r.ap75 = frac(thr[5]);
  return r;
}

SegCounter::SegCounter(int parts)
    : parts_(parts), tp_(parts + 1, 0), fp_(parts + 1, 0), fn_(parts + 1, 0) {
  if (parts < 1) throw ConfigError("SegCounter: need at least one part");
}

void SegCounter::add(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
  if (pred.size() != gt.size()) throw ShapeError("seg_scores: label maps differ in size");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p > parts_ || g > parts_) throw ConfigError("seg_scores: label above part count");
    ++pixels_;
    fb_match_ += (p > 0) == (g > 0);
    part_match_ += p == g;
    // class 0 here is foreground
    if (p > 0 && g > 0) ++tp_[0];
    if (p > 0 && g == 0) ++fp_[0];
    if (p == 0 && g > 0) ++fn_[0];
    if (p == g && p > 0) ++tp_[p];
    if (p != g) {
      if (p > 0) ++fp_[p];
      if (g > 0) ++fn_[g];
    }
  }
}

SegScores SegCounter::scores() const {
  auto f1 = [&](int c) {
    const long denom = 2 * tp_[c] + fp_[c] + fn_[c];
    return denom == 0 ? 1.0 : 2.0 * tp_[c] / denom;
  };
  SegScores s;
  s.fb_accuracy = pixels_ ? double(fb_match_) / pixels_ : 1.0;
  s.part_accuracy = pixels_ ? double(part_match_) / pixels_ : 1.0;
  s.fb_f1 = f1(0);
  for (int c = 1; c <= parts_; ++c) s.part_f1 += f1(c);
  s.part_f1 /= parts_;
  return s;
}

SegScores seg_scores(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                     int parts) {
  SegCounter c(parts);
  c.add(pred, gt);
  return c.scores();
}

}  // namespace maf
