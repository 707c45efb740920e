#include <doctest.h>

#include <Eigen/Geometry>

#include "maf/metrics.hpp"
#include "oracles.hpp"

using namespace maf;

namespace {

std::vector<Eigen::Vector3d> rows(const Tensor<double>& t) {
  std::vector<Eigen::Vector3d> out;
  for (int i = 0; i < t.dim(0); ++i) out.emplace_back(t[3 * i], t[3 * i + 1], t[3 * i + 2]);
  return out;
}

Tensor<double> transform(const Tensor<double>& X, const Eigen::Matrix3d& R, double s, const Eigen::Vector3d& t) {
  Tensor<double> Y(X.shape);
  for (int i = 0; i < X.dim(0); ++i) {
    const Eigen::Vector3d p = s * R * Eigen::Vector3d(X[3 * i], X[3 * i + 1], X[3 * i + 2]) + t;
    for (int c = 0; c < 3; ++c) Y[3 * i + c] = p(c);
  }
  return Y;
}

double mean_dist(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (int i = 0; i < a.dim(0); ++i)
    s += std::hypot(a[3 * i] - b[3 * i], a[3 * i + 1] - b[3 * i + 1], a[3 * i + 2] - b[3 * i + 2]);
  return s / a.dim(0);
}

}  // namespace

TEST_CASE("procrustes: matches Horn's quaternion solution on random pairs") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto X = oracle::random_tensor({12, 3}, rng);
    const auto Y = oracle::random_tensor({12, 3}, rng);
    const auto got = procrustes_align(X, Y).transform;
    const auto want = oracle::horn(rows(X), rows(Y));
    CHECK((got.rotation - want.R).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(got.scale - want.s) < 1e-9);
    CHECK((got.translation - want.t).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(got.rotation.determinant() - 1.0) < 1e-12);
  }
}

TEST_CASE("procrustes: recovers a known similarity") {
  std::mt19937_64 rng(2);
  const auto X = oracle::random_tensor({16, 3}, rng);
  const Eigen::Matrix3d R0 = oracle::random_rotation(rng);
  const Eigen::Vector3d t(0.3, -1.2, 2.0);
  const auto Y = transform(X, R0, 2.0, t);
  const auto a = procrustes_align(X, Y);
  CHECK((a.transform.rotation - R0).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(std::abs(a.transform.scale - 2.0) < 1e-9);
  CHECK((a.transform.translation - t).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(pa_mpjpe(X, Y) < 1e-6);
}

TEST_CASE("procrustes: the closed form beats perturbed transforms") {
  std::mt19937_64 rng(3);
  const auto X = oracle::random_tensor({10, 3}, rng);
  const auto Y = oracle::random_tensor({10, 3}, rng);
  const auto a = procrustes_align(X, Y);
  auto sq = [&](const Tensor<double>& Z) {
    double s = 0;
    for (std::size_t i = 0; i < Z.size(); ++i) s += (Z[i] - Y[i]) * (Z[i] - Y[i]);
    return s;
  };
  const double best = sq(a.aligned);
  std::normal_distribution<double> n(0, 0.05);
  for (int k = 0; k < 100; ++k) {
    const Eigen::Matrix3d dR =
        Eigen::AngleAxisd(n(rng), Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized()).toRotationMatrix();
    const auto& T = a.transform;
    const auto Z = transform(X, dR * T.rotation, T.scale * (1 + n(rng)),
                             T.translation + Eigen::Vector3d(n(rng), n(rng), n(rng)));
    CHECK(sq(Z) >= best - 1e-12);
  }
}

TEST_CASE("procrustes: degenerate sources raise") {
  Tensor<double> line({5, 3});
  for (int i = 0; i < 5; ++i) line[3 * i] = i;
  std::mt19937_64 rng(4);
  const auto Y = oracle::random_tensor({5, 3}, rng);
  CHECK_THROWS_AS(procrustes_align(line, Y), DegenerateAlignment);
  CHECK_THROWS_AS(procrustes_align(Tensor<double>({5, 3}), Y), DegenerateAlignment);
  CHECK_THROWS_AS(procrustes_align(oracle::random_tensor({2, 3}, rng), oracle::random_tensor({2, 3}, rng)),
                  DegenerateAlignment);
  CHECK_THROWS(procrustes_align(oracle::random_tensor({5, 3}, rng), oracle::random_tensor({4, 3}, rng)));
}

TEST_CASE("mpjpe and pve: units and translation behaviour") {
  std::mt19937_64 rng(5);
  const auto X = oracle::random_tensor({14, 3}, rng);
  const Eigen::Vector3d t(0.1, 0.2, -0.3);
  const auto Y = transform(X, Eigen::Matrix3d::Identity(), 1.0, t);
  CHECK(mpjpe(Y, X) < 1e-9);
  CHECK(std::abs(pve(Y, X) - 1000.0 * t.norm()) < 1e-9);
  auto Z = X;
  Z[3 * 4 + 1] += 0.014;
  CHECK(std::abs(mpjpe(Z, X) - 1000.0 * 0.014 / 14) < 1e-9);
  CHECK(std::abs(pve(Z, X) - 1000.0 * mean_dist(Z, X)) < 1e-9);
  CHECK(mpjpe(X, X) == 0.0);
  CHECK_THROWS(mpjpe(X, X, 14));
}

TEST_CASE("pa_mpjpe: invariant to a similarity of the prediction") {
  std::mt19937_64 rng(6);
  const auto X = oracle::random_tensor({14, 3}, rng);
  const auto G = oracle::random_tensor({14, 3}, rng);
  const double base = pa_mpjpe(X, G);
  std::uniform_real_distribution<double> ls(std::log(0.1), std::log(10.0));
  for (int k = 0; k < 20; ++k) {
    const auto Z = transform(X, oracle::random_rotation(rng), std::exp(ls(rng)),
                             Eigen::Vector3d(oracle::random_tensor({3}, rng).data.data()));
    CHECK(std::abs(pa_mpjpe(Z, G) - base) < 1e-6 * std::max(1.0, base));
  }
}

TEST_CASE("oks: exact, far, and counting oracle for AP") {
  Tensor<double> g({3, 2}, {10, 20, 30, 40, 50, 60});
  const std::vector<double> k(3, 0.08);
  CHECK(oks(g, g, 100.0, k) == 1.0);
  Tensor<double> far = g;
  for (auto& x : far.data) x += 1e4;
  CHECK(oks(far, g, 100.0, k) < 1e-12);
  Tensor<double> one = g;
  one[0] += 3.0;
  const double want = (std::exp(-9.0 / (2 * 100.0 * 0.0064)) + 2.0) / 3.0;
  CHECK(std::abs(oks(one, g, 100.0, k) - want) < 1e-12);
  CHECK(std::abs(oks(one, g, 100.0, k, {0, 1, 1}) - 1.0) < 1e-12);
  CHECK_THROWS(oks(g, g, 0.0, k));

  CHECK(oks_ap(std::vector<double>(7, 1.0)).ap == 1.0);
  CHECK(oks_ap(std::vector<double>(7, 0.0)).ap == 0.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> vals(200);
  for (auto& v : vals) v = u(rng);
  double ap = 0, ap50 = 0, ap75 = 0;
  for (int i = 0; i < 10; ++i) {
    const double thr = 0.5 + 0.05 * i;
    int n = 0;
    for (double v : vals) n += v > thr;
    ap += n / 200.0 / 10.0;
    if (i == 0) ap50 = n / 200.0;
    if (i == 5) ap75 = n / 200.0;
  }
  const auto r = oks_ap(vals);
  CHECK(std::abs(r.ap - ap) < 1e-12);
  CHECK(r.ap50 == ap50);
  CHECK(r.ap75 == ap75);
  CHECK(oks_thresholds().size() == 10u);
  CHECK_THROWS(oks_ap({}));
}

TEST_CASE("segmentation scores: confusion-matrix oracle on random maps") {
  const int P = 4;
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::uint8_t> pred(256), gt(256);
    for (int i = 0; i < 256; ++i) {
      pred[i] = rng() % (P + 1);
      gt[i] = rng() % 3 == 0 ? 0 : rng() % (P + 1);
    }
    long conf[P + 1][P + 1] = {};
    for (int i = 0; i < 256; ++i) ++conf[gt[i]][pred[i]];
    long fb = 0, diag = 0, ftp = 0, ffp = 0, ffn = 0;
    for (int g = 0; g <= P; ++g)
      for (int p = 0; p <= P; ++p) {
        fb += (g > 0) == (p > 0) ? conf[g][p] : 0;
        diag += g == p ? conf[g][p] : 0;
        ftp += g > 0 && p > 0 ? conf[g][p] : 0;
        ffp += g == 0 && p > 0 ? conf[g][p] : 0;
        ffn += g > 0 && p == 0 ? conf[g][p] : 0;
      }
    double pf1 = 0;
    for (int c = 1; c <= P; ++c) {
      long row = 0, col = 0;
      for (int j = 0; j <= P; ++j) {
        row += conf[c][j];
        col += conf[j][c];
      }
      pf1 += row + col == 0 ? 1.0 : 2.0 * conf[c][c] / double(row + col);
    }
    const auto s = seg_scores(pred, gt, P);
    CHECK(std::abs(s.fb_accuracy - fb / 256.0) < 1e-12);
    CHECK(std::abs(s.part_accuracy - diag / 256.0) < 1e-12);
    CHECK(std::abs(s.fb_f1 - 2.0 * ftp / double(2 * ftp + ffp + ffn)) < 1e-12);
    CHECK(std::abs(s.part_f1 - pf1 / P) < 1e-12);
  }
}

TEST_CASE("segmentation scores: perfect maps, absent classes, accumulation") {
  std::vector<std::uint8_t> m{0, 1, 1, 2, 0, 0};
  const auto s = seg_scores(m, m, 5);
  CHECK(s.fb_accuracy == 1.0);
  CHECK(s.part_accuracy == 1.0);
  CHECK(s.fb_f1 == 1.0);
  CHECK(s.part_f1 == 1.0);
  const std::vector<std::uint8_t> bg(6, 0);
  CHECK(seg_scores(bg, bg, 3).fb_f1 == 1.0);
  CHECK_THROWS(seg_scores({4}, {0}, 3));
  CHECK_THROWS(seg_scores({1, 2}, {0}, 3));

  std::mt19937_64 rng(9);
  std::vector<std::uint8_t> a(64), b(64), c(64), d(64);
  for (auto* v : {&a, &b, &c, &d})
    for (auto& x : *v) x = rng() % 4;
  SegCounter acc(3);
  acc.add(a, b);
  acc.add(c, d);
  std::vector<std::uint8_t> ac = a, bd = b;
  ac.insert(ac.end(), c.begin(), c.end());
  bd.insert(bd.end(), d.begin(), d.end());
  const auto joint = seg_scores(ac, bd, 3), split = acc.scores();
  CHECK(joint.fb_accuracy == split.fb_accuracy);
  CHECK(joint.part_f1 == split.part_f1);
}
