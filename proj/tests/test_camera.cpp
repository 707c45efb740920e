#include <doctest.h>

#include "maf/camera.hpp"
#include "maf/ops.hpp"
#include "oracles.hpp"

using namespace maf;

TEST_CASE("project: unit camera drops depth") {
  const auto p = project(Tensor<double>({1, 3}, {0.3, -0.2, 5.0}), {1, 0, 0});
  CHECK(p[0] == 0.3);
  CHECK(p[1] == -0.2);
}

TEST_CASE("project: scale and translation, any depth") {
  for (double z : {-3.0, 0.0, 7.5}) {
    const auto p = project(Tensor<double>({1, 3}, {0.5, 0.5, z}), {2, 0.1, -0.1});
    CHECK(std::abs(p[0] - 1.1) < 1e-15);
    CHECK(std::abs(p[1] - 0.9) < 1e-15);
  }
}

TEST_CASE("project: translation equivariance, affine in t, linear in s") {
  std::mt19937_64 rng(1);
  const auto pts = oracle::random_tensor({20, 3}, rng);
  const CameraParams c{0.8, 0.05, -0.1};
  const auto a = project(pts, c);
  const auto b = project(pts, {0.8, 0.05 + 0.25, -0.1});
  for (int i = 0; i < 20; ++i) {
    CHECK(std::abs(b[i * 2] - a[i * 2] - 0.25) < 1e-15);
    CHECK(b[i * 2 + 1] == a[i * 2 + 1]);
  }
  const auto z = project(pts, {0.0, 0.05, -0.1});
  const auto d = project(pts, {1.6, 0.05, -0.1});
  for (int i = 0; i < 40; ++i) CHECK(std::abs((d[i] - z[i]) - 2 * (a[i] - z[i])) < 1e-12);
}

TEST_CASE("to_pixel convention and inverse") {
  const auto corner = to_pixel(Tensor<double>({1, 2}, {-1, -1}), 56, 56);
  CHECK(corner[0] == -0.5);
  CHECK(corner[1] == -0.5);
  const auto centre = to_pixel(Tensor<double>({1, 2}, {0, 0}), 56, 56);
  CHECK(centre[0] == 27.5);
  CHECK(centre[1] == 27.5);
  const auto wide = to_pixel(Tensor<double>({1, 2}, {1, 1}), 64, 32);
  CHECK(wide[0] == 63.5);
  CHECK(wide[1] == 31.5);

  std::mt19937_64 rng(3);
  const auto pts = oracle::random_tensor({100, 2}, rng, -1.5, 1.5);
  const auto back = from_pixel(to_pixel(pts, 37, 23), 37, 23);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(std::abs(back[i] - pts[i]) <= 1e-7);
}

TEST_CASE("camera validity") {
  CHECK(CameraParams{1, 0, 0}.valid());
  CHECK_FALSE(CameraParams{0, 0, 0}.valid());
  CHECK_FALSE(CameraParams{-1, 0, 0}.valid());
  CHECK_FALSE(CameraParams{1, NAN, 0}.valid());
}

TEST_CASE("gradient: projection w.r.t. camera and points") {
  std::mt19937_64 rng(7);
  const int B = 2, M = 5;
  const auto pts0 = oracle::random_tensor({B, M, 3}, rng);
  const auto cam0 = Tensor<double>({B, 3}, {0.9, 0.1, -0.2, 1.2, -0.05, 0.3});
  const auto seed = oracle::random_tensor({B, M, 2}, rng);

  auto pts = Var<double>::leaf(pts0, true);
  auto cam = Var<double>::leaf(cam0, true);
  backward(ops::weak_project(pts, cam), &seed);

  auto scalar = [&](const std::vector<double>& x) {
    double s = 0;
    for (int b = 0; b < B; ++b)
      for (int m = 0; m < M; ++m) {
        const double* p = x.data() + (b * M + m) * 3;
        const double* c = x.data() + B * M * 3 + b * 3;
        s += seed[(b * M + m) * 2] * (c[0] * p[0] + c[1]) + seed[(b * M + m) * 2 + 1] * (c[0] * p[1] + c[2]);
      }
    return s;
  };
  std::vector<double> x(pts0.data);
  x.insert(x.end(), cam0.data.begin(), cam0.data.end());
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = i < pts0.size() ? pts.grad()[i] : cam.grad()[i - pts0.size()];
    worst = std::max(worst, oracle::rel_err(g, oracle::central_diff(scalar, x, i)));
  }
  CHECK(worst < 1e-3);
}
