#include <doctest.h>

#include "maf/kernels.hpp"
#include "maf/nn.hpp"
#include "maf/ops.hpp"
#include "oracles.hpp"

using namespace maf;

namespace {

using Fn = std::function<Var<double>(const std::vector<Var<double>>&)>;

// Worst relative error between backprop and central differences of
// <seed, f(inputs)> over every input entry.
double grad_check(const Fn& f, std::vector<Tensor<double>> inputs, std::uint64_t seed = 1,
                  double h = 1e-5) {
  std::vector<Var<double>> leaves;
  for (auto& t : inputs) leaves.push_back(Var<double>::leaf(t, true));
  const Var<double> out = f(leaves);
  std::mt19937_64 rng(seed);
  const Tensor<double> w = oracle::random_tensor(out.shape(), rng);
  backward(out, &w);

  auto eval = [&](const std::vector<Tensor<double>>& in) {
    NoGradGuard ng;
    std::vector<Var<double>> ls;
    for (const auto& t : in) ls.push_back(Var<double>::leaf(t));
    const auto o = f(ls);
    double s = 0;
    for (std::size_t i = 0; i < o.size(); ++i) s += w[i] * o.value()[i];
    return s;
  };
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto at = [&](double d) {
        auto in = inputs;
        in[k][i] += d;
        return eval(in);
      };
      // five-point stencil
      const double fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
      const double g = leaves[k].has_grad() ? leaves[k].grad()[i] : 0.0;
      worst = std::max(worst, oracle::rel_err(g, fd, 1e-4));
    }
  return worst;
}

Tensor<double> rnd(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  return oracle::random_tensor(std::move(s), rng, lo, hi);
}

}  // namespace

TEST_CASE("gradient: elementwise and shape ops") {
  CHECK(grad_check([](auto& x) { return ops::add(x[0], x[1]); }, {rnd({3, 4}, 1), rnd({3, 4}, 2)}) < 1e-6);
  CHECK(grad_check([](auto& x) { return ops::sub(x[0], x[1]); }, {rnd({3, 4}, 1), rnd({3, 4}, 2)}) < 1e-6);
  CHECK(grad_check([](auto& x) { return ops::scale(x[0], 2.5); }, {rnd({5}, 3)}) < 1e-6);
  CHECK(grad_check([](auto& x) { return ops::reshape(x[0], {6, 2}); }, {rnd({3, 4}, 4)}) < 1e-6);
  CHECK(grad_check([](auto& x) { return ops::concat_cols<double>({x[0], x[1]}); },
                   {rnd({3, 2}, 5), rnd({3, 4}, 6)}) < 1e-6);
  CHECK(grad_check([](auto& x) { return ops::slice_cols(x[0], 1, 3); }, {rnd({3, 5}, 7)}) < 1e-6);
  CHECK(grad_check([](auto& x) { return ops::sum_scalars<double>({x[0], x[1]}); },
                   {rnd({1}, 8), rnd({1}, 9)}) < 1e-6);
  // away from the kink
  CHECK(grad_check([](auto& x) { return ops::relu(x[0]); }, {rnd({20}, 10, 0.1, 1)}) < 1e-6);
  CHECK(grad_check([](auto& x) { return ops::relu(x[0]); }, {rnd({20}, 10, -1, -0.1)}) < 1e-6);
  CHECK(grad_check([](auto& x) { return ops::leaky_relu(x[0], 0.2); }, {rnd({20}, 11, -1, -0.1)}) < 1e-6);
}

TEST_CASE("gradient: linear with and without bias") {
  CHECK(grad_check([](auto& x) { return ops::linear(x[0], x[1], x[2]); },
                   {rnd({4, 6}, 1), rnd({3, 6}, 2), rnd({3}, 3)}) < 1e-6);
  CHECK(grad_check([](auto& x) { return ops::linear(x[0], x[1], Var<double>()); },
                   {rnd({4, 6}, 1), rnd({3, 6}, 2)}) < 1e-6);
}

TEST_CASE("gradient: convolution and transposed convolution") {
  CHECK(grad_check([](auto& x) { return ops::conv2d(x[0], x[1], x[2], 2, 1); },
                   {rnd({2, 3, 7, 7}, 1), rnd({4, 3, 3, 3}, 2), rnd({4}, 3)}) < 1e-5);
  CHECK(grad_check([](auto& x) { return ops::conv2d(x[0], x[1], Var<double>(), 1, 0); },
                   {rnd({1, 2, 5, 5}, 4), rnd({3, 2, 1, 1}, 5)}) < 1e-5);
  CHECK(grad_check([](auto& x) { return ops::conv_transpose2d(x[0], x[1], x[2], 2, 1); },
                   {rnd({2, 3, 3, 3}, 6), rnd({3, 2, 4, 4}, 7), rnd({2}, 8)}) < 1e-5);
}

TEST_CASE("gradient: batch norm in training mode and pooling") {
  Tensor<double> rm({3}), rv({3}, 1.0);
  CHECK(grad_check(
            [&](auto& x) {
              Tensor<double> m = rm, v = rv;
              return ops::batch_norm2d(x[0], x[1], x[2], m, v, true);
            },
            {rnd({2, 3, 4, 4}, 1), rnd({3}, 2, 0.5, 1.5), rnd({3}, 3)}, 1, 1e-3) < 1e-5);
  CHECK(grad_check([](auto& x) { return ops::global_avg_pool(x[0]); }, {rnd({2, 3, 4, 5}, 4)}) < 1e-6);
}

TEST_CASE("gradient: bilinear sampling w.r.t. map and coordinates") {
  // Keep every point at least 1e-3 (normalized) away from pixel-centre grid lines.
  const int H = 6, W = 7;
  Tensor<double> pts = rnd({2, 9, 2}, 5, -0.9, 0.9);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const int ext = i % 2 == 0 ? W : H;
    const double px = (pts[i] + 1) / 2 * ext - 0.5;
    const double frac = px - std::floor(px);
    if (frac < 0.05) pts[i] += 0.1 / ext;
    if (frac > 0.95) pts[i] -= 0.1 / ext;
  }
  CHECK(grad_check([](auto& x) { return ops::bilinear_sample(x[0], x[1]); },
                   {rnd({2, 3, H, W}, 6), pts}) < 1e-5);
  // detached coordinates receive nothing
  auto map = Var<double>::leaf(rnd({1, 2, H, W}, 7), true);
  auto p = Var<double>::leaf(rnd({1, 4, 2}, 8, -0.5, 0.5), true);
  const auto out = ops::bilinear_sample(map, p, true);
  const Tensor<double> ones(out.value().shape, 1.0);
  backward(out, &ones);
  CHECK_FALSE(p.has_grad());
  CHECK(map.has_grad());
}

TEST_CASE("gradient: rotation, projection, matrix products, weighted mse") {
  Tensor<double> r6 = rnd({2, 3, 6}, 1);
  CHECK(grad_check([](auto& x) { return ops::rot6d_to_rotmat(x[0]); }, {r6}) < 1e-5);
  CHECK(grad_check([](auto& x) { return ops::weak_project(x[0], x[1]); },
                   {rnd({2, 5, 3}, 2), rnd({2, 3}, 3, 0.5, 1.5)}) < 1e-6);
  const Tensor<double> M = rnd({4, 6}, 4);
  CHECK(grad_check([&](auto& x) { return ops::left_matmul_const(M, x[0]); }, {rnd({2, 6, 3}, 5)}) < 1e-6);
  const Tensor<double> target = rnd({3, 4}, 6), wts = rnd({3, 4}, 7, 0, 2);
  CHECK(grad_check([&](auto& x) { return ops::weighted_mse(x[0], target, wts); }, {rnd({3, 4}, 8)}) < 1e-6);
}

TEST_CASE("weighted mse matches scalar loop") {
  const Tensor<double> p = rnd({5, 3}, 1), t = rnd({5, 3}, 2), w = rnd({5, 3}, 3, 0, 1);
  const double got = ops::weighted_mse(Var<double>::leaf(p), t, w).value()[0];
  CHECK(std::abs(got - oracle::mse_loop(p.data, t.data, w.data)) <= 1e-12);
  const double plain = ops::weighted_mse(Var<double>::leaf(p), t).value()[0];
  CHECK(std::abs(plain - oracle::mse_loop(p.data, t.data, {})) <= 1e-12);
}

TEST_CASE("dropout: identity at inference, inverted scaling in training") {
  const Tensor<double> x({1000}, 1.0);
  std::mt19937_64 rng(3);
  const auto eval = ops::dropout(Var<double>::leaf(x), 0.5, false, rng);
  CHECK(eval.value().data == x.data);
  const auto tr = ops::dropout(Var<double>::leaf(x), 0.5, true, rng);
  int kept = 0;
  for (double v : tr.value().data) {
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);
}

TEST_CASE("no-grad guard records nothing; retained intermediates keep gradients") {
  auto a = Var<double>::leaf(rnd({3}, 1), true);
  {
    NoGradGuard ng;
    CHECK_FALSE(ops::scale(a, 2.0).requires_grad());
  }
  auto mid = ops::scale(a, 3.0);
  mid.retain_grad();
  auto out = ops::weighted_mse(mid, Tensor<double>({3}));
  backward(out);
  CHECK(mid.has_grad());
  for (int i = 0; i < 3; ++i) CHECK(std::abs(a.grad()[i] - 3 * mid.grad()[i]) < 1e-12);
}

TEST_CASE("kernels: OpenMP paths match serial references") {
  kernels::ConvGeom g{3, 5, 9, 9, 7, 3, 2, 1};
  const auto x = rnd({3, 5, 9, 9}, 1), w = rnd({7, 5, 3, 3}, 2), b = rnd({7}, 3);
  const int Ho = g.conv_out_h(), Wo = g.conv_out_w();
  std::vector<double> out(3 * 7 * Ho * Wo), ref(out.size()), col(5 * 9 * 3 * Ho * Wo);
  kernels::conv2d_forward(g, x.ptr(), w.ptr(), b.ptr(), out.data(), col.data());
  kernels::conv2d_reference(g, x.ptr(), w.ptr(), b.ptr(), ref.data());
  double e = 0;
  for (std::size_t i = 0; i < out.size(); ++i) e = std::max(e, std::abs(out[i] - ref[i]));
  CHECK(e < 1e-12);

  kernels::ConvGeom d{2, 4, 5, 5, 3, 4, 2, 1};
  const auto xd = rnd({2, 4, 5, 5}, 4), wd = rnd({4, 3, 4, 4}, 5), bd = rnd({3}, 6);
  std::vector<double> o2(2 * 3 * d.deconv_out_h() * d.deconv_out_w()), r2(o2.size());
  kernels::conv_transpose2d_forward(d, xd.ptr(), wd.ptr(), bd.ptr(), o2.data());
  kernels::conv_transpose2d_reference(d, xd.ptr(), wd.ptr(), bd.ptr(), r2.data());
  e = 0;
  for (std::size_t i = 0; i < o2.size(); ++i) e = std::max(e, std::abs(o2[i] - r2[i]));
  CHECK(e < 1e-12);

  const auto map = rnd({2, 3, 6, 5}, 7), pts = rnd({2, 11, 2}, 8, -1.3, 1.3);
  std::vector<double> o3(2 * 11 * 3), r3(o3.size());
  kernels::bilinear_forward(2, 3, 6, 5, 11, map.ptr(), pts.ptr(), o3.data());
  kernels::bilinear_reference(2, 3, 6, 5, 11, map.ptr(), pts.ptr(), r3.data());
  e = 0;
  for (std::size_t i = 0; i < o3.size(); ++i) e = std::max(e, std::abs(o3[i] - r3[i]));
  CHECK(e < 1e-12);
}

TEST_CASE("Adam: first step moves every parameter by the step size") {
  nn::Registry<double> reg;
  auto p = Var<double>::leaf(rnd({4}, 1), true);
  reg.params.push_back({"p", &p});
  nn::Adam<double> opt(reg, {0.01, 0.9, 0.999, 1e-8});
  const auto before = p.value().data;
  const Tensor<double> g = rnd({4}, 2);
  p.grad() = g;
  opt.step();
  for (int i = 0; i < 4; ++i)
    CHECK(std::abs((before[i] - p.value()[i]) - 0.01 * g[i] / (std::abs(g[i]) + 1e-8)) < 1e-9);
  CHECK(opt.steps() == 1);
}

TEST_CASE("Adam: matches the textbook update over several steps") {
  nn::Registry<double> reg;
  auto p = Var<double>::leaf(rnd({3}, 3), true);
  reg.params.push_back({"p", &p});
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  nn::Adam<double> opt(reg, {lr, b1, b2, eps});
  std::vector<double> x = p.value().data, m(3, 0), v(3, 0);
  for (int t = 1; t <= 5; ++t) {
    const Tensor<double> g = rnd({3}, 10 + t);
    p.grad() = g;
    opt.step();
    for (int i = 0; i < 3; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      x[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  for (int i = 0; i < 3; ++i) CHECK(std::abs(x[i] - p.value()[i]) < 1e-9);
}
