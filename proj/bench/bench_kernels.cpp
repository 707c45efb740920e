#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "maf/kernels.hpp"

using namespace maf::kernels;

namespace {

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Second toy trunk block: 32 -> 64 channels, 32x32 -> 16x16.
ConvGeom trunk_block(int batch) { return {batch, 32, 32, 32, 64, 3, 2, 1}; }

// Last toy deconvolution stage: 64 channels, 8x8 -> 16x16.
ConvGeom deconv_stage(int batch) { return {batch, 64, 8, 8, 64, 4, 2, 1}; }

void BM_conv2d_omp(benchmark::State& st) {
  const ConvGeom g = trunk_block(int(st.range(0)));
  const auto x = noise(std::size_t(g.batch) * g.in_channels * g.in_h * g.in_w, 1);
  const auto w = noise(std::size_t(g.out_channels) * g.in_channels * g.kernel * g.kernel, 2);
  const auto b = noise(g.out_channels, 3);
  const std::size_t outn = std::size_t(g.batch) * g.out_channels * g.conv_out_h() * g.conv_out_w();
  std::vector<float> out(outn),
      col(std::size_t(g.in_channels) * g.kernel * g.kernel * g.batch * g.conv_out_h() * g.conv_out_w());
  for (auto _ : st) {
    conv2d_forward(g, x.data(), w.data(), b.data(), out.data(), col.data());
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_conv2d_serial(benchmark::State& st) {
  const ConvGeom g = trunk_block(int(st.range(0)));
  const auto x = noise(std::size_t(g.batch) * g.in_channels * g.in_h * g.in_w, 1);
  const auto w = noise(std::size_t(g.out_channels) * g.in_channels * g.kernel * g.kernel, 2);
  const auto b = noise(g.out_channels, 3);
  std::vector<float> out(std::size_t(g.batch) * g.out_channels * g.conv_out_h() * g.conv_out_w());
  for (auto _ : st) {
    conv2d_reference(g, x.data(), w.data(), b.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_deconv_omp(benchmark::State& st) {
  const ConvGeom g = deconv_stage(int(st.range(0)));
  const auto x = noise(std::size_t(g.batch) * g.in_channels * g.in_h * g.in_w, 4);
  const auto w = noise(std::size_t(g.in_channels) * g.out_channels * g.kernel * g.kernel, 5);
  const auto b = noise(g.out_channels, 6);
  std::vector<float> out(std::size_t(g.batch) * g.out_channels * g.deconv_out_h() * g.deconv_out_w());
  for (auto _ : st) {
    conv_transpose2d_forward(g, x.data(), w.data(), b.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_deconv_serial(benchmark::State& st) {
  const ConvGeom g = deconv_stage(int(st.range(0)));
  const auto x = noise(std::size_t(g.batch) * g.in_channels * g.in_h * g.in_w, 4);
  const auto w = noise(std::size_t(g.in_channels) * g.out_channels * g.kernel * g.kernel, 5);
  const auto b = noise(g.out_channels, 6);
  std::vector<float> out(std::size_t(g.batch) * g.out_channels * g.deconv_out_h() * g.deconv_out_w());
  for (auto _ : st) {
    conv_transpose2d_reference(g, x.data(), w.data(), b.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

// 128 mesh points on a 64-channel 16x16 map.
template <bool Omp>
void BM_bilinear(benchmark::State& st) {
  const int B = int(st.range(0)), C = 64, H = 16, M = 128;
  const auto map = noise(std::size_t(B) * C * H * H, 7);
  const auto pts = noise(std::size_t(B) * M * 2, 8);
  std::vector<float> out(std::size_t(B) * M * C);
  for (auto _ : st) {
    if constexpr (Omp)
      bilinear_forward(B, C, H, H, M, map.data(), pts.data(), out.data());
    else
      bilinear_reference(B, C, H, H, M, map.data(), pts.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_conv2d_omp)->Arg(1)->Arg(16);
BENCHMARK(BM_conv2d_serial)->Arg(1)->Arg(16);
BENCHMARK(BM_deconv_omp)->Arg(1)->Arg(16);
BENCHMARK(BM_deconv_serial)->Arg(1)->Arg(16);
BENCHMARK(BM_bilinear<true>)->Arg(1)->Arg(16);
BENCHMARK(BM_bilinear<false>)->Arg(1)->Arg(16);

BENCHMARK_MAIN();
