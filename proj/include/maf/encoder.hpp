#pragma once

#include <random>
#include <vector>

#include "maf/nn.hpp"

namespace maf {

struct EncoderConfig {
  int image_size = 64;
  std::vector<int> trunk{32, 64, 128, 256};  // stride-2 conv blocks; the last sets C_g
  int c_s = 64;
  int levels = 3;  // transposed-conv stages, one pyramid map each
  int parts = 12;
  bool lateral = true;  // 1x1 trunk projections added into same-size deconv stages
  int iuv_kernel = 1;   // odd kernel of the single IUV head convolution

  static EncoderConfig toy(int parts = 12) { return {64, {32, 64, 128, 256}, 64, 3, parts}; }
  static EncoderConfig paper(int parts = 24) { return {224, {64, 256, 512, 2048}, 256, 3, parts}; }
  int global_dim() const { return trunk.back(); }
  int iuv_channels() const { return parts + 1 + 2; }
  /// Side length of pyramid map `level` (0 = coarsest).
  int level_size(int level) const;
  void validate() const;
};

/// Strided conv trunk to 1/2^k resolution, then transposed-conv stages each
/// doubling resolution except the first. Every block is conv + BN + ReLU. With
/// `lateral`, a stage whose size matches an earlier trunk map adds a 1x1
/// projection of that map before its BN.
template <class S>
struct Encoder {
  struct Output {
    std::vector<Var<S>> pyramid;  // coarse to fine, each (B,C_s,h,h)
    Var<S> deepest;               // trunk output (B,C_g,h0,h0)
  };

  EncoderConfig config;
  std::vector<nn::Conv2d<S>> convs;
  std::vector<nn::BatchNorm2d<S>> conv_bns;
  std::vector<nn::ConvTranspose2d<S>> deconvs;
  std::vector<nn::BatchNorm2d<S>> deconv_bns;
  std::vector<nn::Conv2d<S>> laterals;  // per deconv stage, empty when no trunk map matches
  std::vector<int> lateral_src;         // trunk block feeding each stage, -1 for none
  nn::Conv2d<S> iuv_head;  // on the finest map, size preserving

  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::mt19937_64& rng);

  /// images (B,3,H,W) with H = W = image_size.
  Output forward(const Var<S>& images, bool training);
  /// Spatial mean of the deepest trunk map: (B,C_g).
  static Var<S> global_feature(const Output& out);
  /// (B, parts+1+2, h, h) on the finest pyramid map: class logits, then U, V.
  Var<S> predict_iuv(const std::vector<Var<S>>& pyramid) const;

  void collect(nn::Registry<S>& reg, const std::string& prefix);
};

}  // namespace maf
