#include "maf/encoder.hpp"

namespace maf {

int EncoderConfig::level_size(int level) const {
  int s = image_size >> trunk.size();
  for (int l = 1; l <= level; ++l) s *= 2;
  return s;
}

void EncoderConfig::validate() const {
  if (trunk.empty() || c_s < 1 || levels < 1 || parts < 1)
    throw ConfigError("encoder: empty trunk or non-positive sizes");
  if (iuv_kernel < 1 || iuv_kernel % 2 == 0) throw ConfigError("encoder: IUV head kernel must be odd");
  if (image_size < 1 || image_size % (1 << trunk.size()) != 0)
    throw ConfigError("encoder: image size " + std::to_string(image_size) +
                      " is not divisible by " + std::to_string(1 << trunk.size()));
}

template <class S>
Encoder<S>::Encoder(const EncoderConfig& cfg, std::mt19937_64& rng) : config(cfg) {
  cfg.validate();
  int in = 3;
  for (int c : cfg.trunk) {
    convs.emplace_back(in, c, 3, 2, 1, rng, false);
    conv_bns.emplace_back(c);
    in = c;
  }
  for (int l = 0; l < cfg.levels; ++l) {
    if (l == 0)
      deconvs.emplace_back(in, cfg.c_s, 3, 1, 1, rng, false);
    else
      deconvs.emplace_back(cfg.c_s, cfg.c_s, 4, 2, 1, rng, false);
    deconv_bns.emplace_back(cfg.c_s);
    int src = -1;
    const int size = cfg.level_size(l);
    for (int i = 0; i + 1 < static_cast<int>(cfg.trunk.size()) && cfg.lateral; ++i)
      if (cfg.image_size >> (i + 1) == size) src = i;
    lateral_src.push_back(src);
    laterals.push_back(src < 0 ? nn::Conv2d<S>() : nn::Conv2d<S>(cfg.trunk[src], cfg.c_s, 1, 1, 0, rng, false));
  }
  iuv_head = nn::Conv2d<S>(cfg.c_s, cfg.iuv_channels(), cfg.iuv_kernel, 1, cfg.iuv_kernel / 2, rng, true);
}

template <class S>
typename Encoder<S>::Output Encoder<S>::forward(const Var<S>& images, bool training) {
  const int H = config.image_size;
  if (images.value().rank() != 4 || images.dim(1) != 3 || images.dim(2) != H || images.dim(3) != H)
    throw ConfigError("encoder expects (B,3," + std::to_string(H) + "," + std::to_string(H) +
                      ") images, got " + shape_str(images.shape()));
  Output out;
  Var<S> x = images;
  std::vector<Var<S>> trunk;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    x = ops::relu(conv_bns[i](convs[i](x), training));
    trunk.push_back(x);
  }
  out.deepest = x;
  for (std::size_t i = 0; i < deconvs.size(); ++i) {
    Var<S> y = deconvs[i](x);
    if (lateral_src[i] >= 0) y = ops::add(y, laterals[i](trunk[lateral_src[i]]));
    x = ops::relu(deconv_bns[i](y, training));
    out.pyramid.push_back(x);
  }
  return out;
}

template <class S>
Var<S> Encoder<S>::global_feature(const Output& out) {
  return ops::global_avg_pool(out.deepest);
}

template <class S>
Var<S> Encoder<S>::predict_iuv(const std::vector<Var<S>>& pyramid) const {
  if (pyramid.empty()) throw ConfigError("predict_iuv: empty pyramid");
  return iuv_head(pyramid.back());
}

template <class S>
void Encoder<S>::collect(nn::Registry<S>& reg, const std::string& prefix) {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    convs[i].collect(reg, prefix + "conv" + std::to_string(i));
    conv_bns[i].collect(reg, prefix + "conv_bn" + std::to_string(i));
  }
  for (std::size_t i = 0; i < deconvs.size(); ++i) {
    deconvs[i].collect(reg, prefix + "deconv" + std::to_string(i));
    deconv_bns[i].collect(reg, prefix + "deconv_bn" + std::to_string(i));
    if (lateral_src[i] >= 0) laterals[i].collect(reg, prefix + "lateral" + std::to_string(i));
  }
  iuv_head.collect(reg, prefix + "iuv_head");
}

template struct Encoder<float>;
template struct Encoder<double>;

}  // namespace maf
