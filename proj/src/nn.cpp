#include "maf/nn.hpp"

#include <cmath>

namespace maf::nn {

namespace {

template <class S>
Var<S> param(Shape shape) {
  return Var<S>::leaf(Tensor<S>(std::move(shape)), true);
}

template <class S>
void fill_uniform(Tensor<S>& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-bound, bound);
  for (auto& x : t.data) x = S(d(rng));
}

template <class S>
void fill_normal(Tensor<S>& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  for (auto& x : t.data) x = S(d(rng));
}

template <class S>
archive::Array to_array(const Tensor<S>& t) {
  return archive::f32(t.shape, std::vector<float>(t.data.begin(), t.data.end()));
}

template <class S>
void from_array(Tensor<S>& t, const archive::Array& a, const std::string& name) {
  if (a.shape != t.shape)
    throw archive::IoError("weight '" + name + "' has shape " + shape_str(a.shape) +
                           ", model expects " + shape_str(t.shape));
  const auto v = a.as_f32();
  t.data.assign(v.begin(), v.end());
}

}  // namespace

template <class S>
std::size_t Registry<S>::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params) n += p->size();
  return n;
}

template <class S>
void Registry<S>::zero_grad() {
  for (auto& [name, p] : params) p->zero_grad();
}

template <class S>
Linear<S>::Linear(int in, int out, std::mt19937_64& rng, bool bias) {
  w = param<S>({out, in});
  fill_uniform(w.mutable_value(), 1.0 / std::sqrt(double(in)), rng);
  if (bias) {
    b = param<S>({out});
    fill_uniform(b.mutable_value(), 1.0 / std::sqrt(double(in)), rng);
  }
}

template <class S>
void Linear<S>::zero() {
  w.mutable_value().fill(S(0));
  if (b.defined()) b.mutable_value().fill(S(0));
}

template <class S>
void Linear<S>::collect(Registry<S>& r, const std::string& name) {
  r.params.push_back({name + ".w", &w});
  if (b.defined()) r.params.push_back({name + ".b", &b});
}

template <class S>
Conv2d<S>::Conv2d(int in, int out, int kernel, int stride_, int pad_, std::mt19937_64& rng,
                  bool bias)
    : stride(stride_), pad(pad_) {
  w = param<S>({out, in, kernel, kernel});
  fill_normal(w.mutable_value(), std::sqrt(2.0 / (in * kernel * kernel)), rng);
  if (bias) b = param<S>({out});
}

template <class S>
void Conv2d<S>::collect(Registry<S>& r, const std::string& name) {
  r.params.push_back({name + ".w", &w});
  if (b.defined()) r.params.push_back({name + ".b", &b});
}

template <class S>
ConvTranspose2d<S>::ConvTranspose2d(int in, int out, int kernel, int stride_, int pad_,
                                    std::mt19937_64& rng, bool bias)
    : stride(stride_), pad(pad_) {
  w = param<S>({in, out, kernel, kernel});
  // fan-in of each output pixel is in * (kernel/stride)^2 on average
  const double fan = in * double(kernel * kernel) / (stride * stride);
  fill_normal(w.mutable_value(), std::sqrt(2.0 / fan), rng);
  if (bias) b = param<S>({out});
}

template <class S>
void ConvTranspose2d<S>::collect(Registry<S>& r, const std::string& name) {
  r.params.push_back({name + ".w", &w});
  if (b.defined()) r.params.push_back({name + ".b", &b});
}

template <class S>
BatchNorm2d<S>::BatchNorm2d(int channels)
    : gamma(Var<S>::leaf(Tensor<S>({channels}, S(1)), true)),
      beta(param<S>({channels})),
      running_mean({channels}, S(0)),
      running_var({channels}, S(1)) {}

template <class S>
void BatchNorm2d<S>::collect(Registry<S>& r, const std::string& name) {
  r.params.push_back({name + ".gamma", &gamma});
  r.params.push_back({name + ".beta", &beta});
  r.buffers.push_back({name + ".running_mean", &running_mean});
  r.buffers.push_back({name + ".running_var", &running_var});
}

template <class S>
Adam<S>::Adam(Registry<S>& reg, AdamConfig cfg) : reg_(&reg), cfg_(cfg) {
  if (!(cfg.lr > 0) || cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1 ||
      !(cfg.eps > 0))
    throw ConfigError("invalid Adam settings");
  for (auto& [name, p] : reg.params) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

template <class S>
void Adam<S>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  const S b1 = S(cfg_.beta1), b2 = S(cfg_.beta2);
  const S lr_t = S(cfg_.lr * std::sqrt(c2) / c1);
  const S eps_t = S(cfg_.eps * std::sqrt(c2));
  for (std::size_t i = 0; i < reg_->params.size(); ++i) {
    Var<S>& p = *reg_->params[i].second;
    if (!p.has_grad()) continue;
    const Tensor<S>& g = p.grad();
    Tensor<S>& val = p.mutable_value();
    S* m = m_[i].ptr();
    S* v = v_[i].ptr();
    const std::size_t n = val.size();
#pragma omp simd
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (S(1) - b1) * g[j];
      v[j] = b2 * v[j] + (S(1) - b2) * g[j] * g[j];
      val[j] -= lr_t * m[j] / (std::sqrt(v[j]) + eps_t);
    }
  }
}

template <class S>
void Adam<S>::save(archive::Record& rec) const {
  rec.header["adam"] = {{"t", t_}, {"lr", cfg_.lr}, {"beta1", cfg_.beta1},
                        {"beta2", cfg_.beta2}, {"eps", cfg_.eps}};
  for (std::size_t i = 0; i < m_.size(); ++i) {
    rec.add("adam_m/" + reg_->params[i].first, to_array(m_[i]));
    rec.add("adam_v/" + reg_->params[i].first, to_array(v_[i]));
  }
}

template <class S>
void Adam<S>::load(const archive::Record& rec) {
  t_ = rec.header.at("adam").at("t").get<long>();
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const auto& name = reg_->params[i].first;
    from_array(m_[i], rec.get("adam_m/" + name), name);
    from_array(v_[i], rec.get("adam_v/" + name), name);
  }
}

template <class S>
void save_weights(const Registry<S>& reg, archive::Record& rec) {
  for (const auto& [name, p] : reg.params) rec.add("param/" + name, to_array(p->value()));
  for (const auto& [name, t] : reg.buffers) rec.add("buffer/" + name, to_array(*t));
}

template <class S>
void load_weights(Registry<S>& reg, const archive::Record& rec) {
  std::size_t expected = 0;
  for (auto& [name, p] : reg.params) {
    from_array(p->mutable_value(), rec.get("param/" + name), name);
    ++expected;
  }
  for (auto& [name, t] : reg.buffers) {
    from_array(*t, rec.get("buffer/" + name), name);
    ++expected;
  }
  std::size_t present = 0;
  for (const auto& [name, a] : rec.arrays)
    if (name.starts_with("param/") || name.starts_with("buffer/")) ++present;
  if (present != expected)
    throw archive::IoError("checkpoint holds " + std::to_string(present) +
                           " weight arrays, model has " + std::to_string(expected));
}

#define MAF_INSTANTIATE(S)                                                   \
  template struct Registry<S>;                                               \
  template struct Linear<S>;                                                 \
  template struct Conv2d<S>;                                                 \
  template struct ConvTranspose2d<S>;                                        \
  template struct BatchNorm2d<S>;                                            \
  template class Adam<S>;                                                    \
  template void save_weights<S>(const Registry<S>&, archive::Record&);       \
  template void load_weights<S>(Registry<S>&, const archive::Record&);

MAF_INSTANTIATE(float)
MAF_INSTANTIATE(double)
#undef MAF_INSTANTIATE

}  // namespace maf::nn
