#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "maf/archive.hpp"
#include "maf/ops.hpp"

namespace maf::nn {

/// Named views of trainable parameters and non-trainable buffers, in a fixed
/// registration order (serialization and optimizer state follow it).
template <class S>
struct Registry {
  std::vector<std::pair<std::string, Var<S>*>> params;
  std::vector<std::pair<std::string, Tensor<S>*>> buffers;

  std::size_t param_count() const;
  void zero_grad();
};

template <class S>
struct Linear {
  Var<S> w, b;  // (out,in), (out)

  Linear() = default;
  /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
  Linear(int in, int out, std::mt19937_64& rng, bool bias = true);
  Var<S> operator()(const Var<S>& x) const { return ops::linear(x, w, b); }
  int in() const { return w.dim(1); }
  int out() const { return w.dim(0); }
  void zero();
  void collect(Registry<S>& r, const std::string& name);
};

template <class S>
struct Conv2d {
  Var<S> w, b;  // (out,in,k,k)
  int stride = 1, pad = 0;

  Conv2d() = default;
  /// He-normal weights, zero bias.
  Conv2d(int in, int out, int kernel, int stride, int pad, std::mt19937_64& rng, bool bias);
  Var<S> operator()(const Var<S>& x) const { return ops::conv2d(x, w, b, stride, pad); }
  void collect(Registry<S>& r, const std::string& name);
};

template <class S>
struct ConvTranspose2d {
  Var<S> w, b;  // (in,out,k,k)
  int stride = 1, pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(int in, int out, int kernel, int stride, int pad, std::mt19937_64& rng,
                  bool bias);
  Var<S> operator()(const Var<S>& x) const { return ops::conv_transpose2d(x, w, b, stride, pad); }
  void collect(Registry<S>& r, const std::string& name);
};

template <class S>
struct BatchNorm2d {
  Var<S> gamma, beta;
  Tensor<S> running_mean, running_var;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);
  Var<S> operator()(const Var<S>& x, bool training) {
    return ops::batch_norm2d(x, gamma, beta, running_mean, running_var, training);
  }
  void collect(Registry<S>& r, const std::string& name);
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with a fixed step size and no weight decay.
template <class S>
class Adam {
 public:
  Adam(Registry<S>& reg, AdamConfig cfg);
  void step();
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  void save(archive::Record& rec) const;
  void load(const archive::Record& rec);

 private:
  Registry<S>* reg_;
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

/// Parameters and buffers as f32 arrays named "param/<name>" and "buffer/<name>".
template <class S>
void save_weights(const Registry<S>& reg, archive::Record& rec);
/// Shapes must match exactly; missing or extra arrays are errors.
template <class S>
void load_weights(Registry<S>& reg, const archive::Record& rec);

}  // namespace maf::nn
