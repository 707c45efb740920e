#include "maf/ops.hpp"

#include <algorithm>
#include <cmath>

#include "maf/kernels.hpp"
#include "maf/rotation.hpp"

namespace maf::ops {

namespace {

template <class S>
void accumulate(Node<S>& parent, const Tensor<S>& g) {
  if (!parent.requires_grad) return;
  auto& pg = parent.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
}

template <class S>
Node<S>& parent(Node<S>& out, std::size_t i) {
  return *out.parents[i];
}

}  // namespace

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  expect_shape(b.shape(), a.shape(), "add");
  Tensor<S> v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.value()[i];
  return make_op<S>(std::move(v), {a, b}, [](Node<S>& o) {
    accumulate(parent(o, 0), o.grad);
    accumulate(parent(o, 1), o.grad);
  });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  expect_shape(b.shape(), a.shape(), "sub");
  Tensor<S> v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= b.value()[i];
  return make_op<S>(std::move(v), {a, b}, [](Node<S>& o) {
    accumulate(parent(o, 0), o.grad);
    Node<S>& pb = parent(o, 1);
    if (!pb.requires_grad) return;
    auto& g = pb.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
  });
}

template <class S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> v = a.value();
  for (auto& x : v.data) x *= factor;
  return make_op<S>(std::move(v), {a}, [factor](Node<S>& o) {
    Node<S>& p = parent(o, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * o.grad[i];
  });
}

template <class S>
Var<S> sum_scalars(const std::vector<Var<S>>& xs) {
  S total = 0;
  for (const auto& x : xs) {
    if (x.size() != 1) throw ShapeError("sum_scalars: non-scalar input " + shape_str(x.shape()));
    total += x.value()[0];
  }
  return make_op<S>(Tensor<S>({1}, total), xs, [](Node<S>& o) {
    for (auto& p : o.parents)
      if (p->requires_grad) p->ensure_grad()[0] += o.grad[0];
  });
}

template <class S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor<S> v(std::move(shape), a.value().data);
  return make_op<S>(std::move(v), {a}, [](Node<S>& o) { accumulate(parent(o, 0), o.grad); });
}

template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: no inputs");
  const int rows = xs[0].dim(0);
  int cols = 0;
  for (const auto& x : xs) {
    if (x.value().rank() != 2 || x.dim(0) != rows)
      throw ShapeError("concat_cols: incompatible " + shape_str(x.shape()));
    cols += x.dim(1);
  }
  Tensor<S> v({rows, cols});
  int off = 0;
  for (const auto& x : xs) {
    const int c = x.dim(1);
    for (int r = 0; r < rows; ++r)
      std::copy_n(x.value().ptr() + static_cast<std::size_t>(r) * c, c,
                  v.ptr() + static_cast<std::size_t>(r) * cols + off);
    off += c;
  }
  return make_op<S>(std::move(v), xs, [rows, cols](Node<S>& o) {
    int off = 0;
    for (auto& p : o.parents) {
      const int c = p->value.dim(1);
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < c; ++j)
            g[static_cast<std::size_t>(r) * c + j] += o.grad[static_cast<std::size_t>(r) * cols + off + j];
      }
      off += c;
    }
  });
}

template <class S>
Var<S> slice_cols(const Var<S>& a, int start, int len) {
  if (a.value().rank() != 2 || start < 0 || start + len > a.dim(1))
    throw ShapeError("slice_cols out of range on " + shape_str(a.shape()));
  const int rows = a.dim(0), cols = a.dim(1);
  Tensor<S> v({rows, len});
  for (int r = 0; r < rows; ++r)
    std::copy_n(a.value().ptr() + static_cast<std::size_t>(r) * cols + start, len,
                v.ptr() + static_cast<std::size_t>(r) * len);
  return make_op<S>(std::move(v), {a}, [rows, cols, start, len](Node<S>& o) {
    Node<S>& p = parent(o, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < len; ++j)
        g[static_cast<std::size_t>(r) * cols + start + j] += o.grad[static_cast<std::size_t>(r) * len + j];
  });
}

template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  const int in = w.dim(1), out = w.dim(0);
  if (x.value().rank() != 2 || x.dim(1) != in)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  const int rows = x.dim(0);
  Tensor<S> v({rows, out});
  kernels::linear_forward(rows, in, out, x.value().ptr(), w.value().ptr(),
                          b.defined() ? b.value().ptr() : nullptr, v.ptr());
  std::vector<Var<S>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op<S>(std::move(v), inputs, [rows, in, out](Node<S>& o) {
    Node<S>& px = parent(o, 0);
    Node<S>& pw = parent(o, 1);
    Node<S>* pb = o.parents.size() > 2 ? o.parents[2].get() : nullptr;
    kernels::linear_backward(rows, in, out, px.value.ptr(), pw.value.ptr(), o.grad.ptr(),
                             px.requires_grad ? px.ensure_grad().ptr() : nullptr,
                             pw.requires_grad ? pw.ensure_grad().ptr() : nullptr,
                             pb && pb->requires_grad ? pb->ensure_grad().ptr() : nullptr);
  });
}

template <class S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
  Tensor<S> v = a.value();
  for (auto& x : v.data)
    if (x < 0) x *= slope;
  return make_op<S>(std::move(v), {a}, [slope](Node<S>& o) {
    Node<S>& p = parent(o, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += p.value[i] < 0 ? slope * o.grad[i] : o.grad[i];
  });
}

template <class S>
Var<S> relu(const Var<S>& a) {
  return leaky_relu(a, S(0));
}

template <class S>
Var<S> dropout(const Var<S>& a, double p, bool training, std::mt19937_64& rng) {
  if (!training || p <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  const S inv = S(1.0 / (1.0 - p));
  Tensor<S> mask(a.shape());
  for (auto& m : mask.data) m = keep(rng) ? inv : S(0);
  Tensor<S> v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
  return make_op<S>(std::move(v), {a}, [mask = std::move(mask)](Node<S>& o) {
    Node<S>& p = parent(o, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += mask[i] * o.grad[i];
  });
}

template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int stride, int pad) {
  if (x.value().rank() != 4 || w.value().rank() != 4 || x.dim(1) != w.dim(1) ||
      w.dim(2) != w.dim(3))
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  kernels::ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad};
  const int oh = g.conv_out_h(), ow = g.conv_out_w();
  if (oh < 1 || ow < 1) throw ShapeError("conv2d: empty output");
  Tensor<S> v({g.batch, g.out_channels, oh, ow});
  std::vector<S> col(static_cast<std::size_t>(g.in_channels) * g.kernel * g.kernel * g.batch *
                     oh * ow);
  kernels::conv2d_forward(g, x.value().ptr(), w.value().ptr(),
                          b.defined() ? b.value().ptr() : nullptr, v.ptr(), col.data());
  std::vector<Var<S>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op<S>(std::move(v), inputs, [g, col = std::move(col)](Node<S>& o) {
    Node<S>& px = parent(o, 0);
    Node<S>& pw = parent(o, 1);
    Node<S>* pb = o.parents.size() > 2 ? o.parents[2].get() : nullptr;
    kernels::conv2d_backward(g, col.data(), pw.value.ptr(), o.grad.ptr(),
                             px.requires_grad ? px.ensure_grad().ptr() : nullptr,
                             pw.requires_grad ? pw.ensure_grad().ptr() : nullptr,
                             pb && pb->requires_grad ? pb->ensure_grad().ptr() : nullptr);
  });
}

template <class S>
Var<S> conv_transpose2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int stride, int pad) {
  if (x.value().rank() != 4 || w.value().rank() != 4 || x.dim(1) != w.dim(0) ||
      w.dim(2) != w.dim(3))
    throw ShapeError("conv_transpose2d: input " + shape_str(x.shape()) + " weight " +
                     shape_str(w.shape()));
  kernels::ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(1), w.dim(2), stride, pad};
  const int oh = g.deconv_out_h(), ow = g.deconv_out_w();
  if (oh < 1 || ow < 1) throw ShapeError("conv_transpose2d: empty output");
  Tensor<S> v({g.batch, g.out_channels, oh, ow});
  kernels::conv_transpose2d_forward(g, x.value().ptr(), w.value().ptr(),
                                    b.defined() ? b.value().ptr() : nullptr, v.ptr());
  std::vector<Var<S>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op<S>(std::move(v), inputs, [g](Node<S>& o) {
    Node<S>& px = parent(o, 0);
    Node<S>& pw = parent(o, 1);
    Node<S>* pb = o.parents.size() > 2 ? o.parents[2].get() : nullptr;
    kernels::conv_transpose2d_backward(
        g, px.value.ptr(), pw.value.ptr(), o.grad.ptr(),
        px.requires_grad ? px.ensure_grad().ptr() : nullptr,
        pw.requires_grad ? pw.ensure_grad().ptr() : nullptr,
        pb && pb->requires_grad ? pb->ensure_grad().ptr() : nullptr);
  });
}

template <class S>
Var<S> batch_norm2d(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                    Tensor<S>& running_mean, Tensor<S>& running_var, bool training,
                    double momentum, double eps) {
  if (x.value().rank() != 4) throw ShapeError("batch_norm2d: rank-4 input expected");
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t P = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  expect_shape(gamma.shape(), {C}, "batch_norm2d gamma");
  const double count = static_cast<double>(B) * P;
  std::vector<S> mean(C), invstd(C);
  const Tensor<S>& xv = x.value();
  if (training) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      double s = 0, ss = 0;
      for (int b = 0; b < B; ++b) {
        const S* p = xv.ptr() + (static_cast<std::size_t>(b) * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) s += p[i];
      }
      const double m = s / count;
      for (int b = 0; b < B; ++b) {
        const S* p = xv.ptr() + (static_cast<std::size_t>(b) * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / count;
      mean[c] = S(m);
      invstd[c] = S(1.0 / std::sqrt(var + eps));
      const double unbiased = count > 1 ? ss / (count - 1) : var;
      running_mean[c] = S((1 - momentum) * running_mean[c] + momentum * m);
      running_var[c] = S((1 - momentum) * running_var[c] + momentum * unbiased);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      invstd[c] = S(1.0 / std::sqrt(double(running_var[c]) + eps));
    }
  }
  Tensor<S> xhat(xv.shape), v(xv.shape);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) {
        const S h = (xv[off + i] - mean[c]) * invstd[c];
        xhat[off + i] = h;
        v[off + i] = gamma.value()[c] * h + beta.value()[c];
      }
    }
  return make_op<S>(
      std::move(v), {x, gamma, beta},
      [B, C, P, count, training, invstd = std::move(invstd), xhat = std::move(xhat)](Node<S>& o) {
        Node<S>& px = parent(o, 0);
        Node<S>& pg = parent(o, 1);
        Node<S>& pb = parent(o, 2);
        std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c)
          for (int b = 0; b < B; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
              sum_g[c] += o.grad[off + i];
              sum_gx[c] += o.grad[off + i] * xhat[off + i];
            }
          }
        if (pg.requires_grad)
          for (int c = 0; c < C; ++c) pg.ensure_grad()[c] += S(sum_gx[c]);
        if (pb.requires_grad)
          for (int c = 0; c < C; ++c) pb.ensure_grad()[c] += S(sum_g[c]);
        if (!px.requires_grad) return;
        auto& dx = px.ensure_grad();
        const Tensor<S>& gamma_v = pg.value;
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * P;
            const S k = gamma_v[c] * invstd[c];
            if (training) {
              const S mg = S(sum_g[c] / count), mgx = S(sum_gx[c] / count);
              for (std::size_t i = 0; i < P; ++i)
                dx[off + i] += k * (o.grad[off + i] - mg - xhat[off + i] * mgx);
            } else {
              for (std::size_t i = 0; i < P; ++i) dx[off + i] += k * o.grad[off + i];
            }
          }
      });
}

template <class S>
Var<S> global_avg_pool(const Var<S>& x) {
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t P = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<S> v({B, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const S* p = x.value().ptr() + (static_cast<std::size_t>(b) * C + c) * P;
      S s = 0;
      for (std::size_t i = 0; i < P; ++i) s += p[i];
      v[static_cast<std::size_t>(b) * C + c] = s / S(P);
    }
  return make_op<S>(std::move(v), {x}, [B, C, P](Node<S>& o) {
    Node<S>& p = parent(o, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const S gv = o.grad[static_cast<std::size_t>(b) * C + c] / S(P);
        S* dp = g.ptr() + (static_cast<std::size_t>(b) * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) dp[i] += gv;
      }
  });
}

template <class S>
Var<S> bilinear_sample(const Var<S>& map, const Var<S>& points, bool detach_points) {
  if (map.value().rank() != 4 || points.value().rank() != 3 || points.dim(2) != 2 ||
      points.dim(0) != map.dim(0))
    throw ShapeError("bilinear_sample: map " + shape_str(map.shape()) + " points " +
                     shape_str(points.shape()));
  const int B = map.dim(0), C = map.dim(1), H = map.dim(2), W = map.dim(3), M = points.dim(1);
  Tensor<S> v({B, M, C});
  kernels::bilinear_forward(B, C, H, W, M, map.value().ptr(), points.value().ptr(), v.ptr());
  Var<S> pts = detach_points ? points.detach() : points;
  return make_op<S>(std::move(v), {map, pts}, [B, C, H, W, M](Node<S>& o) {
    Node<S>& pm = parent(o, 0);
    Node<S>& pp = parent(o, 1);
    kernels::bilinear_backward(B, C, H, W, M, pm.value.ptr(), pp.value.ptr(), o.grad.ptr(),
                               pm.requires_grad ? pm.ensure_grad().ptr() : nullptr,
                               pp.requires_grad ? pp.ensure_grad().ptr() : nullptr);
  });
}

template <class S>
Var<S> rot6d_to_rotmat(const Var<S>& x) {
  if (x.shape().empty() || x.shape().back() != 6)
    throw ShapeError("rot6d_to_rotmat: last axis must be 6, got " + shape_str(x.shape()));
  Shape s = x.shape();
  s.back() = 9;
  const std::size_t n = x.size() / 6;
  Tensor<S> v(s);
  for (std::size_t i = 0; i < n; ++i) rot6d_forward(x.value().ptr() + 6 * i, v.ptr() + 9 * i);
  return make_op<S>(std::move(v), {x}, [n](Node<S>& o) {
    Node<S>& p = parent(o, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      rot6d_backward(p.value.ptr() + 6 * i, o.grad.ptr() + 9 * i, g.ptr() + 6 * i);
  });
}

template <class S>
Var<S> left_matmul_const(const Tensor<double>& mat, const Var<S>& x) {
  if (mat.rank() != 2 || x.value().rank() != 3 || x.dim(1) != mat.dim(1) || x.dim(2) != 3)
    throw ShapeError("left_matmul_const: matrix " + shape_str(mat.shape) + " points " +
                     shape_str(x.shape()));
  const int B = x.dim(0), R = mat.dim(0), N = mat.dim(1);
  // rows are sparse in practice (regressors, downsampling); skip zeros
  std::vector<std::vector<std::pair<int, S>>> rows(R);
  for (int r = 0; r < R; ++r)
    for (int n = 0; n < N; ++n) {
      const double w = mat[static_cast<std::size_t>(r) * N + n];
      if (w != 0.0) rows[r].push_back({n, S(w)});
    }
  Tensor<S> v({B, R, 3});
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (int r = 0; r < R; ++r) {
      S acc[3] = {0, 0, 0};
      const S* xb = x.value().ptr() + static_cast<std::size_t>(b) * N * 3;
      for (const auto& [n, w] : rows[r])
        for (int k = 0; k < 3; ++k) acc[k] += w * xb[n * 3 + k];
      for (int k = 0; k < 3; ++k) v[(static_cast<std::size_t>(b) * R + r) * 3 + k] = acc[k];
    }
  return make_op<S>(std::move(v), {x}, [B, R, N, rows = std::move(rows)](Node<S>& o) {
    Node<S>& p = parent(o, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b)
      for (int r = 0; r < R; ++r) {
        const S* go = o.grad.ptr() + (static_cast<std::size_t>(b) * R + r) * 3;
        S* gb = g.ptr() + static_cast<std::size_t>(b) * N * 3;
        for (const auto& [n, w] : rows[r])
          for (int k = 0; k < 3; ++k) gb[n * 3 + k] += w * go[k];
      }
  });
}

template <class S>
Var<S> weak_project(const Var<S>& points, const Var<S>& cam) {
  if (points.value().rank() != 3 || points.dim(2) != 3 || cam.value().rank() != 2 ||
      cam.dim(1) != 3 || cam.dim(0) != points.dim(0))
    throw ShapeError("weak_project: points " + shape_str(points.shape()) + " cam " +
                     shape_str(cam.shape()));
  const int B = points.dim(0), M = points.dim(1);
  Tensor<S> v({B, M, 2});
  for (int b = 0; b < B; ++b) {
    const S s = cam.value()[b * 3], tx = cam.value()[b * 3 + 1], ty = cam.value()[b * 3 + 2];
    for (int m = 0; m < M; ++m) {
      const S* p = points.value().ptr() + (static_cast<std::size_t>(b) * M + m) * 3;
      v[(static_cast<std::size_t>(b) * M + m) * 2] = s * p[0] + tx;
      v[(static_cast<std::size_t>(b) * M + m) * 2 + 1] = s * p[1] + ty;
    }
  }
  return make_op<S>(std::move(v), {points, cam}, [B, M](Node<S>& o) {
    Node<S>& pp = parent(o, 0);
    Node<S>& pc = parent(o, 1);
    for (int b = 0; b < B; ++b) {
      const S s = pc.value[b * 3];
      S ds = 0, dtx = 0, dty = 0;
      for (int m = 0; m < M; ++m) {
        const S* g = o.grad.ptr() + (static_cast<std::size_t>(b) * M + m) * 2;
        const S* p = pp.value.ptr() + (static_cast<std::size_t>(b) * M + m) * 3;
        ds += g[0] * p[0] + g[1] * p[1];
        dtx += g[0];
        dty += g[1];
        if (pp.requires_grad) {
          S* gp = pp.ensure_grad().ptr() + (static_cast<std::size_t>(b) * M + m) * 3;
          gp[0] += s * g[0];
          gp[1] += s * g[1];
        }
      }
      if (pc.requires_grad) {
        auto& gc = pc.ensure_grad();
        gc[b * 3] += ds;
        gc[b * 3 + 1] += dtx;
        gc[b * 3 + 2] += dty;
      }
    }
  });
}

template <class S>
Var<S> weighted_mse(const Var<S>& pred, const Tensor<S>& target, const Tensor<S>& weights) {
  expect_shape(target.shape, pred.shape(), "weighted_mse target");
  const bool has_w = !weights.data.empty();
  if (has_w) expect_shape(weights.shape, pred.shape(), "weighted_mse weights");
  const std::size_t n = pred.size();
  if (n == 0) throw ShapeError("weighted_mse: empty input");
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(pred.value()[i]) - double(target[i]);
    acc += (has_w ? double(weights[i]) : 1.0) * d * d;
  }
  return make_op<S>(Tensor<S>({1}, S(acc / double(n))), {pred},
                    [target, weights, has_w, n](Node<S>& o) {
                      Node<S>& p = parent(o, 0);
                      if (!p.requires_grad) return;
                      auto& g = p.ensure_grad();
                      const S k = S(2) * o.grad[0] / S(n);
                      for (std::size_t i = 0; i < n; ++i)
                        g[i] += k * (has_w ? weights[i] : S(1)) * (p.value[i] - target[i]);
                    });
}

#define MAF_INSTANTIATE(S)                                                                    \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);                                       \
  template Var<S> sub<S>(const Var<S>&, const Var<S>&);                                       \
  template Var<S> scale<S>(const Var<S>&, S);                                                 \
  template Var<S> sum_scalars<S>(const std::vector<Var<S>>&);                                 \
  template Var<S> reshape<S>(const Var<S>&, Shape);                                           \
  template Var<S> concat_cols<S>(const std::vector<Var<S>>&);                                 \
  template Var<S> slice_cols<S>(const Var<S>&, int, int);                                     \
  template Var<S> linear<S>(const Var<S>&, const Var<S>&, const Var<S>&);                     \
  template Var<S> relu<S>(const Var<S>&);                                                     \
  template Var<S> leaky_relu<S>(const Var<S>&, S);                                            \
  template Var<S> dropout<S>(const Var<S>&, double, bool, std::mt19937_64&);                  \
  template Var<S> conv2d<S>(const Var<S>&, const Var<S>&, const Var<S>&, int, int);           \
  template Var<S> conv_transpose2d<S>(const Var<S>&, const Var<S>&, const Var<S>&, int, int); \
  template Var<S> batch_norm2d<S>(const Var<S>&, const Var<S>&, const Var<S>&, Tensor<S>&,    \
                                  Tensor<S>&, bool, double, double);                          \
  template Var<S> global_avg_pool<S>(const Var<S>&);                                          \
  template Var<S> bilinear_sample<S>(const Var<S>&, const Var<S>&, bool);                     \
  template Var<S> rot6d_to_rotmat<S>(const Var<S>&);                                          \
  template Var<S> left_matmul_const<S>(const Tensor<double>&, const Var<S>&);                 \
  template Var<S> weak_project<S>(const Var<S>&, const Var<S>&);                              \
  template Var<S> weighted_mse<S>(const Var<S>&, const Tensor<S>&, const Tensor<S>&);

MAF_INSTANTIATE(float)
MAF_INSTANTIATE(double)
#undef MAF_INSTANTIATE

}  // namespace maf::ops
