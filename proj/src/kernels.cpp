#include "maf/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

namespace maf::kernels {

namespace {

template <class S>
using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapR = Eigen::Map<MatR<S>>;
template <class S>
using CMapR = Eigen::Map<const MatR<S>>;

// im2col for one sample into column block [offset, offset+oh*ow) of a
// (c*k*k) x ld matrix.
template <class S>
void im2col(const S* img, int c, int h, int w, int k, int stride, int pad, int oh, int ow,
            S* col, std::size_t ld, std::size_t offset) {
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        S* row = col + (static_cast<std::size_t>(ch * k + ky) * k + kx) * ld + offset;
        const S* plane = img + static_cast<std::size_t>(ch) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          S* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, S(0));
            continue;
          }
          const S* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : S(0);
          }
        }
      }
}

// Adjoint of im2col: accumulates the column block into img.
template <class S>
void col2im(const S* col, int c, int h, int w, int k, int stride, int pad, int oh, int ow,
            S* img, std::size_t ld, std::size_t offset) {
  for (int ch = 0; ch < c; ++ch) {
    S* plane = img + static_cast<std::size_t>(ch) * h * w;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const S* row = col + (static_cast<std::size_t>(ch * k + ky) * k + kx) * ld + offset;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const S* src = row + static_cast<std::size_t>(oy) * ow;
          S* dst = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
  }
}

// (C x B*P) block matrix <-> NCHW batch
template <class S>
void batch_to_nchw(const S* m, int b, int c, int p, S* out) {
  const std::size_t ld = static_cast<std::size_t>(b) * p;
#pragma omp parallel for collapse(2) schedule(static)
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci) {
      const S* src = m + ci * ld + static_cast<std::size_t>(bi) * p;
      S* dst = out + (static_cast<std::size_t>(bi) * c + ci) * p;
      std::copy(src, src + p, dst);
    }
}

template <class S>
void nchw_to_batch(const S* x, int b, int c, int p, S* m) {
  const std::size_t ld = static_cast<std::size_t>(b) * p;
#pragma omp parallel for collapse(2) schedule(static)
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci) {
      const S* src = x + (static_cast<std::size_t>(bi) * c + ci) * p;
      S* dst = m + ci * ld + static_cast<std::size_t>(bi) * p;
      std::copy(src, src + p, dst);
    }
}

}  // namespace

template <class S>
void conv2d_forward(const ConvGeom& g, const S* x, const S* w, const S* bias, S* out, S* col) {
  const int oh = g.conv_out_h(), ow = g.conv_out_w();
  const int p = oh * ow;
  const int kk = g.in_channels * g.kernel * g.kernel;
  const std::size_t ld = static_cast<std::size_t>(g.batch) * p;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < g.batch; ++b)
    im2col(x + static_cast<std::size_t>(b) * g.in_channels * g.in_h * g.in_w, g.in_channels,
           g.in_h, g.in_w, g.kernel, g.stride, g.pad, oh, ow, col, ld,
           static_cast<std::size_t>(b) * p);
  MatR<S> prod = CMapR<S>(w, g.out_channels, kk) * CMapR<S>(col, kk, ld);
  if (bias)
    for (int c = 0; c < g.out_channels; ++c) prod.row(c).array() += bias[c];
  batch_to_nchw(prod.data(), g.batch, g.out_channels, p, out);
}

template <class S>
void conv2d_backward(const ConvGeom& g, const S* col, const S* w, const S* dout, S* dx, S* dw,
                     S* db) {
  const int oh = g.conv_out_h(), ow = g.conv_out_w();
  const int p = oh * ow;
  const int kk = g.in_channels * g.kernel * g.kernel;
  const std::size_t ld = static_cast<std::size_t>(g.batch) * p;
  MatR<S> dm(g.out_channels, ld);
  nchw_to_batch(dout, g.batch, g.out_channels, p, dm.data());
  if (db)
    for (int c = 0; c < g.out_channels; ++c) db[c] += dm.row(c).sum();
  if (dw) MapR<S>(dw, g.out_channels, kk).noalias() += dm * CMapR<S>(col, kk, ld).transpose();
  if (dx) {
    MatR<S> dcol = CMapR<S>(w, g.out_channels, kk).transpose() * dm;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < g.batch; ++b)
      col2im(dcol.data(), g.in_channels, g.in_h, g.in_w, g.kernel, g.stride, g.pad, oh, ow,
             dx + static_cast<std::size_t>(b) * g.in_channels * g.in_h * g.in_w, ld,
             static_cast<std::size_t>(b) * p);
  }
}

template <class S>
void conv2d_reference(const ConvGeom& g, const S* x, const S* w, const S* bias, S* out) {
  const int oh = g.conv_out_h(), ow = g.conv_out_w();
  for (int b = 0; b < g.batch; ++b)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          S acc = bias ? bias[co] : S(0);
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += w[((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx] *
                       x[((static_cast<std::size_t>(b) * g.in_channels + ci) * g.in_h + iy) *
                             g.in_w +
                         ix];
              }
          out[((static_cast<std::size_t>(b) * g.out_channels + co) * oh + oy) * ow + ox] = acc;
        }
}

template <class S>
void conv_transpose2d_forward(const ConvGeom& g, const S* x, const S* w, const S* bias,
                              S* out) {
  const int oh = g.deconv_out_h(), ow = g.deconv_out_w();
  const int p = g.in_h * g.in_w;
  const int kk = g.out_channels * g.kernel * g.kernel;
  const std::size_t ld = static_cast<std::size_t>(g.batch) * p;
  MatR<S> xm(g.in_channels, ld);
  nchw_to_batch(x, g.batch, g.in_channels, p, xm.data());
  MatR<S> col = CMapR<S>(w, g.in_channels, kk).transpose() * xm;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < g.batch; ++b) {
    S* ob = out + static_cast<std::size_t>(b) * g.out_channels * out_plane;
    for (int c = 0; c < g.out_channels; ++c)
      std::fill(ob + c * out_plane, ob + (c + 1) * out_plane, bias ? bias[c] : S(0));
    col2im(col.data(), g.out_channels, oh, ow, g.kernel, g.stride, g.pad, g.in_h, g.in_w, ob, ld,
           static_cast<std::size_t>(b) * p);
  }
}

template <class S>
void conv_transpose2d_backward(const ConvGeom& g, const S* x, const S* w, const S* dout, S* dx,
                               S* dw, S* db) {
  const int oh = g.deconv_out_h(), ow = g.deconv_out_w();
  const int p = g.in_h * g.in_w;
  const int kk = g.out_channels * g.kernel * g.kernel;
  const std::size_t ld = static_cast<std::size_t>(g.batch) * p;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  if (db)
    for (int c = 0; c < g.out_channels; ++c) {
      S acc = 0;
      for (int b = 0; b < g.batch; ++b) {
        const S* d = dout + (static_cast<std::size_t>(b) * g.out_channels + c) * out_plane;
        for (std::size_t i = 0; i < out_plane; ++i) acc += d[i];
      }
      db[c] += acc;
    }
  MatR<S> dcol(kk, ld);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < g.batch; ++b)
    im2col(dout + static_cast<std::size_t>(b) * g.out_channels * out_plane, g.out_channels, oh,
           ow, g.kernel, g.stride, g.pad, g.in_h, g.in_w, dcol.data(), ld,
           static_cast<std::size_t>(b) * p);
  if (dw) {
    MatR<S> xm(g.in_channels, ld);
    nchw_to_batch(x, g.batch, g.in_channels, p, xm.data());
    MapR<S>(dw, g.in_channels, kk).noalias() += xm * dcol.transpose();
  }
  if (dx) {
    MatR<S> dxm = CMapR<S>(w, g.in_channels, kk) * dcol;
    MatR<S> tmp(g.batch * g.in_channels, p);
    batch_to_nchw(dxm.data(), g.batch, g.in_channels, p, tmp.data());
    const std::size_t n = static_cast<std::size_t>(g.batch) * g.in_channels * p;
    for (std::size_t i = 0; i < n; ++i) dx[i] += tmp.data()[i];
  }
}

template <class S>
void conv_transpose2d_reference(const ConvGeom& g, const S* x, const S* w, const S* bias,
                                S* out) {
  const int oh = g.deconv_out_h(), ow = g.deconv_out_w();
  for (int b = 0; b < g.batch; ++b)
    for (int co = 0; co < g.out_channels; ++co)
      for (int i = 0; i < oh * ow; ++i)
        out[(static_cast<std::size_t>(b) * g.out_channels + co) * oh * ow + i] =
            bias ? bias[co] : S(0);
  // scatter form: input pixel (iy,ix) contributes to output (iy*s-p+ky, ix*s-p+kx)
  for (int b = 0; b < g.batch; ++b)
    for (int ci = 0; ci < g.in_channels; ++ci)
      for (int iy = 0; iy < g.in_h; ++iy)
        for (int ix = 0; ix < g.in_w; ++ix) {
          const S v =
              x[((static_cast<std::size_t>(b) * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
          for (int co = 0; co < g.out_channels; ++co)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int oy = iy * g.stride - g.pad + ky;
                const int ox = ix * g.stride - g.pad + kx;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                out[((static_cast<std::size_t>(b) * g.out_channels + co) * oh + oy) * ow + ox] +=
                    v * w[((ci * g.out_channels + co) * g.kernel + ky) * g.kernel + kx];
              }
        }
}

namespace {

template <class S>
struct Tap {
  int x0, x1, y0, y1;
  S fx, fy;
  bool clamp_x, clamp_y;
};

template <class S>
Tap<S> bilinear_tap(int h, int w, S nx, S ny) {
  Tap<S> t{};
  S px = (nx + S(1)) * S(0.5) * S(w) - S(0.5);
  S py = (ny + S(1)) * S(0.5) * S(h) - S(0.5);
  t.clamp_x = px < S(0) || px > S(w - 1);
  t.clamp_y = py < S(0) || py > S(h - 1);
  px = std::clamp(px, S(0), S(w - 1));
  py = std::clamp(py, S(0), S(h - 1));
  t.x0 = std::min(static_cast<int>(std::floor(px)), std::max(w - 2, 0));
  t.y0 = std::min(static_cast<int>(std::floor(py)), std::max(h - 2, 0));
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.fx = px - S(t.x0);
  t.fy = py - S(t.y0);
  return t;
}

}  // namespace

template <class S>
void bilinear_forward(int batch, int channels, int h, int w, int points, const S* map,
                      const S* pts, S* out) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < batch; ++b)
    for (int m = 0; m < points; ++m) {
      const S* pt = pts + (static_cast<std::size_t>(b) * points + m) * 2;
      const Tap<S> t = bilinear_tap<S>(h, w, pt[0], pt[1]);
      const S w00 = (1 - t.fx) * (1 - t.fy), w01 = t.fx * (1 - t.fy);
      const S w10 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
      const std::size_t i00 = static_cast<std::size_t>(t.y0) * w + t.x0;
      const std::size_t i01 = static_cast<std::size_t>(t.y0) * w + t.x1;
      const std::size_t i10 = static_cast<std::size_t>(t.y1) * w + t.x0;
      const std::size_t i11 = static_cast<std::size_t>(t.y1) * w + t.x1;
      const S* mb = map + static_cast<std::size_t>(b) * channels * plane;
      S* o = out + (static_cast<std::size_t>(b) * points + m) * channels;
      for (int c = 0; c < channels; ++c) {
        const S* pl = mb + c * plane;
        o[c] = w00 * pl[i00] + w01 * pl[i01] + w10 * pl[i10] + w11 * pl[i11];
      }
    }
}

template <class S>
void bilinear_backward(int batch, int channels, int h, int w, int points, const S* map,
                       const S* pts, const S* dout, S* dmap, S* dpts) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  // parallel over batch only: a sample's points scatter into its own map slice
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    const S* mb = map + static_cast<std::size_t>(b) * channels * plane;
    S* dmb = dmap ? dmap + static_cast<std::size_t>(b) * channels * plane : nullptr;
    for (int m = 0; m < points; ++m) {
      const S* pt = pts + (static_cast<std::size_t>(b) * points + m) * 2;
      const Tap<S> t = bilinear_tap<S>(h, w, pt[0], pt[1]);
      const S w00 = (1 - t.fx) * (1 - t.fy), w01 = t.fx * (1 - t.fy);
      const S w10 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
      const std::size_t i00 = static_cast<std::size_t>(t.y0) * w + t.x0;
      const std::size_t i01 = static_cast<std::size_t>(t.y0) * w + t.x1;
      const std::size_t i10 = static_cast<std::size_t>(t.y1) * w + t.x0;
      const std::size_t i11 = static_cast<std::size_t>(t.y1) * w + t.x1;
      const S* g = dout + (static_cast<std::size_t>(b) * points + m) * channels;
      S gx = 0, gy = 0;
      for (int c = 0; c < channels; ++c) {
        const S* pl = mb + c * plane;
        if (dmb) {
          S* dpl = dmb + c * plane;
          dpl[i00] += w00 * g[c];
          dpl[i01] += w01 * g[c];
          dpl[i10] += w10 * g[c];
          dpl[i11] += w11 * g[c];
        }
        gx += g[c] * ((1 - t.fy) * (pl[i01] - pl[i00]) + t.fy * (pl[i11] - pl[i10]));
        gy += g[c] * ((1 - t.fx) * (pl[i10] - pl[i00]) + t.fx * (pl[i11] - pl[i01]));
      }
      if (dpts) {
        S* dp = dpts + (static_cast<std::size_t>(b) * points + m) * 2;
        // d(px)/d(nx) = W/2; zero when clamped to the border
        if (!t.clamp_x && w > 1) dp[0] += gx * S(0.5) * S(w);
        if (!t.clamp_y && h > 1) dp[1] += gy * S(0.5) * S(h);
      }
    }
  }
}

template <class S>
void bilinear_reference(int batch, int channels, int h, int w, int points, const S* map,
                        const S* pts, S* out) {
  for (int b = 0; b < batch; ++b)
    for (int m = 0; m < points; ++m) {
      const S* pt = pts + (static_cast<std::size_t>(b) * points + m) * 2;
      const Tap<S> t = bilinear_tap<S>(h, w, pt[0], pt[1]);
      for (int c = 0; c < channels; ++c) {
        const S* pl = map + (static_cast<std::size_t>(b) * channels + c) * h * w;
        const S top = pl[t.y0 * w + t.x0] + t.fx * (pl[t.y0 * w + t.x1] - pl[t.y0 * w + t.x0]);
        const S bot = pl[t.y1 * w + t.x0] + t.fx * (pl[t.y1 * w + t.x1] - pl[t.y1 * w + t.x0]);
        out[(static_cast<std::size_t>(b) * points + m) * channels + c] = top + t.fy * (bot - top);
      }
    }
}

template <class S>
void linear_forward(int rows, int k, int n, const S* a, const S* b, const S* bias, S* out) {
  MapR<S> o(out, rows, n);
  o.noalias() = CMapR<S>(a, rows, k) * CMapR<S>(b, n, k).transpose();
  if (bias) o.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias, n);
}

template <class S>
void linear_backward(int rows, int k, int n, const S* a, const S* b, const S* dout, S* da,
                     S* db, S* dbias) {
  CMapR<S> d(dout, rows, n);
  if (da) MapR<S>(da, rows, k).noalias() += d * CMapR<S>(b, n, k);
  if (db) MapR<S>(db, n, k).noalias() += d.transpose() * CMapR<S>(a, rows, k);
  if (dbias) Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(dbias, n) += d.colwise().sum();
}

#define MAF_INSTANTIATE(S)                                                                       \
  template void conv2d_forward<S>(const ConvGeom&, const S*, const S*, const S*, S*, S*);        \
  template void conv2d_backward<S>(const ConvGeom&, const S*, const S*, const S*, S*, S*, S*);   \
  template void conv2d_reference<S>(const ConvGeom&, const S*, const S*, const S*, S*);          \
  template void conv_transpose2d_forward<S>(const ConvGeom&, const S*, const S*, const S*, S*);  \
  template void conv_transpose2d_backward<S>(const ConvGeom&, const S*, const S*, const S*, S*,  \
                                             S*, S*);                                            \
  template void conv_transpose2d_reference<S>(const ConvGeom&, const S*, const S*, const S*,     \
                                              S*);                                               \
  template void bilinear_forward<S>(int, int, int, int, int, const S*, const S*, S*);            \
  template void bilinear_backward<S>(int, int, int, int, int, const S*, const S*, const S*, S*,  \
                                     S*);                                                        \
  template void bilinear_reference<S>(int, int, int, int, int, const S*, const S*, S*);          \
  template void linear_forward<S>(int, int, int, const S*, const S*, const S*, S*);              \
  template void linear_backward<S>(int, int, int, const S*, const S*, const S*, S*, S*, S*);

MAF_INSTANTIATE(float)
MAF_INSTANTIATE(double)
#undef MAF_INSTANTIATE

}  // namespace maf::kernels
