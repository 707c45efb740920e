#pragma once

// Data-parallel numeric kernels. Each hot kernel has an OpenMP version used by
// the model and a plain serial reference kept for tests and benchmarks.
// All tensors are NCHW, row-major.

#include <cstddef>
#include <span>

namespace maf::kernels {

struct ConvGeom {
  int batch = 1;
  int in_channels = 1;
  int in_h = 1, in_w = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  int conv_out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int conv_out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int deconv_out_h() const { return (in_h - 1) * stride - 2 * pad + kernel; }
  int deconv_out_w() const { return (in_w - 1) * stride - 2 * pad + kernel; }
};

// --- convolution, weights (Cout, Cin, k, k) -------------------------------

/// `col` receives the batched im2col buffer (Cin*k*k) x (B*Ho*Wo), kept for backward.
template <class S>
void conv2d_forward(const ConvGeom& g, const S* x, const S* w, const S* bias, S* out, S* col);
template <class S>
void conv2d_backward(const ConvGeom& g, const S* col, const S* w, const S* dout, S* dx, S* dw,
                     S* db);
template <class S>
void conv2d_reference(const ConvGeom& g, const S* x, const S* w, const S* bias, S* out);

// --- transposed convolution, weights (Cin, Cout, k, k) ---------------------

template <class S>
void conv_transpose2d_forward(const ConvGeom& g, const S* x, const S* w, const S* bias, S* out);
template <class S>
void conv_transpose2d_backward(const ConvGeom& g, const S* x, const S* w, const S* dout, S* dx,
                               S* dw, S* db);
template <class S>
void conv_transpose2d_reference(const ConvGeom& g, const S* x, const S* w, const S* bias,
                                S* out);

// --- bilinear sampling -----------------------------------------------------
// Points are normalized to [-1,1]^2 over the map, pixel-center convention
// (x_pix = (x+1)/2*W - 0.5), border clamped.

template <class S>
void bilinear_forward(int batch, int channels, int h, int w, int points, const S* map,
                      const S* pts, S* out);
/// dmap / dpts may be null when not needed. Accumulates.
template <class S>
void bilinear_backward(int batch, int channels, int h, int w, int points, const S* map,
                       const S* pts, const S* dout, S* dmap, S* dpts);
template <class S>
void bilinear_reference(int batch, int channels, int h, int w, int points, const S* map,
                        const S* pts, S* out);

// --- dense products --------------------------------------------------------

/// out (rows x n) = a (rows x k) * b^T where b is (n x k), plus optional bias[n].
template <class S>
void linear_forward(int rows, int k, int n, const S* a, const S* b, const S* bias, S* out);
template <class S>
void linear_backward(int rows, int k, int n, const S* a, const S* b, const S* dout, S* da,
                     S* db, S* dbias);

}  // namespace maf::kernels
