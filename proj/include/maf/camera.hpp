#pragma once

#include "maf/tensor.hpp"

namespace maf {

/// Weak-perspective camera: image = scale * (x, y) + (tx, ty), in normalized
/// coordinates where the image spans [-1,1]^2 (y pointing down).
struct CameraParams {
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;

  bool valid() const;
};

/// points (M,3) -> (M,2)
Tensor<double> project(const Tensor<double>& points, const CameraParams& cam);

/// Normalized [-1,1] -> pixel-center coordinates: (x+1)/2*width - 0.5. No clamping.
Tensor<double> to_pixel(const Tensor<double>& points2d, int width, int height);
Tensor<double> from_pixel(const Tensor<double>& pixels, int width, int height);

inline double to_pixel_coord(double x, int extent) { return (x + 1.0) * 0.5 * extent - 0.5; }
inline double from_pixel_coord(double p, int extent) { return (p + 0.5) / extent * 2.0 - 1.0; }

}  // namespace maf
