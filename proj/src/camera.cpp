#include "maf/camera.hpp"

#include <cmath>

namespace maf {

bool CameraParams::valid() const {
  return std::isfinite(scale) && std::isfinite(tx) && std::isfinite(ty) && scale > 0.0;
}

Tensor<double> project(const Tensor<double>& points, const CameraParams& cam) {
  if (points.rank() != 2 || points.dim(1) != 3)
    throw ShapeError("project: expected (M,3) points, got " + shape_str(points.shape));
  const int m = points.dim(0);
  Tensor<double> out({m, 2});
  for (int i = 0; i < m; ++i) {
    out[2 * i] = cam.scale * points[3 * i] + cam.tx;
    out[2 * i + 1] = cam.scale * points[3 * i + 1] + cam.ty;
  }
  return out;
}

namespace {

Tensor<double> map2d(const Tensor<double>& pts, int width, int height, double (*f)(double, int)) {
  if (width < 1 || height < 1) throw ConfigError("pixel grid must be at least 1x1");
  if (pts.rank() != 2 || pts.dim(1) != 2)
    throw ShapeError("expected (M,2) points, got " + shape_str(pts.shape));
  Tensor<double> out(pts.shape);
  for (int i = 0; i < pts.dim(0); ++i) {
    out[2 * i] = f(pts[2 * i], width);
    out[2 * i + 1] = f(pts[2 * i + 1], height);
  }
  return out;
}

}  // namespace

Tensor<double> to_pixel(const Tensor<double>& points2d, int width, int height) {
  return map2d(points2d, width, height, &to_pixel_coord);
}

Tensor<double> from_pixel(const Tensor<double>& pixels, int width, int height) {
  return map2d(pixels, width, height, &from_pixel_coord);
}

}  // namespace maf
