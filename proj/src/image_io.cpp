#include "maf/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "maf/archive.hpp"

namespace maf {

namespace {

std::uint8_t to_byte(float x) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0f, 1.0f) * 255.0f));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw archive::IoError("cannot open for writing: " + path.string());
  return os;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("write_ppm: expected (3,H,W), got " + shape_str(image.shape));
  const int H = image.dim(1), W = image.dim(2);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<std::uint8_t> px(plane * 3);
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) px[p * 3 + c] = to_byte(image[c * plane + p]);
  auto os = open_out(path);
  os << "P6\n" << W << " " << H << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw archive::IoError("write failed: " + path.string());
}

void write_pgm(const std::filesystem::path& path, const Tensor<float>& map) {
  if (map.rank() != 2) throw ShapeError("write_pgm: expected (H,W), got " + shape_str(map.shape));
  const auto [lo, hi] = std::minmax_element(map.data.begin(), map.data.end());
  const float range = *hi - *lo;
  std::vector<std::uint8_t> px(map.size());
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = range > 0 ? to_byte((map[i] - *lo) / range) : 0;
  auto os = open_out(path);
  os << "P5\n" << map.dim(1) << " " << map.dim(0) << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw archive::IoError("write failed: " + path.string());
}

Tensor<float> read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw archive::IoError("cannot open for reading: " + path.string());
  std::string magic;
  int W = 0, H = 0, maxval = 0;
  is >> magic >> W >> H >> maxval;
  is.get();
  if (magic != "P6" || W < 1 || H < 1 || maxval != 255)
    throw archive::IoError(path.string() + ": expected a binary 8-bit PPM");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(W) * H * 3);
  if (!is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size())))
    throw archive::IoError(path.string() + ": truncated PPM");
  Tensor<float> img({3, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) img[c * plane + p] = px[p * 3 + c] / 255.0f;
  return img;
}

}  // namespace maf
