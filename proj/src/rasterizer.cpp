#include "maf/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Geometry>

namespace maf {

namespace {

constexpr int kIuvFormatVersion = 1;

using P3 = std::array<double, 3>;

double edge(const P3& a, const P3& b, double px, double py) {
  return (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
}

// For an edge a->b of a positively oriented triangle, decides ownership of
// centers lying exactly on it. Reversing the direction flips the answer, so
// two triangles sharing an edge never both claim a center.
bool owns_edge(const P3& a, const P3& b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  return dy > 0 || (dy == 0 && dx < 0);
}

}  // namespace

IUVMap::IUVMap(int h, int w, int p) : height(h), width(w), parts(p) {
  if (h < 1 || w < 1) throw ConfigError("IUV map must be at least 1x1");
  if (p < 1 || p > 255) throw ConfigError("IUV part count must be in 1..255");
  part.assign(pixels(), 0);
  u.assign(pixels(), 0.0f);
  v.assign(pixels(), 0.0f);
}

int IUVMap::foreground() const {
  return static_cast<int>(std::count_if(part.begin(), part.end(), [](auto p) { return p > 0; }));
}

void IUVMap::validate() const {
  if (part.size() != pixels() || u.size() != pixels() || v.size() != pixels())
    throw ConfigError("IUV map channel size mismatch");
  for (std::size_t i = 0; i < pixels(); ++i) {
    if (part[i] > parts) throw ConfigError("IUV part label above part count");
    if (part[i] == 0 && (u[i] != 0.0f || v[i] != 0.0f))
      throw ConfigError("IUV background pixel carries uv");
    if (!(u[i] >= 0.0f && u[i] <= 1.0f && v[i] >= 0.0f && v[i] <= 1.0f))
      throw ConfigError("IUV uv outside [0,1]");
  }
}

std::vector<P3> screen_vertices(const Tensor<double>& vertices, const CameraParams& cam,
                                int width, int height) {
  if (width < 1 || height < 1) throw ConfigError("render target must be at least 1x1");
  if (vertices.rank() != 2 || vertices.dim(1) != 3)
    throw ShapeError("screen_vertices: expected (N,3), got " + shape_str(vertices.shape));
  std::vector<P3> out(vertices.dim(0));
  for (int i = 0; i < vertices.dim(0); ++i) {
    out[i] = {to_pixel_coord(cam.scale * vertices[3 * i] + cam.tx, width),
              to_pixel_coord(cam.scale * vertices[3 * i + 1] + cam.ty, height),
              vertices[3 * i + 2]};
  }
  return out;
}

Coverage rasterize_faces(const std::vector<P3>& screen,
                         const std::vector<std::array<int, 3>>& faces, int width, int height) {
  if (width < 1 || height < 1) throw ConfigError("render target must be at least 1x1");
  Coverage cov;
  cov.width = width;
  cov.height = height;
  const std::size_t n = static_cast<std::size_t>(width) * height;
  cov.face.assign(n, -1);
  cov.bary.assign(n, {0, 0, 0});
  cov.depth.assign(n, std::numeric_limits<double>::infinity());
  for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
    const auto& idx = faces[f];
    P3 a = screen[idx[0]], b = screen[idx[1]], c = screen[idx[2]];
    double area = edge(a, b, c[0], c[1]);
    if (area == 0.0 || !std::isfinite(area)) continue;
    const bool flipped = area < 0;
    if (flipped) {
      std::swap(b, c);
      area = -area;
    }
    const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({a[0], b[0], c[0]}))));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(std::max({a[0], b[0], c[0]}))));
    const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({a[1], b[1], c[1]}))));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(std::max({a[1], b[1], c[1]}))));
    const bool own_bc = owns_edge(b, c), own_ca = owns_edge(c, a), own_ab = owns_edge(a, b);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double w0 = edge(b, c, x, y), w1 = edge(c, a, x, y), w2 = edge(a, b, x, y);
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        if ((w0 == 0 && !own_bc) || (w1 == 0 && !own_ca) || (w2 == 0 && !own_ab)) continue;
        const double l0 = w0 / area, l1 = w1 / area, l2 = 1.0 - l0 - l1;
        const double z = l0 * a[2] + l1 * b[2] + l2 * c[2];
        const std::size_t p = static_cast<std::size_t>(y) * width + x;
        if (z < cov.depth[p]) {
          cov.depth[p] = z;
          cov.face[p] = f;
          // barycentrics in the face's original vertex order
          std::array<double, 3> l{l0, l1, l2};
          if (flipped) std::swap(l[1], l[2]);
          cov.bary[p] = l;
        }
      }
  }
  return cov;
}

int face_part(const std::array<int, 3>& face, const std::vector<int>& vertex_parts) {
  const int a = vertex_parts[face[0]], b = vertex_parts[face[1]], c = vertex_parts[face[2]];
  if (a == b || a == c) return a;
  if (b == c) return b;
  return std::min({a, b, c});
}

IUVMap rasterize_iuv(const MeshState& mesh, const TemplateBody& body, const CameraParams& cam,
                     int width, int height) {
  const auto screen = screen_vertices(mesh.vertices, cam, width, height);
  const Coverage cov = rasterize_faces(screen, body.faces, width, height);
  IUVMap iuv(height, width, body.num_parts());
  for (std::size_t p = 0; p < iuv.pixels(); ++p) {
    const int f = cov.face[p];
    if (f < 0) continue;
    const auto& face = body.faces[f];
    iuv.part[p] = static_cast<std::uint8_t>(face_part(face, body.vertex_parts));
    double u = 0, v = 0;
    for (int k = 0; k < 3; ++k) {
      u += cov.bary[p][k] * body.vertex_uv[2 * face[k]];
      v += cov.bary[p][k] * body.vertex_uv[2 * face[k] + 1];
    }
    iuv.u[p] = static_cast<float>(std::clamp(u, 0.0, 1.0));
    iuv.v[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return iuv;
}

std::array<float, 3> part_color(int part) {
  if (part <= 0) return {0, 0, 0};
  // evenly spread hues, alternating brightness
  const double h = std::fmod(part * 0.618033988749895, 1.0) * 6.0;
  const double s = 0.75, val = part % 2 ? 0.95 : 0.7;
  const int i = static_cast<int>(h);
  const double f = h - i, p = val * (1 - s), q = val * (1 - s * f), t = val * (1 - s * (1 - f));
  double r, g, b;
  switch (i % 6) {
    case 0: r = val, g = t, b = p; break;
    case 1: r = q, g = val, b = p; break;
    case 2: r = p, g = val, b = t; break;
    case 3: r = p, g = q, b = val; break;
    case 4: r = t, g = p, b = val; break;
    default: r = val, g = p, b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

namespace {

// Part colour scaled by how much the posed face faces the camera.
std::vector<std::array<float, 3>> shaded_face_colors(const MeshState& mesh,
                                                     const TemplateBody& body) {
  std::vector<std::array<float, 3>> out(body.faces.size());
  const auto& V = mesh.vertices;
  for (std::size_t f = 0; f < body.faces.size(); ++f) {
    const auto& face = body.faces[f];
    Eigen::Vector3d p[3];
    for (int k = 0; k < 3; ++k) p[k] = {V[3 * face[k]], V[3 * face[k] + 1], V[3 * face[k] + 2]};
    const Eigen::Vector3d n = (p[1] - p[0]).cross(p[2] - p[0]);
    const double nz = n.norm() > 0 ? std::abs(n.z()) / n.norm() : 0.0;
    const float shade = static_cast<float>(0.35 + 0.65 * nz);
    const auto c = part_color(face_part(face, body.vertex_parts));
    out[f] = {c[0] * shade, c[1] * shade, c[2] * shade};
  }
  return out;
}

void smooth_noise(Tensor<float>& img, std::uint64_t seed, double contrast) {
  const int H = img.dim(1), W = img.dim(2);
  constexpr int G = 5;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double grid[3][G][G];
  for (auto& ch : grid)
    for (auto& row : ch)
      for (auto& x : row) x = uni(rng);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double gy = (y + 0.5) / H * (G - 1), gx = (x + 0.5) / W * (G - 1);
        const int iy = std::min(static_cast<int>(gy), G - 2), ix = std::min(static_cast<int>(gx), G - 2);
        const double fy = gy - iy, fx = gx - ix;
        const double v = (1 - fy) * ((1 - fx) * grid[c][iy][ix] + fx * grid[c][iy][ix + 1]) +
                         fy * ((1 - fx) * grid[c][iy + 1][ix] + fx * grid[c][iy + 1][ix + 1]);
        img[(static_cast<std::size_t>(c) * H + y) * W + x] = static_cast<float>(0.5 + contrast * (v - 0.5));
      }
}

}  // namespace

Tensor<float> render_input(const MeshState& mesh, const TemplateBody& body,
                           const CameraParams& cam, int width, int height,
                           std::uint64_t background_seed, double background_contrast) {
  const auto screen = screen_vertices(mesh.vertices, cam, width, height);
  const Coverage cov = rasterize_faces(screen, body.faces, width, height);
  const auto colors = shaded_face_colors(mesh, body);
  Tensor<float> img({3, height, width});
  if (!(background_contrast >= 0 && background_contrast <= 1))
    throw ConfigError("background contrast must lie in [0, 1]");
  smooth_noise(img, background_seed, background_contrast);
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  for (std::size_t p = 0; p < plane; ++p) {
    if (cov.face[p] < 0) continue;
    for (int c = 0; c < 3; ++c) img[c * plane + p] = colors[cov.face[p]][c];
  }
  return img;
}

Tensor<float> render_overlay(const Tensor<float>& image, const MeshState& mesh,
                             const TemplateBody& body, const CameraParams& cam) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("overlay expects a (3,H,W) image, got " + shape_str(image.shape));
  const int H = image.dim(1), W = image.dim(2);
  const auto screen = screen_vertices(mesh.vertices, cam, W, H);
  const Coverage cov = rasterize_faces(screen, body.faces, W, H);
  const auto colors = shaded_face_colors(mesh, body);
  Tensor<float> out = image;
  const std::size_t plane = static_cast<std::size_t>(W) * H;
  for (std::size_t p = 0; p < plane; ++p) {
    if (cov.face[p] < 0) continue;
    for (int c = 0; c < 3; ++c)
      out[c * plane + p] = 0.4f * image[c * plane + p] + 0.6f * colors[cov.face[p]][c];
  }
  return out;
}

std::vector<std::uint8_t> part_segmentation(const IUVMap& iuv) { return iuv.part; }

std::vector<std::uint8_t> fb_mask(const IUVMap& iuv) {
  std::vector<std::uint8_t> m(iuv.pixels());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = iuv.part[i] != 0;
  return m;
}

void add_iuv(archive::Record& rec, const IUVMap& iuv, const std::string& prefix) {
  rec.header[prefix] = {{"H", iuv.height}, {"W", iuv.width}, {"P", iuv.parts},
                        {"version", kIuvFormatVersion}};
  const std::vector<int> shape{iuv.height, iuv.width};
  rec.add(prefix + "_part", archive::u8(shape, iuv.part));
  rec.add(prefix + "_u", archive::f32(shape, iuv.u));
  rec.add(prefix + "_v", archive::f32(shape, iuv.v));
}

IUVMap get_iuv(const archive::Record& rec, const std::string& prefix) {
  const auto& h = rec.header.at(prefix);
  if (h.at("version").get<int>() != kIuvFormatVersion)
    throw archive::IoError("unsupported IUV format version");
  IUVMap m(h.at("H").get<int>(), h.at("W").get<int>(), h.at("P").get<int>());
  m.part = rec.get(prefix + "_part").as_u8();
  m.u = rec.get(prefix + "_u").as_f32();
  m.v = rec.get(prefix + "_v").as_f32();
  m.validate();
  return m;
}

void save_iuv(const IUVMap& iuv, const std::filesystem::path& path) {
  archive::Record rec;
  rec.header["kind"] = "iuv";
  add_iuv(rec, iuv);
  archive::write_file(path, rec);
}

IUVMap load_iuv(const std::filesystem::path& path) { return get_iuv(archive::read_file(path)); }

}  // namespace maf
