#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "maf/archive.hpp"
#include "maf/body_model.hpp"

namespace maf {

/// Dense correspondence map. part is 0 for background, 1..parts otherwise;
/// u and v are zero on background.
struct IUVMap {
  int height = 0;
  int width = 0;
  int parts = 0;
  std::vector<std::uint8_t> part;
  std::vector<float> u;
  std::vector<float> v;

  IUVMap() = default;
  IUVMap(int h, int w, int p);
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  int foreground() const;
  /// Throws ConfigError if an invariant is broken.
  void validate() const;
  bool operator==(const IUVMap&) const = default;
};

/// Per-pixel coverage: front-most face index (-1 if none) and barycentric
/// weights of its three vertices.
struct Coverage {
  int height = 0;
  int width = 0;
  std::vector<int> face;
  std::vector<std::array<double, 3>> bary;
  std::vector<double> depth;
};

/// Screen-space pixel positions (x, y, z) of mesh vertices under the camera.
std::vector<std::array<double, 3>> screen_vertices(const Tensor<double>& vertices,
                                                   const CameraParams& cam, int width, int height);

/// A pixel is covered when its center lies inside the triangle. Centers
/// exactly on an edge belong to exactly one of the two triangles sharing it.
/// Among covering faces the smallest interpolated z wins; equal depth keeps
/// the lower face index.
Coverage rasterize_faces(const std::vector<std::array<double, 3>>& screen,
                         const std::vector<std::array<int, 3>>& faces, int width, int height);

/// Majority label of a face's vertices; without a majority, the lowest label.
int face_part(const std::array<int, 3>& face, const std::vector<int>& vertex_parts);

IUVMap rasterize_iuv(const MeshState& mesh, const TemplateBody& body, const CameraParams& cam,
                     int width, int height);

/// Part colored, normal shaded body over seeded smooth noise. (3,H,W) in [0,1].
/// `background_contrast` scales the noise about 0.5 (1 spans the full range).
Tensor<float> render_input(const MeshState& mesh, const TemplateBody& body,
                           const CameraParams& cam, int width, int height,
                           std::uint64_t background_seed, double background_contrast = 1.0);

/// Image with the mesh blended on top (alpha 0.6), same layout as the input.
Tensor<float> render_overlay(const Tensor<float>& image, const MeshState& mesh,
                             const TemplateBody& body, const CameraParams& cam);

std::array<float, 3> part_color(int part);

std::vector<std::uint8_t> part_segmentation(const IUVMap& iuv);
std::vector<std::uint8_t> fb_mask(const IUVMap& iuv);

/// Stores the map under `prefix` ("iuv_part", "iuv_u", "iuv_v" for prefix "iuv").
void add_iuv(archive::Record& rec, const IUVMap& iuv, const std::string& prefix = "iuv");
IUVMap get_iuv(const archive::Record& rec, const std::string& prefix = "iuv");
void save_iuv(const IUVMap& iuv, const std::filesystem::path& path);
IUVMap load_iuv(const std::filesystem::path& path);

}  // namespace maf
