#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "epifusion/geometry.hpp"

namespace epifusion {

// Maps feature-map indices to image pixel centers: pixel = offset + stride * index.
// The default matches an 8x downsampled feature map of a 128px image.
struct GridSpec {
  int height = 16;
  int width = 16;
  double stride = 8.0;
  double offset = 3.5;

  int size() const { return height * width; }
  Pixel pixel_at(int row, int col) const {
    return Pixel{offset + stride * col, offset + stride * row};
  }
};

// Per-query-pixel correspondence scores over a reference view.
struct EpipolarFieldGrid {
  Pixel query;
  GridSpec grid;
  double gamma = 1.0;
  bool degenerate_query = false;  // query ray parallel to the baseline
  std::vector<double> scores;     // row-major height x width, values in [0, 1]

  double at(int row, int col) const { return scores[static_cast<size_t>(row) * grid.width + col]; }
};

// Unit normal of the plane spanned by the baseline c1->c2 and the query ray.
// Throws DegenerateRay when the ray is parallel to the baseline and
// DegenerateBaseline when the centers coincide.
Vec3 plane_normal(const Ray& query_ray, const Vec3& c1, const Vec3& c2);

// 1 - |cos theta| between the plane normal and a reference-view ray direction.
double correspondence_score(const Vec3& normal, const Vec3& ref_ray_dir);

// The epipolar field S'(query, m) = S^gamma over all grid cells of view 2.
// A degenerate query (pixel at the epipole) yields the uniform field
// 1/(H*W) with the degenerate flag set instead of an error.
EpipolarFieldGrid epipolar_field(const CameraParams& cam1, const CameraParams& cam2,
                                 const Pixel& query, const GridSpec& grid, double gamma);

// Back-projected unit ray directions for every cell of a view's grid,
// row-major. Cached by callers that evaluate many queries.
std::vector<Vec3> grid_ray_dirs(const CameraParams& cam, const GridSpec& grid);

// L x L score matrix between all grid cells of view 1 (rows) and view 2
// (columns); row n is the epipolar field of view-1 cell n. This is the
// geometry-only training target for the geometry positional encoding.
Eigen::MatrixXd field_score_matrix(const CameraParams& cam1, const CameraParams& cam2,
                                   const GridSpec& grid, double gamma);

// Text header "EPIFIELD v1 H W gamma qu qv\n" followed by H*W little-endian
// 32-bit floats, row-major.
void write_epifield(std::ostream& os, const EpipolarFieldGrid& field);
EpipolarFieldGrid read_epifield(std::istream& is);
void write_epifield_file(const std::string& path, const EpipolarFieldGrid& field);
EpipolarFieldGrid read_epifield_file(const std::string& path);

// 8-bit binary PGM of round(score * 255) for visual inspection.
void write_pgm(const std::string& path, const EpipolarFieldGrid& field);

}  // namespace epifusion
