#include "epifusion/epipolar_field.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace epifusion {

Vec3 plane_normal(const Ray& query_ray, const Vec3& c1, const Vec3& c2) {
  const Vec3 baseline = c2 - c1;
  if (baseline.norm() <= 1e-9) throw DegenerateBaseline("camera centers coincide");
  const Vec3 cross = baseline.normalized().cross(query_ray.dir);
  const double n = cross.norm();
  if (n < 1e-9) throw DegenerateRay("query ray is parallel to the baseline");
  return cross / n;
}

double correspondence_score(const Vec3& normal, const Vec3& ref_ray_dir) {
  return 1.0 - std::abs(normal.dot(ref_ray_dir));
}

std::vector<Vec3> grid_ray_dirs(const CameraParams& cam, const GridSpec& grid) {
  std::vector<Vec3> dirs;
  dirs.reserve(static_cast<size_t>(grid.size()));
  for (int r = 0; r < grid.height; ++r)
    for (int c = 0; c < grid.width; ++c) dirs.push_back(pixel_ray(cam, grid.pixel_at(r, c)).dir);
  return dirs;
}

EpipolarFieldGrid epipolar_field(const CameraParams& cam1, const CameraParams& cam2,
                                 const Pixel& query, const GridSpec& grid, double gamma) {
  if (!(gamma > 0.0)) throw NumericError("gamma must be positive");
  EpipolarFieldGrid field;
  field.query = query;
  field.grid = grid;
  field.gamma = gamma;
  field.scores.assign(static_cast<size_t>(grid.size()), 0.0);

  const Vec3 c1 = camera_center(cam1);
  const Vec3 c2 = camera_center(cam2);
  Vec3 normal;
  try {
    normal = plane_normal(pixel_ray(cam1, query), c1, c2);
  } catch (const DegenerateRay&) {
    // Query at the epipole constrains nothing; emit the uniform field so
    // batch processing never aborts.
    field.degenerate_query = true;
    const double u = 1.0 / static_cast<double>(grid.size());
    for (double& s : field.scores) s = u;
    return field;
  }

  const std::vector<Vec3> dirs = grid_ray_dirs(cam2, grid);
  for (size_t i = 0; i < dirs.size(); ++i)
    field.scores[i] = std::pow(correspondence_score(normal, dirs[i]), gamma);
  return field;
}

Eigen::MatrixXd field_score_matrix(const CameraParams& cam1, const CameraParams& cam2,
                                   const GridSpec& grid, double gamma) {
  const int L = grid.size();
  Eigen::MatrixXd s(L, L);
  const Vec3 c1 = camera_center(cam1);
  const Vec3 c2 = camera_center(cam2);
  const std::vector<Vec3> dirs1 = grid_ray_dirs(cam1, grid);
  const std::vector<Vec3> dirs2 = grid_ray_dirs(cam2, grid);
  const Vec3 baseline_dir = (c2 - c1).normalized();
  for (int n = 0; n < L; ++n) {
    const Vec3 cross = baseline_dir.cross(dirs1[static_cast<size_t>(n)]);
    const double cn = cross.norm();
    if (cn < 1e-9) {
      s.row(n).setConstant(1.0 / static_cast<double>(L));
      continue;
    }
    const Vec3 normal = cross / cn;
    for (int m = 0; m < L; ++m)
      s(n, m) = std::pow(correspondence_score(normal, dirs2[static_cast<size_t>(m)]), gamma);
  }
  return s;
}

void write_epifield(std::ostream& os, const EpipolarFieldGrid& field) {
  char header[256];
  std::snprintf(header, sizeof(header), "EPIFIELD v1 %d %d %.17g %.17g %.17g\n", field.grid.height,
                field.grid.width, field.gamma, field.query.u, field.query.v);
  os << header;
  for (double s : field.scores) write_f32(os, static_cast<float>(s));
}

EpipolarFieldGrid read_epifield(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("epifield: missing header");
  std::istringstream hs(line);
  std::string magic, version;
  EpipolarFieldGrid field;
  hs >> magic >> version >> field.grid.height >> field.grid.width >> field.gamma >>
      field.query.u >> field.query.v;
  if (!hs || magic != "EPIFIELD" || version != "v1")
    throw FormatError("epifield: bad header '" + line + "'");
  if (field.grid.height <= 0 || field.grid.width <= 0)
    throw FormatError("epifield: invalid dimensions");
  const size_t n = static_cast<size_t>(field.grid.height) * field.grid.width;
  field.scores.resize(n);
  for (size_t i = 0; i < n; ++i) field.scores[i] = read_f32(is);
  return field;
}

void write_epifield_file(const std::string& path, const EpipolarFieldGrid& field) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  write_epifield(os, field);
}

EpipolarFieldGrid read_epifield_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for reading: " + path);
  return read_epifield(is);
}

void write_pgm(const std::string& path, const EpipolarFieldGrid& field) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << "P5\n" << field.grid.width << " " << field.grid.height << "\n255\n";
  for (double s : field.scores) {
    const int q = static_cast<int>(std::lround(std::min(1.0, std::max(0.0, s)) * 255.0));
    os.put(static_cast<char>(q));
  }
}

}  // namespace epifusion
