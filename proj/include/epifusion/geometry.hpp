#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "epifusion/common.hpp"

namespace epifusion {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

// Origin plus unit direction, both in world coordinates (mm).
struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();
};

// Calibrated pinhole camera: x_cam = R * x_world + t, pixel = K * x_cam / z.
struct CameraParams {
  Mat3 K = Mat3::Identity();
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  int width = 0;
  int height = 0;

  double fx() const { return K(0, 0); }
  double fy() const { return K(1, 1); }
  double cx() const { return K(0, 2); }
  double cy() const { return K(1, 2); }

  // Throws NumericError subclasses when the invariants are violated.
  void validate() const;
};

Vec3 camera_center(const CameraParams& cam);

// Throws DepthNonPositive when the point is on or behind the camera plane.
Pixel project(const CameraParams& cam, const Vec3& p);

// Unit-direction back-projection. The returned direction always points into
// the positive-depth half space of the camera.
Ray pixel_ray(const CameraParams& cam, const Pixel& px);

// Homogeneous linear least-squares triangulation over >=2 observations with
// K-normalized image coordinates. Throws DegenerateGeometry when the stacked
// system is rank deficient (e.g. coincident cameras).
Vec3 triangulate_dlt(const std::vector<std::pair<CameraParams, Pixel>>& obs);

// Fundamental matrix mapping view-1 pixels to view-2 epipolar lines,
// normalized to unit Frobenius norm. Test oracle for the epipolar field.
Mat3 fundamental_matrix(const CameraParams& cam1, const CameraParams& cam2);

// Signed distance helpers for the epipolar line l = F * [u, v, 1]^T.
double point_line_distance(const Vec3& line, const Pixel& px);

// JSON camera file format:
//   {"K": [[..]x3], "R": [[..]x3], "t": [..x3], "width": int, "height": int}
std::string camera_to_json(const CameraParams& cam);
CameraParams camera_from_json_text(const std::string& text);

}  // namespace epifusion
