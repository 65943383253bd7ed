#pragma once

#include <cmath>

#include "epifusion/common.hpp"
#include "epifusion/geometry.hpp"
#include "epifusion/synthetic.hpp"

namespace epifusion::testing {

// Random proper rotation from a quaternion with normally distributed
// components.
inline Mat3 random_rotation(Rng& rng) {
  double q[4];
  double n2 = 0.0;
  for (double& c : q) {
    c = rng.normal();
    n2 += c * c;
  }
  const double inv = 1.0 / std::sqrt(n2);
  const double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

inline CameraParams random_camera(Rng& rng) {
  CameraParams cam;
  cam.R = random_rotation(rng);
  cam.t = Vec3(rng.uniform(-2000, 2000), rng.uniform(-2000, 2000), rng.uniform(-2000, 2000));
  cam.K = Mat3::Identity();
  cam.K(0, 0) = rng.uniform(300, 1500);
  cam.K(1, 1) = rng.uniform(300, 1500);
  cam.K(0, 2) = rng.uniform(50, 200);
  cam.K(1, 2) = rng.uniform(50, 200);
  cam.width = 256;
  cam.height = 256;
  return cam;
}

// A 3D point with positive depth in front of the camera.
inline Vec3 point_in_front(const CameraParams& cam, Rng& rng, double depth_lo = 500,
                           double depth_hi = 4000) {
  const Vec3 c = camera_center(cam);
  const Vec3 axis = cam.R.row(2).transpose();
  const Vec3 lateral = cam.R.row(0).transpose() * rng.uniform(-0.2, 0.2) +
                       cam.R.row(1).transpose() * rng.uniform(-0.2, 0.2);
  return c + (axis + lateral) * rng.uniform(depth_lo, depth_hi);
}

// Narrow-FOV two-camera rig used by the epipolar-field sharpness tests.
inline Rig narrow_rig(double focal = 4000.0, int image = 128, uint64_t seed = 7) {
  return make_rig(2, 3000.0, 500.0, image, focal, seed);
}

}  // namespace epifusion::testing
