#include "epifusion/geometry.hpp"

#include <json.hpp>

namespace epifusion {

void CameraParams::validate() const {
  const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho >= 1e-9) throw DegenerateGeometry("camera rotation is not orthonormal");
  if (R.determinant() < 0.0) throw DegenerateGeometry("camera rotation has negative determinant");
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0)) throw DegenerateGeometry("camera focal lengths must be positive");
  if (std::abs(K(2, 2) - 1.0) > 1e-12 || std::abs(K(1, 0)) > 1e-12 || std::abs(K(2, 0)) > 1e-12 ||
      std::abs(K(2, 1)) > 1e-12)
    throw DegenerateGeometry("camera intrinsics must be upper triangular with K[2][2] = 1");
  if (!K.allFinite() || !R.allFinite() || !t.allFinite()) throw NonFinite("camera parameters must be finite");
}

Vec3 camera_center(const CameraParams& cam) { return -cam.R.transpose() * cam.t; }

Pixel project(const CameraParams& cam, const Vec3& p) {
  const Vec3 pc = cam.R * p + cam.t;
  if (pc.z() <= 1e-6) throw DepthNonPositive("point depth must be positive for projection");
  const Vec3 h = cam.K * pc;
  return Pixel{h.x() / h.z(), h.y() / h.z()};
}

Ray pixel_ray(const CameraParams& cam, const Pixel& px) {
  // K^-1 [u v 1] has z = 1 in the camera frame, so the direction always has
  // positive camera depth.
  const Vec3 dc(
      (px.u - cam.K(0, 2)) / cam.K(0, 0) - cam.K(0, 1) * (px.v - cam.K(1, 2)) / (cam.K(0, 0) * cam.K(1, 1)),
      (px.v - cam.K(1, 2)) / cam.K(1, 1), 1.0);
  Ray r;
  r.origin = camera_center(cam);
  r.dir = (cam.R.transpose() * dc).normalized();
  return r;
}

Vec3 triangulate_dlt(const std::vector<std::pair<CameraParams, Pixel>>& obs) {
  if (obs.size() < 2) throw DegenerateGeometry("triangulation needs at least two observations");

  Eigen::MatrixXd A(2 * obs.size(), 4);
  for (size_t i = 0; i < obs.size(); ++i) {
    const CameraParams& cam = obs[i].first;
    const Pixel& px = obs[i].second;
    // Normalized projection matrix [R | t] with K factored into the pixel.
    Eigen::Matrix<double, 3, 4> P;
    P.leftCols<3>() = cam.R;
    P.col(3) = cam.t;
    const Vec3 xn = cam.K.inverse() * Vec3(px.u, px.v, 1.0);
    Eigen::RowVector4d ra = xn.x() * P.row(2) - P.row(0);
    Eigen::RowVector4d rb = xn.y() * P.row(2) - P.row(1);
    A.row(2 * i) = ra.normalized();
    A.row(2 * i + 1) = rb.normalized();
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd& s = svd.singularValues();
  const int n = static_cast<int>(s.size());
  if (s(n - 2) - s(n - 1) < 1e-12)
    throw DegenerateGeometry("triangulation system is rank deficient");
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-15 * h.norm())
    throw DegenerateGeometry("triangulated point is at infinity");
  return h.head<3>() / h(3);
}

Mat3 fundamental_matrix(const CameraParams& cam1, const CameraParams& cam2) {
  const Vec3 c1 = camera_center(cam1);
  const Vec3 c2 = camera_center(cam2);
  if ((c2 - c1).norm() < 1e-9) throw DegenerateGeometry("fundamental matrix needs distinct camera centers");

  const Mat3 r_rel = cam2.R * cam1.R.transpose();
  const Vec3 t_rel = cam2.t - r_rel * cam1.t;
  Mat3 tx;
  tx << 0, -t_rel.z(), t_rel.y(), t_rel.z(), 0, -t_rel.x(), -t_rel.y(), t_rel.x(), 0;
  Mat3 f = cam2.K.inverse().transpose() * (tx * r_rel) * cam1.K.inverse();
  return f / f.norm();
}

double point_line_distance(const Vec3& line, const Pixel& px) {
  const double d = std::hypot(line.x(), line.y());
  if (d < 1e-300) return std::numeric_limits<double>::infinity();
  return std::abs(line.x() * px.u + line.y() * px.v + line.z()) / d;
}

std::string camera_to_json(const CameraParams& cam) {
  nlohmann::json j;
  for (int r = 0; r < 3; ++r) {
    j["K"].push_back({cam.K(r, 0), cam.K(r, 1), cam.K(r, 2)});
    j["R"].push_back({cam.R(r, 0), cam.R(r, 1), cam.R(r, 2)});
  }
  j["t"] = {cam.t.x(), cam.t.y(), cam.t.z()};
  j["width"] = cam.width;
  j["height"] = cam.height;
  return j.dump(2);
}

CameraParams camera_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("camera json parse error: ") + e.what());
  }
  CameraParams cam;
  try {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        cam.K(r, c) = j.at("K").at(r).at(c).get<double>();
        cam.R(r, c) = j.at("R").at(r).at(c).get<double>();
      }
    for (int r = 0; r < 3; ++r) cam.t(r) = j.at("t").at(r).get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("camera json missing field: ") + e.what());
  }
  cam.validate();
  return cam;
}

}  // namespace epifusion
