#include "epifusion/encoding.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace epifusion {

Eigen::MatrixXd sine_pe(int height, int width, int d) {
  if (d % 4 != 0) throw InvalidDim("sine_pe: d must be divisible by 4");
  const int half = d / 2;
  Eigen::MatrixXd pe(height * width, d);
  auto encode = [&](double pos, int j) {
    // j indexes sub-channel pairs within one half.
    const double freq = std::pow(10000.0, -2.0 * j / static_cast<double>(half));
    return std::make_pair(std::sin(pos * freq), std::cos(pos * freq));
  };
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const int row = r * width + c;
      for (int j = 0; j < half / 2; ++j) {
        auto [sc, cc] = encode(static_cast<double>(c), j);
        pe(row, 2 * j) = sc;
        pe(row, 2 * j + 1) = cc;
        auto [sr, cr] = encode(static_cast<double>(r), j);
        pe(row, half + 2 * j) = sr;
        pe(row, half + 2 * j + 1) = cr;
      }
    }
  return pe;
}

Eigen::MatrixXd rays_matrix(const std::vector<Vec3>& rays) {
  Eigen::MatrixXd m(static_cast<int>(rays.size()), 3);
  for (size_t i = 0; i < rays.size(); ++i) m.row(static_cast<int>(i)) = rays[i].transpose();
  return m;
}

Eigen::MatrixXd geo_pe(const Eigen::MatrixXd& w_e, const std::vector<Vec3>& rays) {
  return rays_matrix(rays) * w_e.transpose();
}

double lpos_loss(const Eigen::MatrixXd& eg1, const Eigen::MatrixXd& eg2,
                 const Eigen::MatrixXd& target) {
  if (eg1.cols() != eg2.cols() || eg1.rows() != target.rows() || eg2.rows() != target.cols())
    throw ShapeMismatch("lpos_loss: shapes disagree");
  const Eigen::MatrixXd resid = eg1 * eg2.transpose() - target;
  return resid.squaredNorm() / static_cast<double>(target.size());
}

Eigen::MatrixXd lpos_gradient(const Eigen::MatrixXd& w_e, const Eigen::MatrixXd& rays1,
                              const Eigen::MatrixXd& rays2, const Eigen::MatrixXd& target) {
  const Eigen::MatrixXd eg1 = rays1 * w_e.transpose();
  const Eigen::MatrixXd eg2 = rays2 * w_e.transpose();
  const Eigen::MatrixXd dresid =
      (eg1 * eg2.transpose() - target) * (2.0 / static_cast<double>(target.size()));
  // dL/dE1 = dD * E2, dL/dE2 = dD^T * E1; both encodings share W_e.
  const Eigen::MatrixXd deg1 = dresid * eg2;
  const Eigen::MatrixXd deg2 = dresid.transpose() * eg1;
  return deg1.transpose() * rays1 + deg2.transpose() * rays2;
}

double lpos_loss_sym(const Eigen::MatrixXd& eg1, const Eigen::MatrixXd& eg2,
                     const Eigen::MatrixXd& target12, const Eigen::MatrixXd& target21) {
  return 0.5 * (lpos_loss(eg1, eg2, target12) + lpos_loss(eg2, eg1, target21));
}

GpeTrainResult train_gpe(const CameraParams& cam1, const CameraParams& cam2, const GridSpec& grid,
                         double gamma, int d, int steps, double lr, uint64_t seed) {
  const Eigen::MatrixXd s12 = field_score_matrix(cam1, cam2, grid, gamma);
  const Eigen::MatrixXd s21 = field_score_matrix(cam2, cam1, grid, gamma);
  const Eigen::MatrixXd r1 = rays_matrix(grid_ray_dirs(cam1, grid));
  const Eigen::MatrixXd r2 = rays_matrix(grid_ray_dirs(cam2, grid));

  Rng rng = make_rng(seed, RngStream::ParamInit);
  const double a = std::sqrt(1.0 / 3.0);
  Eigen::MatrixXd w_e(d, 3);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < 3; ++j) w_e(i, j) = rng.uniform(-a, a);

  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, 3);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(d, 3);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  GpeTrainResult res;
  res.loss_curve.reserve(static_cast<size_t>(steps));
  for (int step = 1; step <= steps; ++step) {
    const Eigen::MatrixXd g =
        0.5 * (lpos_gradient(w_e, r1, r2, s12) + lpos_gradient(w_e, r2, r1, s21));
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(b1, step);
    const double bc2 = 1.0 - std::pow(b2, step);
    w_e -= (lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());
    res.loss_curve.push_back(
        lpos_loss_sym(r1 * w_e.transpose(), r2 * w_e.transpose(), s12, s21));
  }
  res.w_e = std::move(w_e);
  return res;
}

void write_gpe_file(const std::string& path, const Eigen::MatrixXd& w_e) {
  if (w_e.cols() != 3) throw ShapeMismatch("gpe checkpoint: W_e must be d x 3");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << "GPE v1 " << w_e.rows() << "\n";
  for (int r = 0; r < w_e.rows(); ++r)
    for (int c = 0; c < 3; ++c) write_f32(os, static_cast<float>(w_e(r, c)));
}

Eigen::MatrixXd read_gpe_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("gpe checkpoint: missing header");
  std::istringstream hs(line);
  std::string magic, version;
  int d = 0;
  hs >> magic >> version >> d;
  if (!hs || magic != "GPE" || version != "v1" || d <= 0)
    throw FormatError("gpe checkpoint: bad header '" + line + "'");
  Eigen::MatrixXd w_e(d, 3);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < 3; ++c) w_e(r, c) = read_f32(is);
  if (!is) throw FormatError("gpe checkpoint: truncated payload");
  return w_e;
}

}  // namespace epifusion
