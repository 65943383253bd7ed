#include "epifusion/metrics.hpp"

#include <cmath>

namespace epifusion {

std::vector<DecodedJoint> decode_heatmap(const Heatmap& hm) {
  std::vector<DecodedJoint> out;
  out.reserve(static_cast<size_t>(hm.k));
  for (int j = 0; j < hm.k; ++j) {
    int br = 0, bc = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < hm.height; ++r)
      for (int c = 0; c < hm.width; ++c)
        if (hm.at(j, r, c) > best) {  // strict: first cell wins ties
          best = hm.at(j, r, c);
          br = r;
          bc = c;
        }
    double rc = bc, rr = br;
    if (bc > 0 && bc < hm.width - 1) {
      const double right = hm.at(j, br, bc + 1), left = hm.at(j, br, bc - 1);
      if (right > left) rc += 0.25;
      else if (left > right) rc -= 0.25;
    }
    if (br > 0 && br < hm.height - 1) {
      const double down = hm.at(j, br + 1, bc), up = hm.at(j, br - 1, bc);
      if (down > up) rr += 0.25;
      else if (up > down) rr -= 0.25;
    }
    out.push_back({Pixel{heatmap_to_image(rc), heatmap_to_image(rr)}, best});
  }
  return out;
}

double jdr(const std::vector<Pixel>& pred, const std::vector<Pixel>& gt, double threshold_px) {
  if (pred.size() != gt.size()) throw ShapeMismatch("jdr: joint count mismatch");
  if (!(threshold_px > 0.0)) throw NumericError("jdr: threshold must be positive");
  if (pred.empty()) return 0.0;
  size_t hit = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = std::hypot(pred[i].u - gt[i].u, pred[i].v - gt[i].v);
    if (d <= threshold_px) ++hit;
  }
  return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

double mpjpe(const std::vector<Eigen::MatrixXd>& pred3d, const std::vector<Eigen::MatrixXd>& gt3d) {
  if (pred3d.size() != gt3d.size()) throw ShapeMismatch("mpjpe: frame count mismatch");
  double acc = 0.0;
  size_t n = 0;
  for (size_t f = 0; f < pred3d.size(); ++f) {
    if (pred3d[f].rows() != gt3d[f].rows() || pred3d[f].cols() != 3 || gt3d[f].cols() != 3)
      throw ShapeMismatch("mpjpe: joint matrix shape mismatch");
    for (int j = 0; j < pred3d[f].rows(); ++j) {
      acc += (pred3d[f].row(j) - gt3d[f].row(j)).norm();
      ++n;
    }
  }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

}  // namespace epifusion
