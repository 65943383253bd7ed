#pragma once

#include <vector>

#include "epifusion/geometry.hpp"
#include "epifusion/heatmap.hpp"

namespace epifusion {

struct DecodedJoint {
  Pixel px;
  double confidence = 0.0;
};

// Argmax decode with quarter-cell refinement toward the larger axis
// neighbor, mapped to image coordinates. Ties pick the first cell in
// row-major order.
std::vector<DecodedJoint> decode_heatmap(const Heatmap& hm);

// Percentage of joints whose prediction lies within the threshold of the
// ground truth.
double jdr(const std::vector<Pixel>& pred, const std::vector<Pixel>& gt, double threshold_px);

// Mean Euclidean distance (mm) over joints and frames, global coordinates,
// no rigid alignment.
double mpjpe(const std::vector<Eigen::MatrixXd>& pred3d, const std::vector<Eigen::MatrixXd>& gt3d);

}  // namespace epifusion
