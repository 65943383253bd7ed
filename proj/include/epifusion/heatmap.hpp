#pragma once

#include <vector>

#include "epifusion/common.hpp"

namespace epifusion {

// k-channel joint-likelihood grid. Ground truth is nonnegative with channel
// max 1; predictions are unconstrained.
struct Heatmap {
  int k = 0;
  int height = 0;
  int width = 0;
  std::vector<double> v;  // k * height * width, channel-major

  Heatmap() = default;
  Heatmap(int k_, int h_, int w_)
      : k(k_), height(h_), width(w_), v(static_cast<size_t>(k_) * h_ * w_, 0.0) {}

  double& at(int j, int r, int c) {
    return v[(static_cast<size_t>(j) * height + r) * width + c];
  }
  double at(int j, int r, int c) const {
    return v[(static_cast<size_t>(j) * height + r) * width + c];
  }
};

// Heatmap cell (row, col) <-> image pixel mapping at the 4x downsampled
// heatmap resolution: pixel = 4 * cell + 1.5 (mean of the four covered
// pixel centers).
inline double heatmap_to_image(double cell) { return 4.0 * cell + 1.5; }
inline double image_to_heatmap(double px) { return (px - 1.5) / 4.0; }

}  // namespace epifusion
