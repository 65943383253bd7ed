#pragma once

#include <string>
#include <vector>

#include "epifusion/epipolar_field.hpp"
#include "epifusion/tensor.hpp"

namespace epifusion {

// Fixed 2D sine positional encoding: the row for grid cell (r, c) is the
// concatenation of a d/2-dim sinusoidal encoding of the column and a d/2-dim
// encoding of the row, frequencies 1/10000^(2j/(d/2)), sin in even
// sub-channels, cos in odd ones. Throws InvalidDim unless d % 4 == 0.
Eigen::MatrixXd sine_pe(int height, int width, int d);

// Geometry positional encoding: row n = W_e * ray_n (Eq. of the learnable
// linear ray embedding). W_e: d x 3, rays: unit directions.
Eigen::MatrixXd geo_pe(const Eigen::MatrixXd& w_e, const std::vector<Vec3>& rays);

// L x 3 matrix of ray directions, convenient for gradient formulas.
Eigen::MatrixXd rays_matrix(const std::vector<Vec3>& rays);

// Mean over all L^2 pairs of squared difference between E_G1^n . E_G2^m and
// the epipolar-field target.
double lpos_loss(const Eigen::MatrixXd& eg1, const Eigen::MatrixXd& eg2,
                 const Eigen::MatrixXd& target);

// Analytic gradient of lpos_loss with respect to W_e, chaining through both
// encodings (shared W_e).
Eigen::MatrixXd lpos_gradient(const Eigen::MatrixXd& w_e, const Eigen::MatrixXd& rays1,
                              const Eigen::MatrixXd& rays2, const Eigen::MatrixXd& target);

// Order-independent variant used in training: mean of the 1->2 and 2->1
// losses. target21 is the field with the view roles swapped.
double lpos_loss_sym(const Eigen::MatrixXd& eg1, const Eigen::MatrixXd& eg2,
                     const Eigen::MatrixXd& target12, const Eigen::MatrixXd& target21);

struct GpeTrainResult {
  Eigen::MatrixXd w_e;            // d x 3
  std::vector<double> loss_curve;  // per-step symmetrized loss
};

// Optimizes W_e against the epipolar-field matching loss alone with Adam.
GpeTrainResult train_gpe(const CameraParams& cam1, const CameraParams& cam2, const GridSpec& grid,
                         double gamma, int d, int steps, double lr, uint64_t seed);

// W_e checkpoint: "GPE v1 d\n" header + d x 3 little-endian 32-bit floats,
// row-major.
void write_gpe_file(const std::string& path, const Eigen::MatrixXd& w_e);
Eigen::MatrixXd read_gpe_file(const std::string& path);

}  // namespace epifusion
