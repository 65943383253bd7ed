#pragma once

#include <Eigen/Dense>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "epifusion/common.hpp"

namespace epifusion {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Dense row-major double tensor with value semantics.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw ShapeMismatch("tensor data does not match shape");
  }

  static size_t count(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d < 0) throw ShapeMismatch("negative dimension");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  size_t numel() const { return data.size(); }

  int rows() const { return rank() == 2 ? shape[0] : throw ShapeMismatch("rows() needs rank 2"); }
  int cols() const { return rank() == 2 ? shape[1] : throw ShapeMismatch("cols() needs rank 2"); }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }
  double& at(int c0, int c1, int c2) {
    return data[(static_cast<size_t>(c0) * shape[1] + c1) * shape[2] + c2];
  }
  double at(int c0, int c1, int c2) const {
    return data[(static_cast<size_t>(c0) * shape[1] + c1) * shape[2] + c2];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  MatMap mat() {
    if (rank() != 2) throw ShapeMismatch("mat() needs rank 2");
    return MatMap(data.data(), shape[0], shape[1]);
  }
  ConstMatMap mat() const {
    if (rank() != 2) throw ShapeMismatch("mat() needs rank 2");
    return ConstMatMap(data.data(), shape[0], shape[1]);
  }
  // View the flattened data as an r x c matrix (must match numel).
  MatMap as_mat(int r, int c) {
    if (static_cast<size_t>(r) * c != numel()) throw ShapeMismatch("as_mat() size mismatch");
    return MatMap(data.data(), r, c);
  }
  ConstMatMap as_mat(int r, int c) const {
    if (static_cast<size_t>(r) * c != numel()) throw ShapeMismatch("as_mat() size mismatch");
    return ConstMatMap(data.data(), r, c);
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (double& v : data) v = rng.uniform(lo, hi);
  }
  void fill_normal(Rng& rng, double mean, double stddev) {
    for (double& v : data) v = rng.normal(mean, stddev);
  }
};

Tensor from_eigen(const Eigen::MatrixXd& m);
Eigen::MatrixXd to_eigen(const Tensor& t);

}  // namespace epifusion
