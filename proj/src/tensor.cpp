#include "epifusion/tensor.hpp"

namespace epifusion {

Tensor from_eigen(const Eigen::MatrixXd& m) {
  Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  t.mat() = m;
  return t;
}

Eigen::MatrixXd to_eigen(const Tensor& t) { return Eigen::MatrixXd(t.mat()); }

}  // namespace epifusion
