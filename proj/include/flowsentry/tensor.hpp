#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "flowsentry/rng.hpp"

namespace flowsentry {

/// All model arithmetic is done in 64-bit floats; rows index sequence
/// positions.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NamedTensor {
  std::string name;
  Matrix* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Matrix* tensor;
};

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Matrix xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
  return m;
}

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
  return m;
}

}  // namespace flowsentry
