#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mian {

using Scalar = double;
using Index = Eigen::Index;

// Row-major so that flat storage matches the on-disk layouts.
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Boolean key mask over a sequence; true marks a valid (attendable) position.
using KeyMask = Eigen::Array<bool, Eigen::Dynamic, 1>;
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

std::string shape_string(Index rows, Index cols);
std::string shape_string(const std::vector<Index>& shape);

/// Dense parameter tensor of rank 1 or 2.
///
/// Rank-1 tensors are stored as a 1×n row so that they broadcast over rows
/// without reshaping. `grad` stays empty until the first accumulation.
struct Tensor {
  std::vector<Index> shape;
  Matrix data;
  bool requires_grad = true;
  Matrix grad;

  static Tensor vector(Index n);
  static Tensor matrix(Index rows, Index cols);
  static Tensor from(std::vector<Index> shape, Matrix data);

  Index size() const { return data.size(); }
  bool has_grad() const { return grad.size() == data.size(); }
  void zero_grad();
  /// Adds `g` into the gradient slot, allocating it on first use.
  void accumulate_grad(const Matrix& g);
};

}  // namespace mian
