#include "mian/tensor.hpp"

#include <sstream>

namespace mian {

std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << '[' << rows << "x" << cols << ']';
  return os.str();
}

std::string shape_string(const std::vector<Index>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::vector(Index n) {
  return Tensor{{n}, Matrix::Zero(1, n), true, {}};
}

Tensor Tensor::matrix(Index rows, Index cols) {
  return Tensor{{rows, cols}, Matrix::Zero(rows, cols), true, {}};
}

Tensor Tensor::from(std::vector<Index> shape, Matrix data) {
  if (shape.empty() || shape.size() > 2) {
    throw DimensionError("Tensor: rank must be 1 or 2, got " + std::to_string(shape.size()));
  }
  Index product = 1;
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("Tensor: non-positive dimension in " + shape_string(shape));
    product *= d;
  }
  if (product != data.size()) {
    throw DimensionError("Tensor: shape " + shape_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  const Index rows = shape.size() == 1 ? 1 : shape[0];
  const Index cols = shape.back();
  if (data.rows() != rows || data.cols() != cols) {
    data = Eigen::Map<const Matrix>(data.data(), rows, cols).eval();
  }
  return Tensor{std::move(shape), std::move(data), true, {}};
}

void Tensor::zero_grad() {
  grad.setZero(data.rows(), data.cols());
}

void Tensor::accumulate_grad(const Matrix& g) {
  if (g.rows() != data.rows() || g.cols() != data.cols()) {
    throw DimensionError("Tensor: gradient " + shape_string(g.rows(), g.cols()) +
                         " does not match value " + shape_string(data.rows(), data.cols()));
  }
  if (!has_grad()) {
    grad = g;
  } else {
    grad += g;
  }
}

}  // namespace mian
