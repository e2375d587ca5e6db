#include "mian/tape.hpp"

#include <stdexcept>

namespace mian {

const Matrix& Var::value() const { return tape().value(*this); }
Matrix Var::grad() const { return tape().grad(*this); }
bool Var::requires_grad() const { return tape().requires_grad(*this); }

Tape& Var::tape() const {
  if (tape_ == nullptr) throw std::logic_error("Var: use of an unbound handle");
  return *tape_;
}

Var Tape::push(Node node) {
  if (!node.value.allFinite()) {
    throw NumericError("Tape: non-finite value recorded at node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(const Var& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw std::logic_error("Tape: Var belongs to a different tape");
  }
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = mode_ == Mode::Train;
  return push(std::move(n));
}

Var Tape::param(Tensor& tensor) {
  Node n;
  n.value = tensor.data;
  if (mode_ == Mode::Train && tensor.requires_grad) {
    n.requires_grad = true;
    n.bound = &tensor;
  }
  return push(std::move(n));
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, BackwardFn backward) {
  if (backward_done_) throw std::logic_error("Tape: recording after backward");
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    check_owned(in);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::backward(const Var& loss) {
  check_owned(loss);
  if (backward_done_) {
    throw std::logic_error("Tape: backward called twice without zero_grad");
  }
  const Matrix& lv = nodes_[loss.id_].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionError("Tape: backward needs a scalar loss, got " +
                         shape_string(lv.rows(), lv.cols()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id_].requires_grad) return;

  nodes_[loss.id_].grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, n.value, n.grad);
  }
  for (Node& n : nodes_) {
    if (n.bound != nullptr && n.grad.size() != 0) n.bound->accumulate_grad(n.grad);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.resize(0, 0);
  backward_done_ = false;
}

Matrix Tape::grad(const Var& v) const {
  check_owned(v);
  const Node& n = nodes_[v.id_];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

}  // namespace mian
