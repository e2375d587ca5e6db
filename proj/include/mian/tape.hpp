#pragma once

#include "mian/tensor.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

namespace mian {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Gradient of the last backward pass; zeros if the node was not reached.
  Matrix grad() const;
  bool requires_grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

  Tape& tape() const;
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run reverse-mode tape.
///
/// Every operation appends one node; `backward` walks the nodes in exact
/// reverse order of recording. A tape is rebuilt for every forward pass.
/// Parameters enter through `param`, and their node gradients are added into
/// the bound Tensor's grad slot at the end of `backward`.
class Tape {
 public:
  enum class Mode { Train, Inference };

  /// Receives the node's own output value and its upstream gradient.
  using BackwardFn = std::function<void(Tape&, const Matrix& value, const Matrix& grad)>;

  explicit Tape(Mode mode = Mode::Train) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf that receives a gradient; read it back via Var::grad.
  Var variable(Matrix value);
  /// Leaf bound to a parameter tensor. In inference mode this is a constant.
  Var param(Tensor& tensor);
  /// Read-only parameters always enter as constants.
  Var param(const Tensor& tensor) { return constant(tensor.data); }

  /// Records a custom primitive. `backward` is dropped when no input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Matrix value, const std::vector<Var>& inputs, BackwardFn backward);

  /// Populates gradients of every reachable requires-grad node from a 1×1 loss.
  /// A second call without zero_grad() is an error.
  void backward(const Var& loss);
  void zero_grad();

  /// Adds `g` into the gradient of `v`; no-op when `v` does not require a gradient.
  template <typename Derived>
  void accumulate(const Var& v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  const Matrix& value(const Var& v) const { return nodes_[v.id_].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id_].requires_grad; }
  Matrix grad(const Var& v) const;

  Mode mode() const { return mode_; }
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    Tensor* bound = nullptr;
  };

  Var push(Node node);
  void check_owned(const Var& v) const;

  Mode mode_;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace mian
