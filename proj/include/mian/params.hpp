#pragma once

#include "mian/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace mian {

/// Named collection of learnable tensors keyed by stable dotted paths,
/// e.g. "hlm.text.l2l.layer0.head3.Wq". Iteration is in path order.
class ModelParams {
 public:
  Tensor& add(const std::string& path, Tensor tensor);
  Tensor& at(const std::string& path);
  const Tensor& at(const std::string& path) const;
  bool contains(const std::string& path) const;

  std::size_t size() const { return entries_.size(); }
  Index total_size() const;
  std::vector<std::string> paths() const;

  void zero_grad();
  /// Multiplies every allocated gradient by `s`.
  void scale_grad(Scalar s);

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, Tensor> entries_;
};

}  // namespace mian
