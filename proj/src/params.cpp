#include "mian/params.hpp"

namespace mian {

Tensor& ModelParams::add(const std::string& path, Tensor tensor) {
  auto [it, inserted] = entries_.emplace(path, std::move(tensor));
  if (!inserted) throw std::invalid_argument("ModelParams: duplicate path '" + path + "'");
  return it->second;
}

Tensor& ModelParams::at(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("ModelParams: unknown path '" + path + "'");
  return it->second;
}

const Tensor& ModelParams::at(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("ModelParams: unknown path '" + path + "'");
  return it->second;
}

bool ModelParams::contains(const std::string& path) const { return entries_.count(path) != 0; }

Index ModelParams::total_size() const {
  Index n = 0;
  for (const auto& [path, t] : entries_) n += t.size();
  return n;
}

std::vector<std::string> ModelParams::paths() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [path, t] : entries_) out.push_back(path);
  return out;
}

void ModelParams::zero_grad() {
  for (auto& [path, t] : entries_) t.zero_grad();
}

void ModelParams::scale_grad(Scalar s) {
  for (auto& [path, t] : entries_) {
    if (t.has_grad()) t.grad *= s;
  }
}

}  // namespace mian
