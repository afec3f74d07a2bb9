#pragma once

#include "ecvd/nn/module.hpp"

#include <string>
#include <utility>
#include <vector>

namespace ecvd::nn {

/// Ordered chain of named children. Children names become parameter-name
/// prefixes, so a Sequential named "features" holding "3" yields
/// "features.3.squeeze.weight" and so on.
template <typename Scalar>
class Sequential final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  Sequential() = default;
  Sequential(const Sequential& other) { *this = other; }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;
  Sequential& operator=(const Sequential& other) {
    if (this == &other) return *this;
    children_.clear();
    for (const auto& [name, child] : other.children_) children_.emplace_back(name, child->clone());
    return *this;
  }

  Sequential& add(std::string name, ModulePtr<Scalar> child) {
    children_.emplace_back(std::move(name), std::move(child));
    return *this;
  }

  template <typename M, typename... Args>
  M& emplace(std::string name, Args&&... args) {
    auto ptr = std::make_unique<M>(std::forward<Args>(args)...);
    M& ref = *ptr;
    children_.emplace_back(std::move(name), std::move(ptr));
    return ref;
  }

  T forward(const T& x, Mode mode) override {
    T y = x;
    for (auto& [name, child] : children_) y = child->forward(y, mode);
    return y;
  }

  T backward(const T& grad_out) override {
    T g = grad_out;
    for (auto it = children_.rbegin(); it != children_.rend(); ++it) g = it->second->backward(g);
    return g;
  }

  Shape output_shape(const Shape& in) const override {
    Shape s = in;
    for (const auto& [name, child] : children_) s = child->output_shape(s);
    return s;
  }

  ModulePtr<Scalar> clone() const override { return std::make_unique<Sequential>(*this); }
  std::string kind() const override { return "Sequential"; }

  void collect(const std::string& prefix, ParamSet<Scalar>& out) override {
    for (auto& [name, child] : children_) child->collect(join_name(prefix, name), out);
  }

  void clear_cache() override {
    for (auto& [name, child] : children_) child->clear_cache();
  }

  void visit(const std::function<void(Module<Scalar>&)>& fn) override {
    fn(*this);
    for (auto& [name, child] : children_) child->visit(fn);
  }

  std::size_t size() const { return children_.size(); }
  bool empty() const { return children_.empty(); }
  const std::string& name(std::size_t i) const { return children_.at(i).first; }
  Module<Scalar>& child(std::size_t i) { return *children_.at(i).second; }
  const Module<Scalar>& child(std::size_t i) const { return *children_.at(i).second; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& c : children_) out.push_back(c.first);
    return out;
  }

  /// Position of the named child, or -1.
  std::ptrdiff_t find(const std::string& name) const {
    for (std::size_t i = 0; i < children_.size(); ++i) {
      if (children_[i].first == name) return static_cast<std::ptrdiff_t>(i);
    }
    return -1;
  }

  /// Deep copy of children [begin, end).
  Sequential slice(std::size_t begin, std::size_t end) const {
    Sequential out;
    for (std::size_t i = begin; i < end && i < children_.size(); ++i) {
      out.children_.emplace_back(children_[i].first, children_[i].second->clone());
    }
    return out;
  }

  /// Runs children [begin, end) only.
  T forward_range(const T& x, Mode mode, std::size_t begin, std::size_t end) {
    T y = x;
    for (std::size_t i = begin; i < end && i < children_.size(); ++i) y = children_[i].second->forward(y, mode);
    return y;
  }

  T backward_range(const T& grad_out, std::size_t begin, std::size_t end) {
    T g = grad_out;
    for (std::size_t i = std::min(end, children_.size()); i > begin; --i) g = children_[i - 1].second->backward(g);
    return g;
  }

 private:
  std::vector<std::pair<std::string, ModulePtr<Scalar>>> children_;
};

}  // namespace ecvd::nn
