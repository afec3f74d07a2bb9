#pragma once

#include "ecvd/core/tensor.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ecvd::nn {

/// Eval: inference with stored statistics, nothing cached.
/// EvalGrad: inference semantics, activations cached so backward() works.
/// Train: batch statistics, running averages updated, activations cached.
enum class Mode { Eval, EvalGrad, Train };

inline bool records(Mode mode) { return mode != Mode::Eval; }

template <typename Scalar>
struct Param {
  using Vector = typename Tensor<Scalar>::Vector;

  std::vector<Index> dims;
  Vector value;
  Vector grad;
  bool trainable = true;
  bool decay = true;
  Scalar lr_factor = 1;

  Param() = default;
  Param(std::vector<Index> d, bool decay_ = true) : dims(std::move(d)), decay(decay_) {
    Index n = 1;
    for (Index v : dims) n *= v;
    value = Vector::Zero(n);
    grad = Vector::Zero(n);
  }

  Index size() const { return value.size(); }
};

/// Non-learnable state that is still serialized (batch-norm running stats).
template <typename Scalar>
struct Buffer {
  std::vector<Index> dims;
  typename Tensor<Scalar>::Vector value;
};

template <typename Scalar>
struct ParamSet {
  struct NamedParam {
    std::string name;
    Param<Scalar>* param;
  };
  struct NamedBuffer {
    std::string name;
    Buffer<Scalar>* buffer;
  };
  std::vector<NamedParam> params;
  std::vector<NamedBuffer> buffers;

  Index count(bool trainable_only = false) const {
    Index n = 0;
    for (const auto& p : params) {
      if (!trainable_only || p.param->trainable) n += p.param->size();
    }
    return n;
  }
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  if (prefix.empty()) return name;
  if (name.empty()) return prefix;
  return prefix + "." + name;
}

template <typename Scalar>
class Module {
 public:
  using T = Tensor<Scalar>;

  virtual ~Module() = default;

  virtual T forward(const T& x, Mode mode) = 0;
  /// Gradient w.r.t. the input of the most recent recorded forward;
  /// accumulates parameter gradients of trainable parameters.
  virtual T backward(const T& grad_out) = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual std::unique_ptr<Module> clone() const = 0;
  virtual std::string kind() const = 0;
  virtual void collect(const std::string& /*prefix*/, ParamSet<Scalar>& /*out*/) {}
  /// Releases cached activations.
  virtual void clear_cache() {}
  /// Visits this module and, for containers, every descendant.
  virtual void visit(const std::function<void(Module&)>& fn) { fn(*this); }
};

template <typename Scalar>
using ModulePtr = std::unique_ptr<Module<Scalar>>;

template <typename Scalar>
ParamSet<Scalar> parameters(Module<Scalar>& m, const std::string& prefix = "") {
  ParamSet<Scalar> set;
  m.collect(prefix, set);
  return set;
}

template <typename Scalar>
void set_trainable(ParamSet<Scalar>& set, bool trainable) {
  for (auto& p : set.params) p.param->trainable = trainable;
}

template <typename Scalar>
void zero_grad(ParamSet<Scalar>& set) {
  for (auto& p : set.params) p.param->grad.setZero();
}

}  // namespace ecvd::nn
