#pragma once

#include "ecvd/nn/module.hpp"

#include <cmath>
#include <vector>

namespace ecvd::nn {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double l2 = 0.0;  // added to the gradient of params with decay == true
};

/// Adam over the trainable members of a parameter set. Frozen parameters are
/// skipped entirely and never written.
template <typename Scalar>
class Adam {
 public:
  using Vector = typename Tensor<Scalar>::Vector;

  Adam(ParamSet<Scalar> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (auto& p : params_.params) {
      m_.push_back(Vector::Zero(p.param->size()));
      v_.push_back(Vector::Zero(p.param->size()));
    }
  }

  void zero_grad() { nn::zero_grad(params_); }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(options_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, double(t_));
    const Scalar b1 = Scalar(options_.beta1), b2 = Scalar(options_.beta2);
    for (std::size_t i = 0; i < params_.params.size(); ++i) {
      Param<Scalar>& p = *params_.params[i].param;
      if (!p.trainable) continue;
      Vector g = p.grad;
      if (p.decay && options_.l2 > 0) g += Scalar(options_.l2) * p.value;
      m_[i] = b1 * m_[i] + (1 - b1) * g;
      v_[i] = b2 * v_[i] + (1 - b2) * g.cwiseProduct(g);
      const Scalar lr = Scalar(options_.learning_rate) * p.lr_factor;
      const auto mhat = m_[i].array() / Scalar(bc1);
      const auto vhat = v_[i].array() / Scalar(bc2);
      p.value.array() -= lr * mhat / (vhat.sqrt() + Scalar(options_.epsilon));
    }
  }

  long steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

 private:
  ParamSet<Scalar> params_;
  AdamOptions options_;
  std::vector<Vector> m_, v_;
  long t_ = 0;
};

}  // namespace ecvd::nn
