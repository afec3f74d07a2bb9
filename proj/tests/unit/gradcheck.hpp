#pragma once

#include "ecvd/core/rng.hpp"
#include "ecvd/nn/module.hpp"

#include <algorithm>
#include <cmath>

namespace ecvd::testing {

inline Tensor<double> random_tensor(const Shape& s, Rng& rng, double scale = 1.0) {
  Tensor<double> t(s);
  for (Index i = 0; i < t.size(); ++i) t.vec()(i) = scale * rng.normal();
  return t;
}

inline double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(a.norm() + b.norm(), 1e-12);
}

struct GradErrors {
  double input = 0;
  double params = 0;
};

/// Compares backward() against central differences of L = sum(y * r) for
/// the input and every trainable parameter, with the module in `mode`.
inline GradErrors check_gradients(nn::Module<double>& m, const Tensor<double>& x, nn::Mode mode, Rng& rng,
                                  double h = 1e-6) {
  const Tensor<double> y0 = m.forward(x, mode);
  const Tensor<double> r = random_tensor(y0.shape(), rng);
  auto loss = [&](const Tensor<double>& in) {
    const double v = m.forward(in, mode).vec().dot(r.vec());
    m.clear_cache();
    return v;
  };
  auto params = nn::parameters(m);
  nn::zero_grad(params);
  m.forward(x, mode);
  const Tensor<double> dx = m.backward(r);
  m.clear_cache();

  GradErrors e;
  Eigen::VectorXd num(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Tensor<double> a = x, b = x;
    a.vec()(i) += h;
    b.vec()(i) -= h;
    num(i) = (loss(a) - loss(b)) / (2 * h);
  }
  e.input = rel_error(dx.vec(), num);

  std::vector<double> an, nu;
  for (auto& p : params.params) {
    if (!p.param->trainable) continue;
    for (Index i = 0; i < p.param->size(); ++i) {
      const double v = p.param->value(i);
      p.param->value(i) = v + h;
      const double up = loss(x);
      p.param->value(i) = v - h;
      const double down = loss(x);
      p.param->value(i) = v;
      an.push_back(p.param->grad(i));
      nu.push_back((up - down) / (2 * h));
    }
  }
  if (!an.empty()) {
    e.params = rel_error(Eigen::Map<Eigen::VectorXd>(an.data(), Index(an.size())),
                         Eigen::Map<Eigen::VectorXd>(nu.data(), Index(nu.size())));
  }
  return e;
}

}  // namespace ecvd::testing
