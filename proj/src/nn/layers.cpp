#include "ecvd/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ecvd::nn {

namespace {

Index floor_div(Index a, Index b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
Index ceil_div(Index a, Index b) { return -floor_div(-a, b); }

void check_channels(const Shape& s, Index expected, const char* layer) {
  if (s.c != expected) {
    throw Error(std::string(layer) + ": expected " + std::to_string(expected) + " input channels, got " +
                s.str());
  }
}

// Output columns ox for which ox*stride - padding + k lands inside [0, width).
std::pair<Index, Index> valid_range(Index k, Index stride, Index padding, Index width, Index out) {
  const Index lo = std::max<Index>(0, ceil_div(padding - k, stride));
  const Index hi = std::min<Index>(out - 1, floor_div(width - 1 + padding - k, stride));
  return {lo, hi};
}

}  // namespace

Index pooled_extent(Index in, Index kernel, Index stride, Index padding, bool ceil_mode) {
  const Index span = in + 2 * padding - kernel;
  if (span < 0) {
    throw Error("window of " + std::to_string(kernel) + " does not fit input extent " + std::to_string(in));
  }
  Index out = (ceil_mode ? ceil_div(span, stride) : span / stride) + 1;
  if (ceil_mode && (out - 1) * stride >= in + padding) --out;
  return out;
}

// ---------------------------------------------------------------- Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(Index in, Index out, Index kernel, Index stride, Index padding, Index groups,
                       bool bias)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), padding_(padding), groups_(groups),
      weight_({out, in / groups, kernel, kernel}) {
  if (in <= 0 || out <= 0 || kernel <= 0 || stride <= 0 || padding < 0 || groups <= 0 ||
      in % groups != 0 || out % groups != 0) {
    throw Error("Conv2d: invalid configuration");
  }
  if (bias) bias_.emplace(std::vector<Index>{out}, false);
}

template <typename Scalar>
Shape Conv2d<Scalar>::output_shape(const Shape& in) const {
  check_channels(in, in_, "Conv2d");
  return {in.n, out_, pooled_extent(in.h, kernel_, stride_, padding_, false),
          pooled_extent(in.w, kernel_, stride_, padding_, false)};
}

template <typename Scalar>
void Conv2d<Scalar>::im2col(const T& x, Index n, Index g, typename T::Matrix& cols, Index oh,
                            Index ow) const {
  const Index cin_g = in_ / groups_;
  const Index k = kernel_;
  const Index H = x.shape().h, W = x.shape().w;
  cols.resize(cin_g * k * k, oh * ow);
  for (Index c = 0; c < cin_g; ++c) {
    const auto plane = x.plane(n, g * cin_g + c);
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* row = cols.row((c * k + ky) * k + kx).data();
        const auto [xlo, xhi] = valid_range(kx, stride_, padding_, W, ow);
        for (Index oy = 0; oy < oh; ++oy) {
          Scalar* dst = row + oy * ow;
          const Index iy = oy * stride_ - padding_ + ky;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + ow, Scalar(0));
            continue;
          }
          const Scalar* src = plane.data() + iy * W;
          for (Index ox = 0; ox < xlo; ++ox) dst[ox] = 0;
          for (Index ox = xlo; ox <= xhi; ++ox) dst[ox] = src[ox * stride_ - padding_ + kx];
          for (Index ox = std::max(xhi + 1, xlo); ox < ow; ++ox) dst[ox] = 0;
        }
      }
    }
  }
}

template <typename Scalar>
void Conv2d<Scalar>::col2im(const typename T::Matrix& cols, T& dx, Index n, Index g, Index oh,
                            Index ow) const {
  const Index cin_g = in_ / groups_;
  const Index k = kernel_;
  const Index H = dx.shape().h, W = dx.shape().w;
  for (Index c = 0; c < cin_g; ++c) {
    auto plane = dx.plane(n, g * cin_g + c);
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* row = cols.row((c * k + ky) * k + kx).data();
        const auto [xlo, xhi] = valid_range(kx, stride_, padding_, W, ow);
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride_ - padding_ + ky;
          if (iy < 0 || iy >= H) continue;
          Scalar* dst = plane.data() + iy * W;
          const Scalar* src = row + oy * ow;
          for (Index ox = xlo; ox <= xhi; ++ox) dst[ox * stride_ - padding_ + kx] += src[ox];
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::forward(const T& x, Mode mode) {
  const Shape os = output_shape(x.shape());
  const Shape& s = x.shape();
  const Index oh = os.h, ow = os.w, k = kernel_;
  T y(os);

  if (depthwise()) {
    for (Index n = 0; n < s.n; ++n) {
      for (Index c = 0; c < in_; ++c) {
        const auto in = x.plane(n, c);
        auto out = y.plane(n, c);
        const Scalar* w = weight_.value.data() + c * k * k;
        for (Index ky = 0; ky < k; ++ky) {
          for (Index kx = 0; kx < k; ++kx) {
            const Scalar wv = w[ky * k + kx];
            const auto [xlo, xhi] = valid_range(kx, stride_, padding_, s.w, ow);
            for (Index oy = 0; oy < oh; ++oy) {
              const Index iy = oy * stride_ - padding_ + ky;
              if (iy < 0 || iy >= s.h) continue;
              const Scalar* src = in.data() + iy * s.w - padding_ + kx;
              Scalar* dst = out.data() + oy * ow;
              if (stride_ == 1) {
                for (Index ox = xlo; ox <= xhi; ++ox) dst[ox] += wv * src[ox];
              } else {
                for (Index ox = xlo; ox <= xhi; ++ox) dst[ox] += wv * src[ox * stride_];
              }
            }
          }
        }
      }
    }
  } else {
    const Index cin_g = in_ / groups_, cout_g = out_ / groups_;
    const typename T::ConstMatrixMap W(weight_.value.data(), out_, cin_g * k * k);
    const bool pointwise = k == 1 && stride_ == 1 && padding_ == 0;
    typename T::Matrix cols;
    for (Index n = 0; n < s.n; ++n) {
      for (Index g = 0; g < groups_; ++g) {
        auto dst = y.sample(n).middleRows(g * cout_g, cout_g);
        if (pointwise) {
          dst.noalias() = W.middleRows(g * cout_g, cout_g) * x.sample(n).middleRows(g * cin_g, cin_g);
        } else {
          im2col(x, n, g, cols, oh, ow);
          dst.noalias() = W.middleRows(g * cout_g, cout_g) * cols;
        }
      }
    }
  }
  if (bias_) {
    for (Index n = 0; n < s.n; ++n) y.sample(n).colwise() += bias_->value;
  }
  if (records(mode)) input_ = x;
  return y;
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::backward(const T& grad_out) {
  if (input_.empty()) throw Error("Conv2d::backward without a recorded forward");
  const Shape& s = input_.shape();
  const Shape& os = grad_out.shape();
  const Index oh = os.h, ow = os.w, k = kernel_;
  const bool want_w = weight_.trainable;
  T dx(s);

  if (depthwise()) {
    for (Index n = 0; n < s.n; ++n) {
      for (Index c = 0; c < in_; ++c) {
        const auto in = input_.plane(n, c);
        const auto dy = grad_out.plane(n, c);
        auto din = dx.plane(n, c);
        const Scalar* w = weight_.value.data() + c * k * k;
        Scalar* dw = weight_.grad.data() + c * k * k;
        for (Index ky = 0; ky < k; ++ky) {
          for (Index kx = 0; kx < k; ++kx) {
            const Scalar wv = w[ky * k + kx];
            Scalar acc = 0;
            const auto [xlo, xhi] = valid_range(kx, stride_, padding_, s.w, ow);
            for (Index oy = 0; oy < oh; ++oy) {
              const Index iy = oy * stride_ - padding_ + ky;
              if (iy < 0 || iy >= s.h) continue;
              const Index base = iy * s.w - padding_ + kx;
              const Scalar* src = in.data() + base;
              Scalar* dsrc = din.data() + base;
              const Scalar* g = dy.data() + oy * ow;
              for (Index ox = xlo; ox <= xhi; ++ox) {
                dsrc[ox * stride_] += wv * g[ox];
                acc += g[ox] * src[ox * stride_];
              }
            }
            if (want_w) dw[ky * k + kx] += acc;
          }
        }
      }
    }
  } else {
    const Index cin_g = in_ / groups_, cout_g = out_ / groups_;
    const Index kk = cin_g * k * k;
    const typename T::ConstMatrixMap W(weight_.value.data(), out_, kk);
    typename T::MatrixMap dW(weight_.grad.data(), out_, kk);
    const bool pointwise = k == 1 && stride_ == 1 && padding_ == 0;
    typename T::Matrix cols, dcols;
    for (Index n = 0; n < s.n; ++n) {
      for (Index g = 0; g < groups_; ++g) {
        const auto dy = grad_out.sample(n).middleRows(g * cout_g, cout_g);
        if (pointwise) {
          const auto xin = input_.sample(n).middleRows(g * cin_g, cin_g);
          if (want_w) dW.middleRows(g * cout_g, cout_g).noalias() += dy * xin.transpose();
          dx.sample(n).middleRows(g * cin_g, cin_g).noalias() +=
              W.middleRows(g * cout_g, cout_g).transpose() * dy;
        } else {
          im2col(input_, n, g, cols, oh, ow);
          if (want_w) dW.middleRows(g * cout_g, cout_g).noalias() += dy * cols.transpose();
          dcols.noalias() = W.middleRows(g * cout_g, cout_g).transpose() * dy;
          col2im(dcols, dx, n, g, oh, ow);
        }
      }
    }
  }
  if (bias_ && bias_->trainable) {
    for (Index n = 0; n < s.n; ++n) bias_->grad += grad_out.sample(n).rowwise().sum();
  }
  return dx;
}

template <typename Scalar>
void Conv2d<Scalar>::collect(const std::string& prefix, ParamSet<Scalar>& out) {
  out.params.push_back({join_name(prefix, "weight"), &weight_});
  if (bias_) out.params.push_back({join_name(prefix, "bias"), &*bias_});
}

// ----------------------------------------------------------- BatchNorm2d

template <typename Scalar>
BatchNorm2d<Scalar>::BatchNorm2d(Index channels, Scalar eps, Scalar momentum)
    : channels_(channels), eps_(eps), momentum_(momentum), gamma_({channels}), beta_({channels}) {
  gamma_.value.setOnes();
  running_mean_ = {{channels}, T::Vector::Zero(channels)};
  running_var_ = {{channels}, T::Vector::Ones(channels)};
}

template <typename Scalar>
Tensor<Scalar> BatchNorm2d<Scalar>::forward(const T& x, Mode mode) {
  check_channels(x.shape(), channels_, "BatchNorm2d");
  const Shape& s = x.shape();
  const Index m = s.n * s.plane();
  typename T::Vector mean(channels_), inv_std(channels_);

  if (mode == Mode::Train) {
    mean.setZero();
    typename T::Vector var = T::Vector::Zero(channels_);
    for (Index n = 0; n < s.n; ++n) mean += x.sample(n).rowwise().sum();
    mean /= Scalar(m);
    for (Index n = 0; n < s.n; ++n) {
      var += (x.sample(n).colwise() - mean).array().square().matrix().rowwise().sum();
    }
    var /= Scalar(m);
    inv_std = (var.array() + eps_).rsqrt().matrix();
    const Scalar unbias = m > 1 ? Scalar(m) / Scalar(m - 1) : Scalar(1);
    running_mean_.value = (1 - momentum_) * running_mean_.value + momentum_ * mean;
    running_var_.value = (1 - momentum_) * running_var_.value + momentum_ * unbias * var;
  } else {
    mean = running_mean_.value;
    inv_std = (running_var_.value.array() + eps_).rsqrt().matrix();
  }

  T y(s);
  T xhat(s);
  for (Index n = 0; n < s.n; ++n) {
    xhat.sample(n) = (x.sample(n).colwise() - mean).array().colwise() * inv_std.array();
    y.sample(n) = (xhat.sample(n).array().colwise() * gamma_.value.array()).colwise() + beta_.value.array();
  }
  if (records(mode)) {
    xhat_ = std::move(xhat);
    inv_std_ = inv_std;
    cached_train_ = mode == Mode::Train;
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> BatchNorm2d<Scalar>::backward(const T& grad_out) {
  if (xhat_.empty()) throw Error("BatchNorm2d::backward without a recorded forward");
  const Shape& s = xhat_.shape();
  const Scalar m = Scalar(s.n * s.plane());
  typename T::Vector sum_dy = T::Vector::Zero(channels_);
  typename T::Vector sum_dy_xhat = T::Vector::Zero(channels_);
  for (Index n = 0; n < s.n; ++n) {
    sum_dy += grad_out.sample(n).rowwise().sum();
    sum_dy_xhat += grad_out.sample(n).cwiseProduct(xhat_.sample(n)).rowwise().sum();
  }
  if (gamma_.trainable) gamma_.grad += sum_dy_xhat;
  if (beta_.trainable) beta_.grad += sum_dy;

  T dx(s);
  const typename T::Vector scale = gamma_.value.cwiseProduct(inv_std_);
  if (cached_train_) {
    // dx = gamma*inv_std/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
    const typename T::Vector a = scale / m;
    for (Index n = 0; n < s.n; ++n) {
      auto dxs = dx.sample(n);
      dxs = (m * grad_out.sample(n)).colwise() - sum_dy;
      dxs -= (xhat_.sample(n).array().colwise() * sum_dy_xhat.array()).matrix();
      dxs = dxs.array().colwise() * a.array();
    }
  } else {
    for (Index n = 0; n < s.n; ++n) dx.sample(n) = grad_out.sample(n).array().colwise() * scale.array();
  }
  return dx;
}

template <typename Scalar>
void BatchNorm2d<Scalar>::collect(const std::string& prefix, ParamSet<Scalar>& out) {
  out.params.push_back({join_name(prefix, "weight"), &gamma_});
  out.params.push_back({join_name(prefix, "bias"), &beta_});
  out.buffers.push_back({join_name(prefix, "running_mean"), &running_mean_});
  out.buffers.push_back({join_name(prefix, "running_var"), &running_var_});
}

// ------------------------------------------------------------ Activation

template <typename Scalar>
std::string Activation<Scalar>::kind() const {
  switch (kind_) {
    case ActivationKind::ReLU: return "ReLU";
    case ActivationKind::ReLU6: return "ReLU6";
    case ActivationKind::SiLU: return "SiLU";
    case ActivationKind::Sigmoid: return "Sigmoid";
  }
  return "Activation";
}

template <typename Scalar>
Tensor<Scalar> Activation<Scalar>::forward(const T& x, Mode mode) {
  T y(x.shape());
  const auto a = x.vec().array();
  switch (kind_) {
    case ActivationKind::ReLU: y.vec() = a.max(Scalar(0)).matrix(); break;
    case ActivationKind::ReLU6: y.vec() = a.max(Scalar(0)).min(Scalar(6)).matrix(); break;
    case ActivationKind::SiLU: y.vec() = (a / (Scalar(1) + (-a).exp())).matrix(); break;
    case ActivationKind::Sigmoid: y.vec() = (Scalar(1) / (Scalar(1) + (-a).exp())).matrix(); break;
  }
  if (records(mode)) cache_ = kind_ == ActivationKind::Sigmoid ? y : x;
  return y;
}

template <typename Scalar>
Tensor<Scalar> Activation<Scalar>::backward(const T& grad_out) {
  if (cache_.empty()) throw Error(kind() + "::backward without a recorded forward");
  T dx(grad_out.shape());
  const auto g = grad_out.vec().array();
  const auto c = cache_.vec().array();
  switch (kind_) {
    case ActivationKind::ReLU: dx.vec() = (c > Scalar(0)).select(g, Scalar(0)).matrix(); break;
    case ActivationKind::ReLU6:
      dx.vec() = ((c > Scalar(0)) && (c < Scalar(6))).select(g, Scalar(0)).matrix();
      break;
    case ActivationKind::SiLU: {
      const auto sig = Scalar(1) / (Scalar(1) + (-c).exp());
      dx.vec() = (g * sig * (Scalar(1) + c * (Scalar(1) - sig))).matrix();
      break;
    }
    case ActivationKind::Sigmoid: dx.vec() = (g * c * (Scalar(1) - c)).matrix(); break;
  }
  return dx;
}

// ------------------------------------------------------------- MaxPool2d

template <typename Scalar>
Shape MaxPool2d<Scalar>::output_shape(const Shape& in) const {
  return {in.n, in.c, pooled_extent(in.h, kernel_, stride_, padding_, ceil_mode_),
          pooled_extent(in.w, kernel_, stride_, padding_, ceil_mode_)};
}

template <typename Scalar>
Tensor<Scalar> MaxPool2d<Scalar>::forward(const T& x, Mode mode) {
  const Shape& s = x.shape();
  const Shape os = output_shape(s);
  T y(os);
  const bool keep = records(mode);
  if (keep) {
    argmax_.assign(static_cast<std::size_t>(os.size()), 0);
    in_shape_ = s;
  }
  Index o = 0;
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      const Index base = (n * s.c + c) * s.plane();
      const Scalar* in = x.data() + base;
      for (Index oy = 0; oy < os.h; ++oy) {
        const Index y0 = std::max<Index>(oy * stride_ - padding_, 0);
        const Index y1 = std::min<Index>(oy * stride_ - padding_ + kernel_, s.h);
        for (Index ox = 0; ox < os.w; ++ox, ++o) {
          const Index x0 = std::max<Index>(ox * stride_ - padding_, 0);
          const Index x1 = std::min<Index>(ox * stride_ - padding_ + kernel_, s.w);
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Index arg = y0 * s.w + x0;
          for (Index iy = y0; iy < y1; ++iy) {
            for (Index ix = x0; ix < x1; ++ix) {
              const Scalar v = in[iy * s.w + ix];
              if (v > best) {
                best = v;
                arg = iy * s.w + ix;
              }
            }
          }
          y.data()[o] = best;
          if (keep) argmax_[static_cast<std::size_t>(o)] = base + arg;
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> MaxPool2d<Scalar>::backward(const T& grad_out) {
  if (argmax_.empty()) throw Error("MaxPool2d::backward without a recorded forward");
  T dx(in_shape_);
  for (Index o = 0; o < grad_out.size(); ++o) dx.data()[argmax_[static_cast<std::size_t>(o)]] += grad_out.data()[o];
  return dx;
}

// ------------------------------------------------------------- AvgPool2d

template <typename Scalar>
Shape AvgPool2d<Scalar>::output_shape(const Shape& in) const {
  return {in.n, in.c, pooled_extent(in.h, kernel_, stride_, padding_, false),
          pooled_extent(in.w, kernel_, stride_, padding_, false)};
}

template <typename Scalar>
Tensor<Scalar> AvgPool2d<Scalar>::forward(const T& x, Mode /*mode*/) {
  const Shape& s = x.shape();
  const Shape os = output_shape(s);
  in_shape_ = s;
  T y(os);
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      const auto in = x.plane(n, c);
      auto out = y.plane(n, c);
      for (Index oy = 0; oy < os.h; ++oy) {
        const Index ys = oy * stride_ - padding_;
        const Index ye = std::min(ys + kernel_, s.h + padding_);
        const Index y0 = std::max<Index>(ys, 0), y1 = std::min(ye, s.h);
        for (Index ox = 0; ox < os.w; ++ox) {
          const Index xs = ox * stride_ - padding_;
          const Index xe = std::min(xs + kernel_, s.w + padding_);
          const Index x0 = std::max<Index>(xs, 0), x1 = std::min(xe, s.w);
          const Scalar count = Scalar((ye - ys) * (xe - xs));
          out(oy, ox) = in.block(y0, x0, y1 - y0, x1 - x0).sum() / count;
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> AvgPool2d<Scalar>::backward(const T& grad_out) {
  const Shape& s = in_shape_;
  const Shape& os = grad_out.shape();
  T dx(s);
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      const auto g = grad_out.plane(n, c);
      auto din = dx.plane(n, c);
      for (Index oy = 0; oy < os.h; ++oy) {
        const Index ys = oy * stride_ - padding_;
        const Index ye = std::min(ys + kernel_, s.h + padding_);
        const Index y0 = std::max<Index>(ys, 0), y1 = std::min(ye, s.h);
        for (Index ox = 0; ox < os.w; ++ox) {
          const Index xs = ox * stride_ - padding_;
          const Index xe = std::min(xs + kernel_, s.w + padding_);
          const Index x0 = std::max<Index>(xs, 0), x1 = std::min(xe, s.w);
          const Scalar count = Scalar((ye - ys) * (xe - xs));
          din.block(y0, x0, y1 - y0, x1 - x0).array() += g(oy, ox) / count;
        }
      }
    }
  }
  return dx;
}

// --------------------------------------------------------- GlobalAvgPool

template <typename Scalar>
Tensor<Scalar> GlobalAvgPool<Scalar>::forward(const T& x, Mode /*mode*/) {
  in_shape_ = x.shape();
  T y(output_shape(x.shape()));
  for (Index n = 0; n < x.shape().n; ++n) y.sample(n) = x.sample(n).rowwise().mean();
  return y;
}

template <typename Scalar>
Tensor<Scalar> GlobalAvgPool<Scalar>::backward(const T& grad_out) {
  T dx(in_shape_);
  const Scalar inv = Scalar(1) / Scalar(in_shape_.plane());
  for (Index n = 0; n < in_shape_.n; ++n) {
    dx.sample(n).colwise() = grad_out.sample(n).col(0) * inv;
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename Scalar>
Linear<Scalar>::Linear(Index in, Index out) : in_(in), out_(out), weight_({out, in}), bias_({out}, false) {}

template <typename Scalar>
Shape Linear<Scalar>::output_shape(const Shape& in) const {
  if (in.sample_size() != in_) {
    throw Error("Linear: expected " + std::to_string(in_) + " input features, got " + in.str());
  }
  return {in.n, out_, 1, 1};
}

template <typename Scalar>
Tensor<Scalar> Linear<Scalar>::forward(const T& x, Mode mode) {
  T y(output_shape(x.shape()));
  const typename T::ConstMatrixMap W(weight_.value.data(), out_, in_);
  y.rows().noalias() = x.rows() * W.transpose();
  y.rows().rowwise() += bias_.value.transpose();
  if (records(mode)) input_ = x;
  return y;
}

template <typename Scalar>
Tensor<Scalar> Linear<Scalar>::backward(const T& grad_out) {
  if (input_.empty()) throw Error("Linear::backward without a recorded forward");
  const typename T::ConstMatrixMap W(weight_.value.data(), out_, in_);
  const auto dy = grad_out.rows();
  if (weight_.trainable) {
    typename T::MatrixMap dW(weight_.grad.data(), out_, in_);
    dW.noalias() += dy.transpose() * input_.rows();
  }
  if (bias_.trainable) bias_.grad += dy.colwise().sum().transpose();
  T dx(input_.shape());
  dx.rows().noalias() = dy * W;
  return dx;
}

template <typename Scalar>
void Linear<Scalar>::collect(const std::string& prefix, ParamSet<Scalar>& out) {
  out.params.push_back({join_name(prefix, "weight"), &weight_});
  out.params.push_back({join_name(prefix, "bias"), &bias_});
}

// -------------------------------------------------------- ChannelShuffle

template <typename Scalar>
Tensor<Scalar> ChannelShuffle<Scalar>::permute(const T& x, bool inverse) const {
  const Shape& s = x.shape();
  if (s.c % groups_ != 0) throw Error("ChannelShuffle: channels not divisible by groups");
  const Index per = s.c / groups_;
  T y(s);
  for (Index n = 0; n < s.n; ++n) {
    for (Index i = 0; i < groups_; ++i) {
      for (Index j = 0; j < per; ++j) {
        const Index src = i * per + j;
        const Index dst = j * groups_ + i;
        if (inverse) {
          y.sample(n).row(src) = x.sample(n).row(dst);
        } else {
          y.sample(n).row(dst) = x.sample(n).row(src);
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> ChannelShuffle<Scalar>::forward(const T& x, Mode /*mode*/) {
  return permute(x, false);
}

template <typename Scalar>
Tensor<Scalar> ChannelShuffle<Scalar>::backward(const T& grad_out) {
  return permute(grad_out, true);
}

// ---------------------------------------------------------- Initializers

template <typename Scalar>
void kaiming_normal_fan_out(Conv2d<Scalar>& conv, Rng& rng) {
  const double fan_out = double(conv.out_channels() * conv.kernel() * conv.kernel());
  const double stddev = std::sqrt(2.0 / fan_out);
  for (Index i = 0; i < conv.weight().size(); ++i) conv.weight().value[i] = Scalar(stddev * rng.normal());
  if (conv.has_bias()) conv.bias().value.setZero();
}

template <typename Scalar>
void glorot_uniform(Conv2d<Scalar>& conv, Rng& rng) {
  const double kk = double(conv.kernel() * conv.kernel());
  const double fan_in = kk * double(conv.in_channels() / conv.groups());
  const double fan_out = kk * double(conv.out_channels() / conv.groups());
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (Index i = 0; i < conv.weight().size(); ++i) conv.weight().value[i] = Scalar(rng.uniform(-limit, limit));
  if (conv.has_bias()) conv.bias().value.setZero();
}

template <typename Scalar>
void glorot_uniform(Linear<Scalar>& fc, Rng& rng) {
  const double limit = std::sqrt(6.0 / double(fc.in_features() + fc.out_features()));
  for (Index i = 0; i < fc.weight().size(); ++i) fc.weight().value[i] = Scalar(rng.uniform(-limit, limit));
  fc.bias().value.setZero();
}

template <typename Scalar>
void normal_init(Linear<Scalar>& fc, Rng& rng, double stddev) {
  for (Index i = 0; i < fc.weight().size(); ++i) fc.weight().value[i] = Scalar(stddev * rng.normal());
  fc.bias().value.setZero();
}

#define ECVD_INSTANTIATE(S)                                          \
  template class Conv2d<S>;                                          \
  template class BatchNorm2d<S>;                                     \
  template class Activation<S>;                                      \
  template class MaxPool2d<S>;                                       \
  template class AvgPool2d<S>;                                       \
  template class GlobalAvgPool<S>;                                   \
  template class Linear<S>;                                          \
  template class ChannelShuffle<S>;                                  \
  template void kaiming_normal_fan_out<S>(Conv2d<S>&, Rng&);         \
  template void glorot_uniform<S>(Conv2d<S>&, Rng&);                 \
  template void glorot_uniform<S>(Linear<S>&, Rng&);                 \
  template void normal_init<S>(Linear<S>&, Rng&, double);

ECVD_INSTANTIATE(float)
ECVD_INSTANTIATE(double)

#undef ECVD_INSTANTIATE

}  // namespace ecvd::nn
