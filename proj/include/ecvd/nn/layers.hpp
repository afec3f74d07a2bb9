#pragma once

#include "ecvd/core/rng.hpp"
#include "ecvd/nn/module.hpp"

#include <optional>

namespace ecvd::nn {

/// Square-kernel 2-D convolution with optional channel groups.
///
/// Weight layout is (out, in/groups, k, k), matching the im2col row order
/// (channel, ky, kx), so each group is a single GEMM. Depthwise convolutions
/// (groups == in == out) take a direct path.
template <typename Scalar>
class Conv2d final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  Conv2d(Index in, Index out, Index kernel, Index stride = 1, Index padding = 0, Index groups = 1,
         bool bias = true);

  T forward(const T& x, Mode mode) override;
  T backward(const T& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  ModulePtr<Scalar> clone() const override { return std::make_unique<Conv2d>(*this); }
  std::string kind() const override { return "Conv2d"; }
  void collect(const std::string& prefix, ParamSet<Scalar>& out) override;
  void clear_cache() override { input_ = T(); }

  Index in_channels() const { return in_; }
  Index out_channels() const { return out_; }
  Index kernel() const { return kernel_; }
  Index groups() const { return groups_; }
  bool has_bias() const { return bias_.has_value(); }

  Param<Scalar>& weight() { return weight_; }
  const Param<Scalar>& weight() const { return weight_; }
  Param<Scalar>& bias() { return *bias_; }

 private:
  bool depthwise() const { return groups_ == in_ && groups_ == out_; }
  void im2col(const T& x, Index n, Index g, typename T::Matrix& cols, Index oh, Index ow) const;
  void col2im(const typename T::Matrix& cols, T& dx, Index n, Index g, Index oh, Index ow) const;

  Index in_, out_, kernel_, stride_, padding_, groups_;
  Param<Scalar> weight_;
  std::optional<Param<Scalar>> bias_;
  T input_;
};

template <typename Scalar>
class BatchNorm2d final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  explicit BatchNorm2d(Index channels, Scalar eps = Scalar(1e-5), Scalar momentum = Scalar(0.1));

  T forward(const T& x, Mode mode) override;
  T backward(const T& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }
  ModulePtr<Scalar> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  std::string kind() const override { return "BatchNorm2d"; }
  void collect(const std::string& prefix, ParamSet<Scalar>& out) override;
  void clear_cache() override { xhat_ = T(); }

  Index channels() const { return channels_; }
  Scalar momentum() const { return momentum_; }
  void set_momentum(Scalar m) { momentum_ = m; }
  Param<Scalar>& gamma() { return gamma_; }
  Param<Scalar>& beta() { return beta_; }
  Buffer<Scalar>& running_mean() { return running_mean_; }
  Buffer<Scalar>& running_var() { return running_var_; }

 private:
  Index channels_;
  Scalar eps_, momentum_;
  Param<Scalar> gamma_, beta_;
  Buffer<Scalar> running_mean_, running_var_;
  T xhat_;
  typename T::Vector inv_std_;
  bool cached_train_ = false;
};

enum class ActivationKind { ReLU, ReLU6, SiLU, Sigmoid };

template <typename Scalar>
class Activation final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  explicit Activation(ActivationKind kind) : kind_(kind) {}

  T forward(const T& x, Mode mode) override;
  T backward(const T& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }
  ModulePtr<Scalar> clone() const override { return std::make_unique<Activation>(*this); }
  std::string kind() const override;
  void clear_cache() override { cache_ = T(); }

  ActivationKind activation() const { return kind_; }

 private:
  ActivationKind kind_;
  T cache_;  // input, or output for Sigmoid
};

template <typename Scalar>
class MaxPool2d final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  MaxPool2d(Index kernel, Index stride, Index padding = 0, bool ceil_mode = false)
      : kernel_(kernel), stride_(stride), padding_(padding), ceil_mode_(ceil_mode) {}

  T forward(const T& x, Mode mode) override;
  T backward(const T& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  ModulePtr<Scalar> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  std::string kind() const override { return "MaxPool2d"; }
  void clear_cache() override { argmax_.clear(); }

 private:
  Index kernel_, stride_, padding_;
  bool ceil_mode_;
  Shape in_shape_{};
  std::vector<Index> argmax_;
};

/// Average pooling with zero padding counted in the divisor.
template <typename Scalar>
class AvgPool2d final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  AvgPool2d(Index kernel, Index stride, Index padding = 0)
      : kernel_(kernel), stride_(stride), padding_(padding) {}

  T forward(const T& x, Mode mode) override;
  T backward(const T& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  ModulePtr<Scalar> clone() const override { return std::make_unique<AvgPool2d>(*this); }
  std::string kind() const override { return "AvgPool2d"; }

 private:
  Index kernel_, stride_, padding_;
  Shape in_shape_{};
};

template <typename Scalar>
class GlobalAvgPool final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  T forward(const T& x, Mode mode) override;
  T backward(const T& grad_out) override;
  Shape output_shape(const Shape& in) const override { return {in.n, in.c, 1, 1}; }
  ModulePtr<Scalar> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  std::string kind() const override { return "GlobalAvgPool"; }

 private:
  Shape in_shape_{};
};

/// Fully connected layer over the flattened (C*H*W) sample; emits N x out x 1 x 1.
template <typename Scalar>
class Linear final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  Linear(Index in, Index out);

  T forward(const T& x, Mode mode) override;
  T backward(const T& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  ModulePtr<Scalar> clone() const override { return std::make_unique<Linear>(*this); }
  std::string kind() const override { return "Linear"; }
  void collect(const std::string& prefix, ParamSet<Scalar>& out) override;
  void clear_cache() override { input_ = T(); }

  Index in_features() const { return in_; }
  Index out_features() const { return out_; }
  Param<Scalar>& weight() { return weight_; }
  Param<Scalar>& bias() { return bias_; }

 private:
  Index in_, out_;
  Param<Scalar> weight_, bias_;
  T input_;
};

template <typename Scalar>
class ChannelShuffle final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  explicit ChannelShuffle(Index groups) : groups_(groups) {}

  T forward(const T& x, Mode mode) override;
  T backward(const T& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }
  ModulePtr<Scalar> clone() const override { return std::make_unique<ChannelShuffle>(*this); }
  std::string kind() const override { return "ChannelShuffle"; }

 private:
  T permute(const T& x, bool inverse) const;
  Index groups_;
};

template <typename Scalar>
class Identity final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;
  T forward(const T& x, Mode) override { return x; }
  T backward(const T& g) override { return g; }
  Shape output_shape(const Shape& in) const override { return in; }
  ModulePtr<Scalar> clone() const override { return std::make_unique<Identity>(*this); }
  std::string kind() const override { return "Identity"; }
};

/// Output extent of a pooling or convolution window along one axis.
Index pooled_extent(Index in, Index kernel, Index stride, Index padding, bool ceil_mode);

// Initializers. All draw from the supplied Rng so model construction is
// reproducible for a fixed seed.
template <typename Scalar>
void kaiming_normal_fan_out(Conv2d<Scalar>& conv, Rng& rng);
template <typename Scalar>
void glorot_uniform(Conv2d<Scalar>& conv, Rng& rng);
template <typename Scalar>
void glorot_uniform(Linear<Scalar>& fc, Rng& rng);
template <typename Scalar>
void normal_init(Linear<Scalar>& fc, Rng& rng, double stddev);

}  // namespace ecvd::nn
