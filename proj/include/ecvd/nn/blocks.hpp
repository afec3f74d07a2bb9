#pragma once

#include "ecvd/nn/layers.hpp"
#include "ecvd/nn/sequential.hpp"

#include <optional>

namespace ecvd::nn {

/// Conv -> BatchNorm -> optional activation, named "0", "1", "2".
template <typename Scalar>
Sequential<Scalar> conv_bn_act(Index in, Index out, Index kernel, Index stride, Index groups,
                               std::optional<ActivationKind> act, Scalar bn_eps = Scalar(1e-5)) {
  Sequential<Scalar> s;
  s.template emplace<Conv2d<Scalar>>("0", in, out, kernel, stride, (kernel - 1) / 2, groups, false);
  s.template emplace<BatchNorm2d<Scalar>>("1", out, bn_eps);
  if (act) s.template emplace<Activation<Scalar>>("2", *act);
  return s;
}

/// SqueezeNet fire module: squeeze 1x1, then parallel 1x1 / 3x3 expands
/// concatenated along channels. Every conv is followed by ReLU.
template <typename Scalar>
class Fire final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  Fire(Index in, Index squeeze, Index expand1x1, Index expand3x3)
      : squeeze_(in, squeeze, 1), expand1x1_(squeeze, expand1x1, 1), expand3x3_(squeeze, expand3x3, 3, 1, 1) {}

  T forward(const T& x, Mode mode) override {
    const T s = squeeze_relu_.forward(squeeze_.forward(x, mode), mode);
    const T a = relu1_.forward(expand1x1_.forward(s, mode), mode);
    const T b = relu3_.forward(expand3x3_.forward(s, mode), mode);
    return concat_channels<Scalar>({&a, &b});
  }

  T backward(const T& g) override {
    const Index c1 = expand1x1_.out_channels();
    const T ga = slice_channels(g, 0, c1);
    const T gb = slice_channels(g, c1, expand3x3_.out_channels());
    T gs = expand1x1_.backward(relu1_.backward(ga));
    gs.vec() += expand3x3_.backward(relu3_.backward(gb)).vec();
    return squeeze_.backward(squeeze_relu_.backward(gs));
  }

  Shape output_shape(const Shape& in) const override {
    Shape s = squeeze_.output_shape(in);
    s.c = expand1x1_.out_channels() + expand3x3_.out_channels();
    return s;
  }

  ModulePtr<Scalar> clone() const override { return std::make_unique<Fire>(*this); }
  std::string kind() const override { return "Fire"; }

  void collect(const std::string& prefix, ParamSet<Scalar>& out) override {
    squeeze_.collect(join_name(prefix, "squeeze"), out);
    expand1x1_.collect(join_name(prefix, "expand1x1"), out);
    expand3x3_.collect(join_name(prefix, "expand3x3"), out);
  }

  void clear_cache() override {
    for (Module<Scalar>* m : std::initializer_list<Module<Scalar>*>{
             &squeeze_, &expand1x1_, &expand3x3_, &squeeze_relu_, &relu1_, &relu3_}) {
      m->clear_cache();
    }
  }

  Conv2d<Scalar>& squeeze() { return squeeze_; }
  Conv2d<Scalar>& expand1x1() { return expand1x1_; }
  Conv2d<Scalar>& expand3x3() { return expand3x3_; }

 private:
  Conv2d<Scalar> squeeze_, expand1x1_, expand3x3_;
  Activation<Scalar> squeeze_relu_{ActivationKind::ReLU};
  Activation<Scalar> relu1_{ActivationKind::ReLU};
  Activation<Scalar> relu3_{ActivationKind::ReLU};
};

/// ShuffleNet v1 unit without its trailing ReLU. Stride 1 adds the identity
/// shortcut; stride 2 concatenates a 3x3 average-pooled shortcut in front of
/// the branch output.
template <typename Scalar>
class ShuffleUnit final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  ShuffleUnit(Index in, Index out, Index groups, Index stride, Index bottleneck, bool group_first_conv)
      : in_(in), out_(out), stride_(stride), shortcut_(3, 2, 1) {
    if (stride != 1 && stride != 2) throw Error("ShuffleUnit: stride must be 1 or 2");
    if (stride == 1 && in != out) throw Error("ShuffleUnit: stride-1 unit needs in == out");
    const Index branch_out = stride == 2 ? out - in : out;
    const Index g1 = group_first_conv ? groups : 1;
    branch_.template emplace<Conv2d<Scalar>>("gconv1", in, bottleneck, 1, 1, 0, g1, false);
    branch_.template emplace<BatchNorm2d<Scalar>>("bn1", bottleneck);
    branch_.template emplace<Activation<Scalar>>("relu1", ActivationKind::ReLU);
    branch_.template emplace<ChannelShuffle<Scalar>>("shuffle", groups);
    branch_.template emplace<Conv2d<Scalar>>("dwconv", bottleneck, bottleneck, 3, stride, 1, bottleneck, false);
    branch_.template emplace<BatchNorm2d<Scalar>>("bn2", bottleneck);
    branch_.template emplace<Conv2d<Scalar>>("gconv2", bottleneck, branch_out, 1, 1, 0, groups, false);
    branch_.template emplace<BatchNorm2d<Scalar>>("bn3", branch_out);
  }

  T forward(const T& x, Mode mode) override {
    T b = branch_.forward(x, mode);
    if (stride_ == 1) {
      b.vec() += x.vec();
      return b;
    }
    const T s = shortcut_.forward(x, mode);
    return concat_channels<Scalar>({&s, &b});
  }

  T backward(const T& g) override {
    if (stride_ == 1) {
      T dx = branch_.backward(g);
      dx.vec() += g.vec();
      return dx;
    }
    T dx = shortcut_.backward(slice_channels(g, 0, in_));
    dx.vec() += branch_.backward(slice_channels(g, in_, out_ - in_)).vec();
    return dx;
  }

  Shape output_shape(const Shape& in) const override {
    Shape s = branch_.output_shape(in);
    s.c = out_;
    return s;
  }

  ModulePtr<Scalar> clone() const override { return std::make_unique<ShuffleUnit>(*this); }
  std::string kind() const override { return "ShuffleUnit"; }
  void collect(const std::string& prefix, ParamSet<Scalar>& out) override { branch_.collect(prefix, out); }
  void clear_cache() override { branch_.clear_cache(); }
  void visit(const std::function<void(Module<Scalar>&)>& fn) override {
    fn(*this);
    branch_.visit(fn);
  }

  Sequential<Scalar>& branch() { return branch_; }

 private:
  Index in_, out_, stride_;
  Sequential<Scalar> branch_;
  AvgPool2d<Scalar> shortcut_;
};

/// Channel attention: x * sigmoid(fc2(silu(fc1(mean_hw(x))))).
template <typename Scalar>
class SqueezeExcite final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  SqueezeExcite(Index channels, Index squeeze) : fc1_(channels, squeeze, 1), fc2_(squeeze, channels, 1) {}

  T forward(const T& x, Mode mode) override {
    const T pooled = pool_.forward(x, mode);
    const T gate = gate_.forward(fc2_.forward(act_.forward(fc1_.forward(pooled, mode), mode), mode), mode);
    T y(x.shape());
    for (Index n = 0; n < x.shape().n; ++n) {
      y.sample(n) = x.sample(n).array().colwise() * gate.sample(n).col(0).array();
    }
    if (records(mode)) {
      input_ = x;
      gate_out_ = gate;
    }
    return y;
  }

  T backward(const T& g) override {
    if (input_.empty()) throw Error("SqueezeExcite::backward without a recorded forward");
    const Shape& s = input_.shape();
    T dx(s);
    T dgate({s.n, s.c, 1, 1});
    for (Index n = 0; n < s.n; ++n) {
      dx.sample(n) = g.sample(n).array().colwise() * gate_out_.sample(n).col(0).array();
      dgate.sample(n).col(0) = g.sample(n).cwiseProduct(input_.sample(n)).rowwise().sum();
    }
    const T dpooled = fc1_.backward(act_.backward(fc2_.backward(gate_.backward(dgate))));
    dx.vec() += pool_.backward(dpooled).vec();
    return dx;
  }

  Shape output_shape(const Shape& in) const override { return in; }
  ModulePtr<Scalar> clone() const override { return std::make_unique<SqueezeExcite>(*this); }
  std::string kind() const override { return "SqueezeExcite"; }

  void collect(const std::string& prefix, ParamSet<Scalar>& out) override {
    fc1_.collect(join_name(prefix, "fc1"), out);
    fc2_.collect(join_name(prefix, "fc2"), out);
  }

  void clear_cache() override {
    input_ = T();
    gate_out_ = T();
    fc1_.clear_cache();
    fc2_.clear_cache();
    act_.clear_cache();
    gate_.clear_cache();
  }

 private:
  GlobalAvgPool<Scalar> pool_;
  Conv2d<Scalar> fc1_, fc2_;
  Activation<Scalar> act_{ActivationKind::SiLU};
  Activation<Scalar> gate_{ActivationKind::Sigmoid};
  T input_, gate_out_;
};

/// A named body with an optional identity shortcut; covers MobileNet-v2
/// inverted residuals (body "conv") and EfficientNet MBConv (body "block").
template <typename Scalar>
class ResidualBlock final : public Module<Scalar> {
 public:
  using T = Tensor<Scalar>;

  ResidualBlock(std::string body_name, Sequential<Scalar> body, bool use_residual)
      : body_name_(std::move(body_name)), body_(std::move(body)), use_residual_(use_residual) {}

  T forward(const T& x, Mode mode) override {
    T y = body_.forward(x, mode);
    if (use_residual_) y.vec() += x.vec();
    return y;
  }

  T backward(const T& g) override {
    T dx = body_.backward(g);
    if (use_residual_) dx.vec() += g.vec();
    return dx;
  }

  Shape output_shape(const Shape& in) const override { return body_.output_shape(in); }
  ModulePtr<Scalar> clone() const override { return std::make_unique<ResidualBlock>(*this); }
  std::string kind() const override { return "ResidualBlock"; }
  void collect(const std::string& prefix, ParamSet<Scalar>& out) override {
    body_.collect(join_name(prefix, body_name_), out);
  }
  void clear_cache() override { body_.clear_cache(); }
  void visit(const std::function<void(Module<Scalar>&)>& fn) override {
    fn(*this);
    body_.visit(fn);
  }

  bool uses_residual() const { return use_residual_; }

 private:
  std::string body_name_;
  Sequential<Scalar> body_;
  bool use_residual_;
};

/// MobileNet-v2 inverted residual with ReLU6.
template <typename Scalar>
ResidualBlock<Scalar> inverted_residual(Index in, Index out, Index stride, Index expand) {
  const Index hidden = in * expand;
  Sequential<Scalar> conv;
  int i = 0;
  if (expand != 1) conv.add(std::to_string(i++), conv_bn_act<Scalar>(in, hidden, 1, 1, 1, ActivationKind::ReLU6).clone());
  conv.add(std::to_string(i++), conv_bn_act<Scalar>(hidden, hidden, 3, stride, hidden, ActivationKind::ReLU6).clone());
  conv.template emplace<Conv2d<Scalar>>(std::to_string(i++), hidden, out, 1, 1, 0, 1, false);
  conv.template emplace<BatchNorm2d<Scalar>>(std::to_string(i++), out);
  return ResidualBlock<Scalar>("conv", std::move(conv), stride == 1 && in == out);
}

/// EfficientNet MBConv with SiLU and squeeze-excitation sized from the block input.
template <typename Scalar>
ResidualBlock<Scalar> mbconv(Index in, Index out, Index kernel, Index stride, Index expand) {
  const Index hidden = in * expand;
  Sequential<Scalar> block;
  int i = 0;
  if (expand != 1) block.add(std::to_string(i++), conv_bn_act<Scalar>(in, hidden, 1, 1, 1, ActivationKind::SiLU).clone());
  block.add(std::to_string(i++),
            conv_bn_act<Scalar>(hidden, hidden, kernel, stride, hidden, ActivationKind::SiLU).clone());
  block.template emplace<SqueezeExcite<Scalar>>(std::to_string(i++), hidden, std::max<Index>(1, in / 4));
  block.add(std::to_string(i++), conv_bn_act<Scalar>(hidden, out, 1, 1, 1, std::nullopt).clone());
  return ResidualBlock<Scalar>("block", std::move(block), stride == 1 && in == out);
}

}  // namespace ecvd::nn
