#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecvd {

using Index = Eigen::Index;

/// Base exception for everything raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NCHW extent of a dense activation tensor.
struct Shape {
  Index n = 0;
  Index c = 0;
  Index h = 0;
  Index w = 0;

  Index size() const { return n * c * h * w; }
  Index plane() const { return h * w; }
  Index sample_size() const { return c * h * w; }

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
};

/// Dense NCHW tensor over a contiguous Eigen vector.
///
/// Per-sample data is exposed as a row-major (C, H*W) matrix so that 1x1
/// convolutions and fully connected layers reduce to plain Eigen products.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;
  explicit Tensor(const Shape& shape) : shape_(shape), data_(Vector::Zero(shape.size())) {}
  Tensor(const Shape& shape, Scalar fill) : shape_(shape), data_(Vector::Constant(shape.size(), fill)) {}
  Tensor(const Shape& shape, Vector data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) throw Error("tensor data does not match shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }

  Scalar& operator()(Index n, Index c, Index y, Index x) {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  Scalar operator()(Index n, Index c, Index y, Index x) const {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  MatrixMap sample(Index n) {
    return MatrixMap(data_.data() + n * shape_.sample_size(), shape_.c, shape_.plane());
  }
  ConstMatrixMap sample(Index n) const {
    return ConstMatrixMap(data_.data() + n * shape_.sample_size(), shape_.c, shape_.plane());
  }

  /// (N, C*H*W) view, the flattened layout consumed by fully connected layers.
  MatrixMap rows() { return MatrixMap(data_.data(), shape_.n, shape_.sample_size()); }
  ConstMatrixMap rows() const { return ConstMatrixMap(data_.data(), shape_.n, shape_.sample_size()); }

  MatrixMap plane(Index n, Index c) {
    return MatrixMap(data_.data() + (n * shape_.c + c) * shape_.plane(), shape_.h, shape_.w);
  }
  ConstMatrixMap plane(Index n, Index c) const {
    return ConstMatrixMap(data_.data() + (n * shape_.c + c) * shape_.plane(), shape_.h, shape_.w);
  }

  Tensor reshaped(const Shape& shape) const {
    if (shape.size() != shape_.size()) {
      throw Error("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Shape shape_{};
  Vector data_;
};

/// Stacks tensors of equal N, H, W along the channel axis.
template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<const Tensor<Scalar>*>& parts) {
  if (parts.empty()) throw Error("concat_channels: no inputs");
  Shape out = parts.front()->shape();
  out.c = 0;
  for (const auto* p : parts) {
    const Shape& s = p->shape();
    if (s.n != out.n || s.h != out.h || s.w != out.w) {
      throw Error("concat_channels: mismatched shapes " + parts.front()->shape().str() + " vs " + s.str());
    }
    out.c += s.c;
  }
  Tensor<Scalar> y(out);
  for (Index n = 0; n < out.n; ++n) {
    Index row = 0;
    for (const auto* p : parts) {
      y.sample(n).middleRows(row, p->shape().c) = p->sample(n);
      row += p->shape().c;
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& x, Index begin, Index count) {
  Shape s = x.shape();
  if (begin < 0 || count < 0 || begin + count > s.c) throw Error("slice_channels: range out of bounds");
  s.c = count;
  Tensor<Scalar> y(s);
  for (Index n = 0; n < s.n; ++n) y.sample(n) = x.sample(n).middleRows(begin, count);
  return y;
}

/// Stacks single-sample tensors along the batch axis.
template <typename Scalar>
Tensor<Scalar> stack_batch(const std::vector<Tensor<Scalar>>& samples) {
  if (samples.empty()) throw Error("stack_batch: no inputs");
  Shape s = samples.front().shape();
  Shape out = s;
  out.n = 0;
  for (const auto& t : samples) {
    if (t.shape().c != s.c || t.shape().h != s.h || t.shape().w != s.w) {
      throw Error("stack_batch: mismatched shapes");
    }
    out.n += t.shape().n;
  }
  Tensor<Scalar> y(out);
  Index offset = 0;
  for (const auto& t : samples) {
    y.vec().segment(offset, t.size()) = t.vec();
    offset += t.size();
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> take_sample(const Tensor<Scalar>& x, Index n) {
  Shape s = x.shape();
  s.n = 1;
  return Tensor<Scalar>(s, x.vec().segment(n * s.sample_size(), s.sample_size()));
}

}  // namespace ecvd
