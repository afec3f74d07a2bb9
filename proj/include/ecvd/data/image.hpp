#pragma once

#include "ecvd/core/tensor.hpp"

#include <Eigen/SparseCore>

#include <array>
#include <cmath>
#include <filesystem>
#include <string>

namespace ecvd::data {

/// One image as a 1 x 3 x H x W tensor. Raw images hold RGB in [0, 1];
/// preprocessed ones are resized and normalized.
using ImageTensor = Tensor<float>;

inline constexpr Index kInputSize = 224;

/// Per-channel (x - mean) / std applied after scaling pixels to [0, 1].
struct Normalization {
  std::string name = "imagenet";
  std::array<double, 3> mean = {0.485, 0.456, 0.406};
  std::array<double, 3> std = {0.229, 0.224, 0.225};
};

/// Decodes an image file to RGB in [0, 1]. Grayscale is replicated to three
/// channels, alpha is dropped, 16-bit input is rescaled.
ImageTensor read_image(const std::filesystem::path& path);

/// Writes a 1 x 3 x H x W RGB tensor with values in [0, 1] as 8-bit PNG.
void write_png(const std::filesystem::path& path, const ImageTensor& rgb);

/// (out x in) resampling matrix of a triangle filter whose support widens by
/// the downscale factor, so minification is anti-aliased. out == in gives
/// the identity.
template <typename Scalar>
Eigen::SparseMatrix<Scalar, Eigen::RowMajor> resample_matrix(Index in, Index out) {
  if (in <= 0 || out <= 0) throw Error("resample_matrix: extents must be positive");
  const double scale = double(in) / double(out);
  const double support = std::max(1.0, scale);
  std::vector<Eigen::Triplet<Scalar>> triplets;
  for (Index i = 0; i < out; ++i) {
    const double center = (double(i) + 0.5) * scale;
    const Index lo = std::max<Index>(0, Index(std::floor(center - support)));
    const Index hi = std::min<Index>(in, Index(std::ceil(center + support)));
    double total = 0;
    std::vector<std::pair<Index, double>> row;
    for (Index j = lo; j < hi; ++j) {
      const double w = 1.0 - std::abs((double(j) + 0.5 - center) / support);
      if (w > 0) {
        row.emplace_back(j, w);
        total += w;
      }
    }
    for (auto [j, w] : row) triplets.emplace_back(i, j, Scalar(w / total));
  }
  Eigen::SparseMatrix<Scalar, Eigen::RowMajor> r(out, in);
  r.setFromTriplets(triplets.begin(), triplets.end());
  return r;
}

/// Anti-aliased bilinear resize of every plane: Ry * plane * Rx^T.
template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index height, Index width) {
  const Shape& s = x.shape();
  if (s.h == height && s.w == width) return x;
  const auto ry = resample_matrix<Scalar>(s.h, height);
  const auto rx = resample_matrix<Scalar>(s.w, width);
  Tensor<Scalar> y({s.n, s.c, height, width});
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      typename Tensor<Scalar>::Matrix rows = ry * x.plane(n, c);
      y.plane(n, c) = (rx * rows.transpose()).transpose();
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> normalize(Tensor<Scalar> x, const Normalization& norm) {
  if (x.shape().c != 3) throw Error("normalize: expected 3 channels, got " + x.shape().str());
  for (Index n = 0; n < x.shape().n; ++n) {
    for (Index c = 0; c < 3; ++c) {
      const auto k = static_cast<std::size_t>(c);
      x.plane(n, c).array() = (x.plane(n, c).array() - Scalar(norm.mean[k])) / Scalar(norm.std[k]);
    }
  }
  return x;
}

/// Inverse of normalize, for rendering preprocessed inputs.
template <typename Scalar>
Tensor<Scalar> denormalize(Tensor<Scalar> x, const Normalization& norm) {
  for (Index n = 0; n < x.shape().n; ++n) {
    for (Index c = 0; c < 3; ++c) {
      const auto k = static_cast<std::size_t>(c);
      x.plane(n, c).array() = x.plane(n, c).array() * Scalar(norm.std[k]) + Scalar(norm.mean[k]);
    }
  }
  return x;
}

/// Resize to target x target, then normalize.
ImageTensor preprocess(const ImageTensor& rgb, Index target = kInputSize, const Normalization& norm = {});

ImageTensor load_and_preprocess(const std::filesystem::path& path, Index target = kInputSize,
                                const Normalization& norm = {});

}  // namespace ecvd::data
