#pragma once

#include "ecvd/core/rng.hpp"
#include "ecvd/core/tensor.hpp"

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <numbers>
#include <string>

namespace ecvd::data {

/// Closed interval [lo, hi] a transform parameter is drawn from.
struct Range {
  double lo = 0;
  double hi = 0;
  bool degenerate() const { return lo == hi; }
};

struct AugmentPolicy {
  bool reflect_x = true;
  bool reflect_y = true;
  Range scale{0.75, 1.25};
  Range rotation_deg{-30, 30};
  Range translate_px{-3, 3};

  /// Every transform disabled; augment() returns its input unchanged.
  static AugmentPolicy identity() { return {false, false, {1, 1}, {0, 0}, {0, 0}}; }

  /// Throws on inverted ranges or a non-positive scale.
  void validate() const;
};

/// One concrete draw of every transform parameter.
struct AugmentDraw {
  bool reflect_x = false;  // mirror columns
  bool reflect_y = false;  // mirror rows
  double rotation_deg = 0;
  double scale = 1;
  double tx = 0;
  double ty = 0;

  bool is_identity() const {
    return !reflect_x && !reflect_y && rotation_deg == 0 && scale == 1 && tx == 0 && ty == 0;
  }
};

/// Draws each transform independently; reflections with probability 1/2.
AugmentDraw sample_augmentation(const AugmentPolicy& policy, Rng& rng);

/// Output-from-input affine map, composed about the image center in the
/// order reflect, rotate, scale, translate.
Eigen::Affine2d augmentation_transform(const AugmentDraw& draw, Index height, Index width);

/// Resamples every plane through the inverse transform with bilinear
/// interpolation; source positions outside the frame read as zero.
template <typename Scalar>
Tensor<Scalar> apply_augmentation(const Tensor<Scalar>& img, const AugmentDraw& draw) {
  if (draw.is_identity()) return img;
  const Shape& s = img.shape();
  const Eigen::Affine2d inv = augmentation_transform(draw, s.h, s.w).inverse();
  Tensor<Scalar> out(s);
  for (Index y = 0; y < s.h; ++y) {
    for (Index x = 0; x < s.w; ++x) {
      const Eigen::Vector2d src = inv * Eigen::Vector2d(double(x), double(y));
      const double fx = std::floor(src.x()), fy = std::floor(src.y());
      const Index x0 = Index(fx), y0 = Index(fy);
      const double ax = src.x() - fx, ay = src.y() - fy;
      const std::array<Index, 2> xs = {x0, x0 + 1}, ys = {y0, y0 + 1};
      const std::array<double, 2> wx = {1 - ax, ax}, wy = {1 - ay, ay};
      for (std::size_t j = 0; j < 2; ++j) {
        if (ys[j] < 0 || ys[j] >= s.h || wy[j] == 0) continue;
        for (std::size_t i = 0; i < 2; ++i) {
          if (xs[i] < 0 || xs[i] >= s.w || wx[i] == 0) continue;
          const Scalar w = Scalar(wy[j] * wx[i]);
          for (Index n = 0; n < s.n; ++n) {
            for (Index c = 0; c < s.c; ++c) out(n, c, y, x) += w * img(n, c, ys[j], xs[i]);
          }
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> augment(const Tensor<Scalar>& img, const AugmentPolicy& policy, Rng& rng) {
  return apply_augmentation(img, sample_augmentation(policy, rng));
}

}  // namespace ecvd::data
