#include "ecvd/data/augment.hpp"

namespace ecvd::data {

void AugmentPolicy::validate() const {
  auto check = [](const Range& r, const char* name) {
    if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) {
      throw Error(std::string("augmentation range ") + name + " is invalid: [" + std::to_string(r.lo) + ", " +
                  std::to_string(r.hi) + "]");
    }
  };
  check(scale, "scale");
  check(rotation_deg, "rotation_deg");
  check(translate_px, "translate_px");
  if (scale.lo <= 0) throw Error("augmentation scale range must be positive");
}

AugmentDraw sample_augmentation(const AugmentPolicy& policy, Rng& rng) {
  auto draw_in = [&](const Range& r) { return r.degenerate() ? r.lo : rng.uniform(r.lo, r.hi); };
  AugmentDraw d;
  d.reflect_x = policy.reflect_x && rng.bernoulli();
  d.reflect_y = policy.reflect_y && rng.bernoulli();
  d.rotation_deg = draw_in(policy.rotation_deg);
  d.scale = draw_in(policy.scale);
  d.tx = draw_in(policy.translate_px);
  d.ty = draw_in(policy.translate_px);
  return d;
}

Eigen::Affine2d augmentation_transform(const AugmentDraw& draw, Index height, Index width) {
  const Eigen::Vector2d center((double(width) - 1) / 2, (double(height) - 1) / 2);
  const Eigen::Vector2d mirror(draw.reflect_x ? -1.0 : 1.0, draw.reflect_y ? -1.0 : 1.0);
  Eigen::Affine2d t = Eigen::Affine2d::Identity();
  t.translate(center + Eigen::Vector2d(draw.tx, draw.ty));
  t.scale(draw.scale);
  t.rotate(draw.rotation_deg * std::numbers::pi / 180.0);
  t.scale(mirror);
  t.translate(-center);
  return t;
}

}  // namespace ecvd::data
