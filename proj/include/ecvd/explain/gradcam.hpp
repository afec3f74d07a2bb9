#pragma once

#include "ecvd/data/image.hpp"
#include "ecvd/fusion/ensemble.hpp"

#include <json.hpp>

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace ecvd::explain {

enum class ScoreMode { Logit, Softmax };

struct GradCamMap {
  Eigen::MatrixXd raw;        // h x w, non-negative
  Eigen::MatrixXd upsampled;  // output size, min-max scaled to [0, 1]
  std::vector<double> channel_weights;
  int target_class = 0;
  std::string layer;
  ScoreMode score = ScoreMode::Logit;
};

/// Min-max scaling to [0, 1]. A constant positive map becomes all ones, an
/// all-zero map stays zero.
Eigen::MatrixXd normalize_min_max(const Eigen::MatrixXd& m);

/// Grad-CAM from one sample's activation (1 x K x h x w) and the gradient of
/// the score with respect to it: weights are spatial means of the gradient,
/// the map is ReLU(sum_k weight_k * activation_k), upsampled bilinearly.
template <typename Scalar>
GradCamMap cam_from_activation(const Tensor<Scalar>& activation, const Tensor<Scalar>& gradient, Index out_h,
                               Index out_w);

inline constexpr std::string_view kDefaultEnsembleLayer = "head.relu2";

/// Layers grad_cam accepts: "head.<child>" and "<backbone slug>.<node>".
template <typename Scalar>
std::vector<std::string> gradcam_layers(fusion::EnsembleModel<Scalar>& model);

/// `img` is one normalized 1 x 3 x 224 x 224 input.
template <typename Scalar>
GradCamMap grad_cam(fusion::EnsembleModel<Scalar>& model, const Tensor<Scalar>& img, int target,
                    std::string_view layer = kDefaultEnsembleLayer, ScoreMode score = ScoreMode::Logit);

/// Grad-CAM on a full backbone; an empty layer selects the last feature node.
template <typename Scalar>
GradCamMap grad_cam(backbone::Backbone<Scalar>& net, const Tensor<Scalar>& img, int target,
                    std::string_view layer = "", ScoreMode score = ScoreMode::Logit);

/// MATLAB-style jet: 0 -> dark blue, 1 -> dark red.
std::array<double, 3> jet(double v);

/// out = base * (1 - alpha m) + jet(m) * alpha m per pixel, with m the
/// upsampled map; `base_rgb` is 1 x 3 x H x W in [0, 1] matching the map size.
data::ImageTensor render_overlay(const GradCamMap& map, const data::ImageTensor& base_rgb, double alpha = 0.4,
                                 std::string_view colormap = "jet");

/// Raw map, channel weights and metadata for the sidecar file.
nlohmann::json gradcam_sidecar(const GradCamMap& map);

}  // namespace ecvd::explain
