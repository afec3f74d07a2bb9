#include "ecvd/explain/gradcam.hpp"

#include "ecvd/nn/loss.hpp"

#include <algorithm>

namespace ecvd::explain {

namespace {

template <typename Scalar>
Tensor<Scalar> score_gradient(const Tensor<Scalar>& logits, int target, ScoreMode mode) {
  const Index k = logits.shape().c;
  if (target < 0 || target >= k) throw Error("Grad-CAM target class " + std::to_string(target) + " out of range");
  Tensor<Scalar> g(logits.shape());
  if (mode == ScoreMode::Logit) {
    g.vec()[target] = Scalar(1);
  } else {
    const auto p = nn::softmax_rows(logits.rows());
    for (Index j = 0; j < k; ++j) g.vec()[j] = p(0, target) * ((j == target ? Scalar(1) : Scalar(0)) - p(0, j));
  }
  return g;
}

template <typename Scalar>
void require_single(const Tensor<Scalar>& img) {
  if (img.shape().n != 1) throw Error("Grad-CAM expects a single image, got batch " + img.shape().str());
}

std::string candidates(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += " " + n;
  return out;
}

}  // namespace

Eigen::MatrixXd normalize_min_max(const Eigen::MatrixXd& m) {
  const double lo = m.minCoeff(), hi = m.maxCoeff();
  if (hi > lo) return (m.array() - lo) / (hi - lo);
  if (hi > 0) return Eigen::MatrixXd::Ones(m.rows(), m.cols());
  return Eigen::MatrixXd::Zero(m.rows(), m.cols());
}

template <typename Scalar>
GradCamMap cam_from_activation(const Tensor<Scalar>& activation, const Tensor<Scalar>& gradient, Index out_h,
                               Index out_w) {
  if (!(activation.shape() == gradient.shape()) || activation.shape().n != 1) {
    throw Error("Grad-CAM activation/gradient shapes differ or hold more than one sample");
  }
  const Shape s = activation.shape();
  const Eigen::MatrixXd a = activation.sample(0).template cast<double>();  // K x hw
  const Eigen::MatrixXd g = gradient.sample(0).template cast<double>();
  const Eigen::VectorXd weights = g.rowwise().mean();
  const Eigen::RowVectorXd combined = (weights.transpose() * a).cwiseMax(0.0);

  GradCamMap out;
  out.channel_weights.assign(weights.data(), weights.data() + weights.size());
  out.raw = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      combined.data(), s.h, s.w);
  Tensor<double> raw({1, 1, s.h, s.w});
  raw.plane(0, 0) = out.raw;
  const Tensor<double> up = data::resize_bilinear(raw, out_h, out_w);
  out.upsampled = normalize_min_max(up.plane(0, 0));
  return out;
}

template <typename Scalar>
std::vector<std::string> gradcam_layers(fusion::EnsembleModel<Scalar>& model) {
  std::vector<std::string> out;
  for (auto& b : model.branches()) {
    for (const auto& n : b.body().names()) out.push_back(b.spec().slug + "." + n);
  }
  for (const auto& n : model.head().names()) out.push_back("head." + n);
  return out;
}

template <typename Scalar>
GradCamMap grad_cam(fusion::EnsembleModel<Scalar>& model, const Tensor<Scalar>& img, int target,
                    std::string_view layer, ScoreMode score) {
  using nn::Mode;
  require_single(img);
  model.check_input(img);
  const std::string name(layer);
  const Index out_h = img.shape().h, out_w = img.shape().w;
  auto& head = model.head();
  const std::size_t head_end = head.size();

  if (name.rfind("head.", 0) == 0) {
    const auto idx = head.find(name.substr(5));
    if (idx < 0) throw Error("unknown Grad-CAM layer '" + name + "'; candidates:" + candidates(gradcam_layers(model)));
    const auto cut = static_cast<std::size_t>(idx) + 1;
    const Tensor<Scalar> fused = model.features(img);
    const Tensor<Scalar> act = head.forward_range(fused, Mode::EvalGrad, 0, cut);
    const Tensor<Scalar> logits = head.forward_range(act, Mode::EvalGrad, cut, head_end);
    const Tensor<Scalar> grad = head.backward_range(score_gradient(logits, target, score), cut, head_end);
    head.clear_cache();
    GradCamMap map = cam_from_activation(act, grad, out_h, out_w);
    map.target_class = target;
    map.layer = name;
    map.score = score;
    return map;
  }

  auto& branches = model.branches();
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const std::string prefix = branches[b].spec().slug + ".";
    if (name.rfind(prefix, 0) != 0) continue;
    auto& body = branches[b].body();
    const auto idx = body.find(name.substr(prefix.size()));
    if (idx < 0) break;
    const auto cut = static_cast<std::size_t>(idx) + 1;
    const Tensor<Scalar> act = body.forward_range(img, Mode::EvalGrad, 0, cut);
    const Tensor<Scalar> own = body.forward_range(act, Mode::EvalGrad, cut, body.size());
    std::vector<Tensor<Scalar>> maps;
    for (std::size_t j = 0; j < branches.size(); ++j) maps.push_back(j == b ? own : branches[j].forward(img));
    std::vector<const Tensor<Scalar>*> parts;
    for (const auto& m : maps) parts.push_back(&m);
    const Tensor<Scalar> logits = head.forward(concat_channels(parts), Mode::EvalGrad);
    const Tensor<Scalar> g_fused = head.backward(score_gradient(logits, target, score));
    const auto [begin, count] = model.branch_channels(b);
    const Tensor<Scalar> grad = body.backward_range(slice_channels(g_fused, begin, count), cut, body.size());
    head.clear_cache();
    body.clear_cache();
    GradCamMap map = cam_from_activation(act, grad, out_h, out_w);
    map.target_class = target;
    map.layer = name;
    map.score = score;
    return map;
  }
  throw Error("unknown Grad-CAM layer '" + name + "'; candidates:" + candidates(gradcam_layers(model)));
}

template <typename Scalar>
GradCamMap grad_cam(backbone::Backbone<Scalar>& net, const Tensor<Scalar>& img, int target, std::string_view layer,
                    ScoreMode score) {
  using nn::Mode;
  require_single(img);
  auto& body = net.features;
  const std::string name = layer.empty() ? body.name(body.size() - 1) : std::string(layer);
  const auto idx = body.find(name);
  if (idx < 0) throw Error("unknown Grad-CAM layer '" + name + "'; candidates:" + candidates(body.names()));
  const auto cut = static_cast<std::size_t>(idx) + 1;
  const Tensor<Scalar> act = body.forward_range(img, Mode::EvalGrad, 0, cut);
  const Tensor<Scalar> feats = body.forward_range(act, Mode::EvalGrad, cut, body.size());
  const Tensor<Scalar> logits = net.classifier.forward(feats, Mode::EvalGrad);
  const Tensor<Scalar> g_feats = net.classifier.backward(score_gradient(logits, target, score));
  const Tensor<Scalar> grad = body.backward_range(g_feats, cut, body.size());
  net.clear_cache();
  GradCamMap map = cam_from_activation(act, grad, img.shape().h, img.shape().w);
  map.target_class = target;
  map.layer = name;
  map.score = score;
  return map;
}

std::array<double, 3> jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ch = [v](double center) { return std::clamp(1.5 - std::abs(4.0 * v - center), 0.0, 1.0); };
  return {ch(3.0), ch(2.0), ch(1.0)};
}

data::ImageTensor render_overlay(const GradCamMap& map, const data::ImageTensor& base_rgb, double alpha,
                                 std::string_view colormap) {
  if (colormap != "jet") throw Error("unsupported colormap '" + std::string(colormap) + "'; supported: jet");
  const Shape& s = base_rgb.shape();
  if (s.n != 1 || s.c != 3) throw Error("overlay base must be 1 x 3 x H x W, got " + s.str());
  if (map.upsampled.rows() != s.h || map.upsampled.cols() != s.w) {
    throw Error("heatmap is " + std::to_string(map.upsampled.rows()) + "x" + std::to_string(map.upsampled.cols()) +
                " but the image is " + std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  if (!(alpha >= 0 && alpha <= 1)) throw Error("overlay alpha must lie in [0, 1]");
  data::ImageTensor out(s);
  for (Index y = 0; y < s.h; ++y) {
    for (Index x = 0; x < s.w; ++x) {
      const double m = std::clamp(map.upsampled(y, x), 0.0, 1.0);
      const auto color = jet(m);
      const double a = alpha * m;
      for (Index c = 0; c < 3; ++c) {
        out(0, c, y, x) = float(double(base_rgb(0, c, y, x)) * (1.0 - a) + color[std::size_t(c)] * a);
      }
    }
  }
  return out;
}

nlohmann::json gradcam_sidecar(const GradCamMap& map) {
  nlohmann::json raw = nlohmann::json::array();
  for (Index r = 0; r < map.raw.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(map.raw.cols()));
    for (Index c = 0; c < map.raw.cols(); ++c) row[std::size_t(c)] = map.raw(r, c);
    raw.push_back(row);
  }
  return {{"layer", map.layer},
          {"target_class", map.target_class},
          {"score", map.score == ScoreMode::Logit ? "logit" : "softmax"},
          {"raw", raw},
          {"raw_max", map.raw.maxCoeff()},
          {"channel_weights", map.channel_weights},
          {"upsampled_size", {map.upsampled.rows(), map.upsampled.cols()}}};
}

template GradCamMap cam_from_activation<float>(const Tensor<float>&, const Tensor<float>&, Index, Index);
template GradCamMap cam_from_activation<double>(const Tensor<double>&, const Tensor<double>&, Index, Index);
template std::vector<std::string> gradcam_layers<float>(fusion::EnsembleModel<float>&);
template std::vector<std::string> gradcam_layers<double>(fusion::EnsembleModel<double>&);
template GradCamMap grad_cam<float>(fusion::EnsembleModel<float>&, const Tensor<float>&, int, std::string_view,
                                    ScoreMode);
template GradCamMap grad_cam<double>(fusion::EnsembleModel<double>&, const Tensor<double>&, int, std::string_view,
                                     ScoreMode);
template GradCamMap grad_cam<float>(backbone::Backbone<float>&, const Tensor<float>&, int, std::string_view,
                                    ScoreMode);
template GradCamMap grad_cam<double>(backbone::Backbone<double>&, const Tensor<double>&, int, std::string_view,
                                     ScoreMode);

}  // namespace ecvd::explain
