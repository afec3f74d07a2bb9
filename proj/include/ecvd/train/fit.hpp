#pragma once

#include "ecvd/core/rng.hpp"
#include "ecvd/nn/adam.hpp"
#include "ecvd/nn/calibrate.hpp"
#include "ecvd/nn/loss.hpp"
#include "ecvd/train/hyperparams.hpp"

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ecvd::train {

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double train_accuracy = 0;  // percent
};

struct ValidationRecord {
  long iteration = 0;
  int epoch = 0;
  double loss = 0;
  double accuracy = 0;  // percent
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::vector<ValidationRecord> validations;
  long iterations = 0;
  double best_val_accuracy = -1;
  long best_iteration = -1;
  bool restored_best = false;
};

/// Non-finite loss during training.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int epoch, long iteration, double loss)
      : Error("training diverged at epoch " + std::to_string(epoch) + ", iteration " + std::to_string(iteration) +
              " (loss " + std::to_string(loss) + ")"),
        epoch(epoch),
        iteration(iteration) {}
  int epoch;
  long iteration;
};

/// What the loop trains: a logits function, its backward, and the state it
/// owns. Only trainable members of `state` are optimized; all of `state`
/// (including buffers) is captured for best-checkpoint selection.
template <typename Scalar>
struct TrainTarget {
  std::function<Tensor<Scalar>(const Tensor<Scalar>&, nn::Mode)> forward;  // N x K x 1 x 1 logits
  std::function<void(const Tensor<Scalar>&)> backward;                    // receives d loss / d logits
  std::function<void()> clear_cache;
  nn::ParamSet<Scalar> state;
  /// Sub-network fed directly by the example inputs whose batch-norm layers
  /// receive population statistics after training; null skips that pass.
  nn::Module<Scalar>* norm_body = nullptr;
};

/// Labeled examples; `input(k, draw)` returns the k-th input (1 x C x H x W),
/// augmented by `draw` when it is non-null.
template <typename Scalar>
struct ExampleSet {
  std::function<Tensor<Scalar>(Index, const data::AugmentDraw*)> input;
  std::vector<int> labels;
  Index size() const { return static_cast<Index>(labels.size()); }
};

struct EvalResult {
  double loss = 0;
  double accuracy = 0;  // percent
  std::vector<int> predicted;
};

template <typename Scalar>
std::vector<typename Tensor<Scalar>::Vector> snapshot(const nn::ParamSet<Scalar>& state) {
  std::vector<typename Tensor<Scalar>::Vector> out;
  for (const auto& p : state.params) out.push_back(p.param->value);
  for (const auto& b : state.buffers) out.push_back(b.buffer->value);
  return out;
}

template <typename Scalar>
void restore(nn::ParamSet<Scalar>& state, const std::vector<typename Tensor<Scalar>::Vector>& saved) {
  std::size_t i = 0;
  for (auto& p : state.params) p.param->value = saved.at(i++);
  for (auto& b : state.buffers) b.buffer->value = saved.at(i++);
}

/// Index of the largest entry, ties resolved toward the lowest index.
template <typename Derived>
int argmax_lowest(const Eigen::DenseBase<Derived>& row) {
  Index best = 0;
  for (Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = j;
  }
  return static_cast<int>(best);
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> weight_vector(const Hyperparams& hp) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> w(3);
  for (int c = 0; c < 3; ++c) w(c) = Scalar(hp.class_weights[static_cast<std::size_t>(c)]);
  return w;
}

/// Eval-mode loss and accuracy over a whole example set.
template <typename Scalar>
EvalResult evaluate_examples(TrainTarget<Scalar>& target, const ExampleSet<Scalar>& examples, const Hyperparams& hp) {
  EvalResult r;
  if (examples.size() == 0) return r;
  const auto w = weight_vector<Scalar>(hp);
  double loss_sum = 0;
  Index correct = 0;
  for (Index start = 0; start < examples.size(); start += hp.batch_size) {
    const Index end = std::min<Index>(examples.size(), start + hp.batch_size);
    std::vector<Tensor<Scalar>> xs;
    std::vector<int> ys;
    for (Index k = start; k < end; ++k) {
      xs.push_back(examples.input(k, nullptr));
      ys.push_back(examples.labels[static_cast<std::size_t>(k)]);
    }
    const Tensor<Scalar> logits = target.forward(stack_batch(xs), nn::Mode::Eval);
    const auto lg = nn::weighted_cross_entropy_logits(logits.rows(), std::span<const int>(ys), w);
    loss_sum += double(lg.loss) * double(end - start);
    for (Index n = 0; n < end - start; ++n) {
      const int pred = argmax_lowest(lg.probs.row(n));
      r.predicted.push_back(pred);
      correct += pred == ys[static_cast<std::size_t>(n)];
    }
  }
  r.loss = loss_sum / double(examples.size());
  r.accuracy = 100.0 * double(correct) / double(examples.size());
  return r;
}

/// Mini-batch Adam on weighted cross-entropy. Each epoch reshuffles with a
/// seed derived from (seed, epoch); when the set holds at least one full
/// batch the trailing partial batch is dropped. Validation runs every
/// `validation_frequency` iterations and at each epoch end.
template <typename Scalar>
TrainingHistory fit(TrainTarget<Scalar>& target, const ExampleSet<Scalar>& train_set,
                    const ExampleSet<Scalar>& val_set, const Hyperparams& hp, std::uint64_t seed) {
  hp.validate();
  TrainingHistory history;
  if (hp.max_epochs == 0) return history;
  if (train_set.size() == 0) throw Error("fit: empty training set");

  nn::Adam<Scalar> adam(target.state, {hp.learning_rate, hp.beta1, hp.beta2, hp.epsilon, hp.l2});
  const auto w = weight_vector<Scalar>(hp);
  const Index n = train_set.size();
  const Index per_epoch = n >= hp.batch_size ? n / hp.batch_size : 1;
  const Index batch = std::min<Index>(n, hp.batch_size);
  std::vector<typename Tensor<Scalar>::Vector> best;

  auto validate = [&](int epoch) {
    if (val_set.size() == 0) return;
    const EvalResult v = evaluate_examples(target, val_set, hp);
    history.validations.push_back({history.iterations, epoch, v.loss, v.accuracy});
    if (v.accuracy > history.best_val_accuracy) {
      history.best_val_accuracy = v.accuracy;
      history.best_iteration = history.iterations;
      if (hp.select_best) best = snapshot(target.state);
    }
  };

  for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffler(derive_seed(seed, "epoch", static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(std::span<Index>(order));

    double loss_sum = 0;
    Index correct = 0, seen = 0;
    for (Index it = 0; it < per_epoch; ++it) {
      std::vector<Tensor<Scalar>> xs;
      std::vector<int> ys;
      for (Index k = it * batch; k < (it + 1) * batch; ++k) {
        const Index item = order[static_cast<std::size_t>(k)];
        if (hp.augment) {
          Rng rng(derive_seed(seed, "augment", static_cast<std::uint64_t>((epoch - 1) * n + item)));
          const data::AugmentDraw draw = data::sample_augmentation(hp.augmentation, rng);
          xs.push_back(train_set.input(item, &draw));
        } else {
          xs.push_back(train_set.input(item, nullptr));
        }
        ys.push_back(train_set.labels[static_cast<std::size_t>(item)]);
      }
      adam.zero_grad();
      const Tensor<Scalar> logits = target.forward(stack_batch(xs), nn::Mode::Train);
      const auto lg = nn::weighted_cross_entropy_logits(logits.rows(), std::span<const int>(ys), w);
      ++history.iterations;
      if (!std::isfinite(double(lg.loss))) throw TrainingDiverged(epoch, history.iterations, double(lg.loss));
      target.backward(Tensor<Scalar>(logits.shape(), Eigen::Map<const typename Tensor<Scalar>::Vector>(
                                                          lg.grad.data(), lg.grad.size())));
      target.clear_cache();
      adam.step();

      loss_sum += double(lg.loss);
      for (Index r = 0; r < lg.probs.rows(); ++r) correct += argmax_lowest(lg.probs.row(r)) == ys[std::size_t(r)];
      seen += lg.probs.rows();
      const bool epoch_end = it + 1 == per_epoch;
      if (history.iterations % hp.validation_frequency == 0 || epoch_end) validate(epoch);
    }
    history.epochs.push_back({epoch, loss_sum / double(per_epoch), 100.0 * double(correct) / double(seen)});
  }
  if (hp.select_best && !best.empty()) {
    restore(target.state, best);
    history.restored_best = true;
  }
  if (hp.population_bn_stats && target.norm_body) {
    nn::population_batch_norm<Scalar>(*target.norm_body, per_epoch, [&](Index b) {
      std::vector<Tensor<Scalar>> xs;
      for (Index k = b * batch; k < std::min(n, (b + 1) * batch); ++k) xs.push_back(train_set.input(k, nullptr));
      return stack_batch(xs);
    });
  }
  return history;
}

}  // namespace ecvd::train
