#include "ecvd/train/ensemble_training.hpp"

namespace ecvd::train {

FoldResult evaluate_fold(const LogitsFn& logits, const data::DataView& test_view, int fold_id, int batch_size) {
  if (test_view.size() == 0) throw Error("evaluate_fold: fold " + std::to_string(fold_id) + " is empty");
  if (batch_size < 1) throw Error("evaluate_fold: batch size must be positive");
  FoldResult r;
  r.fold_id = fold_id;
  for (Index start = 0; start < test_view.size(); start += batch_size) {
    const Index end = std::min<Index>(test_view.size(), start + batch_size);
    std::vector<Tensor<float>> xs;
    for (Index k = start; k < end; ++k) xs.push_back(test_view.load(k));
    const Tensor<float> z = logits(stack_batch(xs));
    if (z.shape().n != end - start || z.shape().c != data::kNumClasses) {
      throw Error("evaluate_fold: model returned logits of shape " + z.shape().str());
    }
    for (Index n = 0; n < end - start; ++n) {
      r.confusion.add(test_view.label(start + n), argmax_lowest(z.rows().row(n)));
    }
  }
  r.accuracy = r.confusion.micro_accuracy();
  return r;
}

}  // namespace ecvd::train
