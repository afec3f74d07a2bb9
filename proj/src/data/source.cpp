#include "ecvd/data/source.hpp"

#include "ecvd/core/rng.hpp"

#include <cstdio>

namespace ecvd::data {

void MemoryImageSource::add(ImageTensor img, int label, std::string id) {
  if (label < 0 || label >= kNumClasses) throw Error("MemoryImageSource: invalid label " + std::to_string(label));
  images_.push_back(std::move(img));
  labels_.push_back(label);
  ids_.push_back(std::move(id));
}

DatasetIndex MemoryImageSource::as_index() const {
  std::vector<DatasetEntry> entries;
  for (std::size_t i = 0; i < images_.size(); ++i) entries.push_back({ids_[i], labels_[i]});
  return DatasetIndex::from_entries(std::move(entries));
}

std::vector<int> DataView::labels() const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(source->label(i));
  return out;
}

DataView view_all(const ImageSource& source) {
  DataView v{&source, {}};
  for (Index i = 0; i < source.size(); ++i) v.indices.push_back(i);
  return v;
}

std::unique_ptr<MemoryImageSource> make_synthetic_source(Index per_class, std::uint64_t seed, Index size,
                                                         double offset) {
  auto src = std::make_unique<MemoryImageSource>();
  for (Index i = 0; i < per_class; ++i) {
    for (int c = 0; c < kNumClasses; ++c) {
      Rng rng(derive_seed(seed, "synthetic", static_cast<std::uint64_t>(i * kNumClasses + c)));
      ImageTensor img({1, 3, size, size});
      for (Index k = 0; k < img.size(); ++k) img.vec()[k] = float(0.5 * rng.normal());
      img.plane(0, c).array() += float(offset);
      char id[64];
      std::snprintf(id, sizeof id, "synthetic/%s/%04ld.png", std::string(class_name(c)).c_str(), long(i));
      src->add(std::move(img), c, id);
    }
  }
  return src;
}

void write_synthetic_dataset(const std::filesystem::path& root, Index per_class, std::uint64_t seed, Index size) {
  static const char* kDirs[kNumClasses] = {"COVID-19", "NORMAL", "Viral Pneumonia"};
  for (int c = 0; c < kNumClasses; ++c) {
    for (Index i = 0; i < per_class; ++i) {
      Rng rng(derive_seed(seed, "synthetic-png", static_cast<std::uint64_t>(i * kNumClasses + c)));
      ImageTensor img({1, 3, size, size});
      for (Index k = 0; k < img.size(); ++k) img.vec()[k] = float(0.35 + 0.1 * rng.normal());
      img.plane(0, c).array() += 0.4f;
      char name[32];
      std::snprintf(name, sizeof name, "%04ld.png", long(i));
      write_png(root / kDirs[c] / name, img);
    }
  }
}

}  // namespace ecvd::data
