#pragma once

#include "ecvd/data/dataset.hpp"
#include "ecvd/data/folds.hpp"
#include "ecvd/data/image.hpp"

#include <memory>
#include <string>
#include <vector>

namespace ecvd::data {

/// Random-access labeled images, already preprocessed to the network input.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual Index size() const = 0;
  virtual int label(Index i) const = 0;
  /// 1 x 3 x 224 x 224, normalized.
  virtual ImageTensor load(Index i) const = 0;
  /// Stable identifier (file path for file-backed sources).
  virtual std::string id(Index i) const = 0;
};

/// Decodes and preprocesses files from a DatasetIndex on every load.
class FileImageSource final : public ImageSource {
 public:
  explicit FileImageSource(DatasetIndex index, Normalization norm = {}, Index target = kInputSize)
      : index_(std::move(index)), norm_(std::move(norm)), target_(target) {}

  Index size() const override { return index_.size(); }
  int label(Index i) const override { return entry(i).label; }
  ImageTensor load(Index i) const override { return load_and_preprocess(entry(i).path, target_, norm_); }
  std::string id(Index i) const override { return entry(i).path.generic_string(); }

  const DatasetIndex& index() const { return index_; }

 private:
  const DatasetEntry& entry(Index i) const { return index_.entries.at(static_cast<std::size_t>(i)); }
  DatasetIndex index_;
  Normalization norm_;
  Index target_;
};

/// Images held in memory; used for synthetic data and tests.
class MemoryImageSource final : public ImageSource {
 public:
  void add(ImageTensor img, int label, std::string id);

  Index size() const override { return static_cast<Index>(images_.size()); }
  int label(Index i) const override { return labels_.at(static_cast<std::size_t>(i)); }
  ImageTensor load(Index i) const override { return images_.at(static_cast<std::size_t>(i)); }
  std::string id(Index i) const override { return ids_.at(static_cast<std::size_t>(i)); }

  /// Index with one entry per image (path = id), for fold planning.
  DatasetIndex as_index() const;

 private:
  std::vector<ImageTensor> images_;
  std::vector<int> labels_;
  std::vector<std::string> ids_;
};

/// A subset of a source; the "stream" consumed by training and evaluation.
struct DataView {
  const ImageSource* source = nullptr;
  IndexSet indices;

  Index size() const { return static_cast<Index>(indices.size()); }
  int label(Index k) const { return source->label(indices.at(static_cast<std::size_t>(k))); }
  ImageTensor load(Index k) const { return source->load(indices.at(static_cast<std::size_t>(k))); }
  std::string id(Index k) const { return source->id(indices.at(static_cast<std::size_t>(k))); }
  std::vector<int> labels() const;
};

DataView view_all(const ImageSource& source);

/// Colored-noise classes: class c adds a positive offset to channel c on top
/// of Gaussian noise, so the classes are linearly separable by channel means.
/// Images are returned already normalized-looking (zero-centred).
std::unique_ptr<MemoryImageSource> make_synthetic_source(Index per_class, std::uint64_t seed,
                                                         Index size = kInputSize, double offset = 1.5);

/// Writes a synthetic dataset as PNGs in the expected directory layout.
void write_synthetic_dataset(const std::filesystem::path& root, Index per_class, std::uint64_t seed,
                             Index size = 64);

}  // namespace ecvd::data
