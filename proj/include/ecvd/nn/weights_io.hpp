#pragma once

#include "ecvd/nn/module.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ecvd::nn {

/// One named array from a weight blob. Values are always stored as float32.
struct BlobTensor {
  std::vector<Index> dims;
  std::vector<float> values;
};

using WeightBlob = std::map<std::string, BlobTensor>;

/// Blob layout (little-endian):
///   "ECVDW001" | u32 count | count x { u32 name_len | name | u32 ndim | i64 dims[ndim] | f32 data[prod] }
WeightBlob read_blob(const std::filesystem::path& path);
void write_blob(const std::filesystem::path& path, const WeightBlob& blob);

template <typename Scalar>
WeightBlob to_blob(const ParamSet<Scalar>& set);

struct LoadReport {
  std::vector<std::string> missing;     // in the model, absent from the blob
  std::vector<std::string> unexpected;  // in the blob, absent from the model
};

/// Copies matching entries into the parameter set. Shapes are compared
/// after dropping size-1 dimensions. In strict mode any missing or
/// unexpected name is an error.
template <typename Scalar>
LoadReport load_from_blob(ParamSet<Scalar>& set, const WeightBlob& blob, bool strict = true);

template <typename Scalar>
void save_weights(const std::filesystem::path& path, const ParamSet<Scalar>& set) {
  write_blob(path, to_blob(set));
}

template <typename Scalar>
LoadReport load_weights(const std::filesystem::path& path, ParamSet<Scalar>& set, bool strict = true) {
  return load_from_blob(set, read_blob(path), strict);
}

/// FNV-1a digest over names and values; used to prove frozen weights stayed put.
template <typename Scalar>
std::uint64_t weights_digest(const ParamSet<Scalar>& set);

}  // namespace ecvd::nn
