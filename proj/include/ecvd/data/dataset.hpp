#pragma once

#include "ecvd/core/tensor.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ecvd::data {

inline constexpr int kNumClasses = 3;

/// Alphabetical class order; every weight vector and confusion matrix uses it.
enum class ClassLabel : int { Covid19 = 0, Normal = 1, ViralPneumonia = 2 };

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"COVID-19", "Normal", "Viral-Pneumonia"};

inline std::string_view class_name(int label) {
  if (label < 0 || label >= kNumClasses) throw Error("invalid class label " + std::to_string(label));
  return kClassNames[static_cast<std::size_t>(label)];
}

/// Accepts canonical names and the default directory aliases, case-insensitively.
int parse_class(std::string_view name);

/// Directory names accepted for each class, compared case-insensitively.
struct ClassAliases {
  std::array<std::vector<std::string>, kNumClasses> names = {{
      {"COVID-19", "COVID", "COVID19"},
      {"Normal", "Healthy"},
      {"Viral-Pneumonia", "Viral Pneumonia", "Viral_Pneumonia", "ViralPneumonia"},
  }};
};

struct DatasetEntry {
  std::filesystem::path path;
  int label = 0;
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;
  std::array<Index, kNumClasses> class_counts{};

  Index size() const { return static_cast<Index>(entries.size()); }
  std::vector<int> labels() const;

  /// Builds an index from entries, recounting classes and validating labels.
  static DatasetIndex from_entries(std::vector<DatasetEntry> entries);
};

/// True when the file starts with the 8-byte PNG signature.
bool is_png_file(const std::filesystem::path& path);

/// Scans `<root>/<class dir>/*.png`. Entries are sorted by path. A class
/// with no matching directory or no images raises an error naming it.
DatasetIndex scan_dataset(const std::filesystem::path& root, const ClassAliases& aliases = {});

}  // namespace ecvd::data
