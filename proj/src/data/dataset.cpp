#include "ecvd/data/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace ecvd::data {

namespace fs = std::filesystem;

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

bool has_png_extension(const fs::path& p) { return iequals(p.extension().string(), ".png"); }

}  // namespace

int parse_class(std::string_view name) {
  const ClassAliases aliases;
  for (int c = 0; c < kNumClasses; ++c) {
    for (const auto& alias : aliases.names[static_cast<std::size_t>(c)]) {
      if (iequals(alias, name)) return c;
    }
  }
  throw Error("unknown class name '" + std::string(name) + "'; expected COVID-19, Normal or Viral-Pneumonia");
}

std::vector<int> DatasetIndex::labels() const {
  std::vector<int> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.label);
  return out;
}

DatasetIndex DatasetIndex::from_entries(std::vector<DatasetEntry> entries) {
  DatasetIndex index;
  for (const auto& e : entries) {
    if (e.label < 0 || e.label >= kNumClasses) {
      throw Error("dataset entry " + e.path.string() + " has invalid label " + std::to_string(e.label));
    }
    ++index.class_counts[static_cast<std::size_t>(e.label)];
  }
  index.entries = std::move(entries);
  return index;
}

bool is_png_file(const fs::path& path) {
  static constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::ifstream in(path, std::ios::binary);
  unsigned char head[8] = {};
  if (!in.read(reinterpret_cast<char*>(head), 8)) return false;
  return std::equal(std::begin(head), std::end(head), std::begin(kSignature));
}

DatasetIndex scan_dataset(const fs::path& root, const ClassAliases& aliases) {
  if (!fs::is_directory(root)) throw Error("dataset root " + root.string() + " is not a directory");

  std::vector<fs::path> subdirs;
  for (const auto& d : fs::directory_iterator(root)) {
    if (d.is_directory()) subdirs.push_back(d.path());
  }
  std::sort(subdirs.begin(), subdirs.end());

  std::vector<DatasetEntry> entries;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& names = aliases.names[static_cast<std::size_t>(c)];
    std::vector<fs::path> matches;
    for (const auto& dir : subdirs) {
      const std::string leaf = dir.filename().string();
      if (std::any_of(names.begin(), names.end(), [&](const std::string& n) { return iequals(n, leaf); })) {
        matches.push_back(dir);
      }
    }
    if (matches.empty()) {
      throw Error("dataset root " + root.string() + " has no directory for class " +
                  std::string(class_name(c)) + " (expected \"" + names.front() + "\")");
    }
    if (matches.size() > 1) {
      throw Error("class " + std::string(class_name(c)) + " matches several directories under " + root.string());
    }
    Index found = 0;
    for (const auto& f : fs::directory_iterator(matches.front())) {
      if (!f.is_regular_file() || !has_png_extension(f.path())) continue;
      if (!is_png_file(f.path())) throw Error("not a readable PNG file: " + f.path().string());
      entries.push_back({f.path(), c});
      ++found;
    }
    if (found == 0) {
      throw Error("class directory " + matches.front().string() + " contains no PNG images");
    }
  }
  std::sort(entries.begin(), entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.path < b.path; });
  return DatasetIndex::from_entries(std::move(entries));
}

}  // namespace ecvd::data
