#include "ecvd/data/folds.hpp"

#include "ecvd/core/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <span>

namespace ecvd::data {

using nlohmann::json;

IndexSet FoldPlan::train(int fold) const {
  IndexSet out;
  for (int f = 0; f < k; ++f) {
    if (f == fold) continue;
    const auto& s = folds.at(static_cast<std::size_t>(f));
    out.insert(out.end(), s.begin(), s.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoldPlan make_folds(const DatasetIndex& index, int k, std::uint64_t seed) {
  if (k < 2) throw Error("make_folds: k must be at least 2, got " + std::to_string(k));
  for (int c = 0; c < kNumClasses; ++c) {
    const Index count = index.class_counts[static_cast<std::size_t>(c)];
    if (count < k) {
      throw Error("make_folds: class " + std::string(class_name(c)) + " has " + std::to_string(count) +
                  " items, fewer than k = " + std::to_string(k));
    }
  }
  FoldPlan plan{k, seed, std::vector<IndexSet>(static_cast<std::size_t>(k))};
  std::size_t deal = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    IndexSet members;
    for (Index i = 0; i < index.size(); ++i) {
      if (index.entries[static_cast<std::size_t>(i)].label == c) members.push_back(i);
    }
    Rng rng(derive_seed(seed, "folds", static_cast<std::uint64_t>(c)));
    rng.shuffle(std::span<Index>(members));
    for (Index m : members) plan.folds[deal++ % static_cast<std::size_t>(k)].push_back(m);
  }
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

std::pair<IndexSet, IndexSet> split_train_val(const IndexSet& train_indices, double fraction, std::uint64_t seed) {
  if (train_indices.empty()) throw Error("split_train_val: empty input");
  if (!(fraction > 0 && fraction < 1)) throw Error("split_train_val: fraction must lie in (0, 1)");
  IndexSet shuffled = train_indices;
  Rng rng(derive_seed(seed, "validation"));
  rng.shuffle(std::span<Index>(shuffled));
  const auto n_val = static_cast<std::size_t>(std::lround(fraction * double(shuffled.size())));
  IndexSet val(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_val));
  IndexSet train(shuffled.begin() + static_cast<std::ptrdiff_t>(n_val), shuffled.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(val)};
}

void check_partition(const FoldPlan& plan, Index n) {
  if (static_cast<int>(plan.folds.size()) != plan.k) throw Error("fold plan lists a wrong number of folds");
  std::vector<int> owner(static_cast<std::size_t>(n), -1);
  for (int f = 0; f < plan.k; ++f) {
    for (Index i : plan.test(f)) {
      if (i < 0 || i >= n) throw Error("fold plan index " + std::to_string(i) + " out of range");
      auto& o = owner[static_cast<std::size_t>(i)];
      if (o != -1) {
        throw Error("item " + std::to_string(i) + " appears in folds " + std::to_string(o + 1) + " and " +
                    std::to_string(f + 1));
      }
      o = f;
    }
  }
  const auto missing = std::count(owner.begin(), owner.end(), -1);
  if (missing != 0) throw Error("fold plan leaves " + std::to_string(missing) + " items unassigned");
}

void save_fold_plan(const std::filesystem::path& path, const FoldPlan& plan, const DatasetIndex& index) {
  json j;
  j["k"] = plan.k;
  j["seed"] = plan.seed;
  j["digest"] = fold_plan_digest(plan, index);
  j["folds"] = json::array();
  for (int f = 0; f < plan.k; ++f) {
    json items = json::array();
    for (Index i : plan.test(f)) {
      const auto& e = index.entries.at(static_cast<std::size_t>(i));
      items.push_back({{"path", e.path.generic_string()}, {"label", class_name(e.label)}});
    }
    j["folds"].push_back({{"fold", f + 1}, {"items", std::move(items)}});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write fold plan " + path.string());
  out << j.dump(1) << '\n';
}

FoldPlan load_fold_plan(const std::filesystem::path& path, const DatasetIndex& index) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read fold plan " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("malformed fold plan " + path.string() + ": " + e.what());
  }
  std::map<std::string, Index> lookup;
  for (Index i = 0; i < index.size(); ++i) lookup[index.entries[static_cast<std::size_t>(i)].path.generic_string()] = i;

  FoldPlan plan;
  plan.k = j.at("k").get<int>();
  plan.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& fold : j.at("folds")) {
    IndexSet set;
    for (const auto& item : fold.at("items")) {
      const auto p = item.at("path").get<std::string>();
      auto it = lookup.find(p);
      if (it == lookup.end()) throw Error("fold plan " + path.string() + " references unknown image " + p);
      set.push_back(it->second);
    }
    std::sort(set.begin(), set.end());
    plan.folds.push_back(std::move(set));
  }
  check_partition(plan, index.size());
  return plan;
}

std::uint64_t fold_plan_digest(const FoldPlan& plan, const DatasetIndex& index) {
  std::uint64_t h = fnv1a64("k=" + std::to_string(plan.k) + ";seed=" + std::to_string(plan.seed));
  for (int f = 0; f < plan.k; ++f) {
    h = fnv1a64("|fold" + std::to_string(f), h);
    for (Index i : plan.test(f)) h = fnv1a64(index.entries.at(static_cast<std::size_t>(i)).path.generic_string() + ";", h);
  }
  return h;
}

}  // namespace ecvd::data
