#include "ecvd/nn/weights_io.hpp"

#include "ecvd/core/rng.hpp"

#include <cstring>
#include <fstream>
#include <set>

namespace ecvd::nn {

namespace {

constexpr char kMagic[8] = {'E', 'C', 'V', 'D', 'W', '0', '0', '1'};

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is, const std::filesystem::path& path) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw Error("truncated weight blob: " + path.string());
  return v;
}

std::vector<Index> squeeze(const std::vector<Index>& dims) {
  std::vector<Index> out;
  for (Index d : dims) {
    if (d != 1) out.push_back(d);
  }
  return out;
}

std::string dims_str(const std::vector<Index>& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + ")";
}

}  // namespace

WeightBlob read_blob(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open weight blob: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw Error("not a weight blob (bad magic): " + path.string());
  }
  WeightBlob blob;
  const auto count = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw Error("truncated weight blob: " + path.string());
    BlobTensor t;
    const auto ndim = get<std::uint32_t>(is, path);
    Index numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.dims.push_back(static_cast<Index>(get<std::int64_t>(is, path)));
      numel *= t.dims.back();
    }
    t.values.resize(static_cast<std::size_t>(numel));
    if (!is.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(numel * sizeof(float)))) {
      throw Error("truncated weight blob: " + path.string());
    }
    blob.emplace(std::move(name), std::move(t));
  }
  return blob;
}

void write_blob(const std::filesystem::path& path, const WeightBlob& blob) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write weight blob: " + path.string());
  os.write(kMagic, 8);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(blob.size()));
  for (const auto& [name, t] : blob) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.dims.size()));
    for (Index d : t.dims) put<std::int64_t>(os, static_cast<std::int64_t>(d));
    os.write(reinterpret_cast<const char*>(t.values.data()),
             static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
  if (!os) throw Error("failed writing weight blob: " + path.string());
}

template <typename Scalar>
WeightBlob to_blob(const ParamSet<Scalar>& set) {
  WeightBlob blob;
  auto add = [&](const std::string& name, const std::vector<Index>& dims, const auto& value) {
    BlobTensor t;
    t.dims = dims;
    t.values.resize(static_cast<std::size_t>(value.size()));
    for (Index i = 0; i < value.size(); ++i) t.values[static_cast<std::size_t>(i)] = static_cast<float>(value[i]);
    if (!blob.emplace(name, std::move(t)).second) throw Error("duplicate parameter name: " + name);
  };
  for (const auto& p : set.params) add(p.name, p.param->dims, p.param->value);
  for (const auto& b : set.buffers) add(b.name, b.buffer->dims, b.buffer->value);
  return blob;
}

template <typename Scalar>
LoadReport load_from_blob(ParamSet<Scalar>& set, const WeightBlob& blob, bool strict) {
  LoadReport report;
  std::set<std::string> seen;
  auto assign = [&](const std::string& name, const std::vector<Index>& dims, auto& value) {
    auto it = blob.find(name);
    if (it == blob.end()) {
      report.missing.push_back(name);
      return;
    }
    seen.insert(name);
    if (squeeze(it->second.dims) != squeeze(dims)) {
      throw Error("shape mismatch for " + name + ": model " + dims_str(dims) + " vs blob " +
                  dims_str(it->second.dims));
    }
    for (Index i = 0; i < value.size(); ++i) value[i] = static_cast<Scalar>(it->second.values[static_cast<std::size_t>(i)]);
  };
  for (auto& p : set.params) assign(p.name, p.param->dims, p.param->value);
  for (auto& b : set.buffers) assign(b.name, b.buffer->dims, b.buffer->value);
  for (const auto& [name, t] : blob) {
    if (!seen.count(name)) report.unexpected.push_back(name);
  }
  if (strict && (!report.missing.empty() || !report.unexpected.empty())) {
    std::string msg = "weight blob does not match model:";
    for (const auto& n : report.missing) msg += " missing " + n + ";";
    for (const auto& n : report.unexpected) msg += " unexpected " + n + ";";
    throw Error(msg);
  }
  return report;
}

template <typename Scalar>
std::uint64_t weights_digest(const ParamSet<Scalar>& set) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  auto mix = [&](const std::string& name, const auto& value) {
    h = fnv1a64(name, h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(value.data()), value.size() * sizeof(Scalar)), h);
  };
  for (const auto& p : set.params) mix(p.name, p.param->value);
  for (const auto& b : set.buffers) mix(b.name, b.buffer->value);
  return h;
}

template WeightBlob to_blob<float>(const ParamSet<float>&);
template WeightBlob to_blob<double>(const ParamSet<double>&);
template LoadReport load_from_blob<float>(ParamSet<float>&, const WeightBlob&, bool);
template LoadReport load_from_blob<double>(ParamSet<double>&, const WeightBlob&, bool);
template std::uint64_t weights_digest<float>(const ParamSet<float>&);
template std::uint64_t weights_digest<double>(const ParamSet<double>&);

}  // namespace ecvd::nn
