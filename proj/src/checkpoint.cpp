#include "afd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace afd {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'A', 'F', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint64_t kMaxRank = 8;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("checkpoint: truncated while reading " + what);
  return v;
}

std::string read_string(std::istream& in, std::uint64_t n, const std::string& what) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw IoError("checkpoint: truncated while reading " + what);
  return s;
}

}  // namespace

void Checkpoint::put(const std::string& name, const Tensor& t) {
  arrays_[name] = NamedArray{t.shape(), std::vector<double>(t.values().begin(), t.values().end())};
}

void Checkpoint::put(const std::string& name, Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("checkpoint: array '" + name + "' shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  arrays_[name] = NamedArray{std::move(shape), std::move(values)};
}

const NamedArray& Checkpoint::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw Error("checkpoint: no array named '" + name + "'");
  return it->second;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open " + tmp.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    write_pod<std::uint64_t>(out, metadata.size());
    out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
    write_pod<std::uint64_t>(out, arrays_.size());
    for (const auto& [name, a] : arrays_) {
      write_pod<std::uint64_t>(out, name.size());
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod<std::uint64_t>(out, a.shape.size());
      for (auto e : a.shape) write_pod<std::uint64_t>(out, e);
      out.write(reinterpret_cast<const char*>(a.values.data()),
                static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    }
    if (!out) throw IoError("checkpoint: write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("checkpoint: " + path.string() + " is not a checkpoint file");
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version) + " in " + path.string());
  Checkpoint ck;
  ck.metadata = read_string(in, read_pod<std::uint64_t>(in, "metadata length"), "metadata");
  const auto count = read_pod<std::uint64_t>(in, "array count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = read_string(in, read_pod<std::uint64_t>(in, "name length"), "array name");
    const auto rank = read_pod<std::uint64_t>(in, "rank of " + name);
    if (rank == 0 || rank > kMaxRank) throw IoError("checkpoint: bad rank for '" + name + "'");
    Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(read_pod<std::uint64_t>(in, "shape of " + name));
    std::vector<double> values(shape_numel(shape));
    if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double))))
      throw IoError("checkpoint: truncated values for '" + name + "'");
    ck.arrays_[name] = NamedArray{std::move(shape), std::move(values)};
  }
  return ck;
}

void capture_params(const nn::ParamStore& store, Checkpoint& ckpt) {
  for (const auto& p : store.params()) ckpt.put("param/" + p.name, p.value);
}

void restore_params(const nn::ParamStore& store, const Checkpoint& ckpt) {
  // Validate everything first so a failed restore leaves the store untouched.
  for (const auto& p : store.params()) {
    const std::string key = "param/" + p.name;
    if (!ckpt.contains(key)) throw Error("checkpoint: missing parameter '" + p.name + "'");
    const auto& a = ckpt.get(key);
    if (a.shape != p.value.shape())
      throw ShapeError("checkpoint: parameter '" + p.name + "' has shape " + shape_str(a.shape) + " in file, model expects " +
                       shape_str(p.value.shape()));
  }
  for (const auto& p : store.params()) {
    const auto& a = ckpt.get("param/" + p.name);
    Tensor t = p.value;
    std::copy(a.values.begin(), a.values.end(), t.mutable_values().begin());
  }
}

}  // namespace afd
