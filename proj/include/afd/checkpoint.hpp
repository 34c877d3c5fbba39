#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "afd/nn.hpp"
#include "afd/tensor.hpp"

namespace afd {

struct NamedArray {
  Shape shape;
  std::vector<double> values;
};

/// Named double arrays plus a free-form metadata string (JSON by convention).
///
/// File layout, little-endian: "AFDCKPT1", u32 version, u64 metadata length,
/// metadata bytes, u64 array count, then per array u64 name length, name,
/// u64 rank, rank x u64 extents, raw doubles.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, const Tensor& t);
  void put(const std::string& name, Shape shape, std::vector<double> values);
  const NamedArray& get(const std::string& name) const;
  bool contains(const std::string& name) const { return arrays_.contains(name); }
  const std::map<std::string, NamedArray>& arrays() const { return arrays_; }

  std::string metadata;

  /// Writes to a temporary sibling and renames, so a crash never leaves a torn file.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::map<std::string, NamedArray> arrays_;
};

/// Stores every parameter under "param/<name>".
void capture_params(const nn::ParamStore& store, Checkpoint& ckpt);

/// Copies saved values into the existing parameters. Throws naming the first
/// parameter that is missing or whose shape differs.
void restore_params(const nn::ParamStore& store, const Checkpoint& ckpt);

}  // namespace afd
