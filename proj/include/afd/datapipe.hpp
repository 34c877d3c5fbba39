#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "afd/error.hpp"

namespace afd::data {

struct ManifestItem {
  std::string id;
  std::string dataset;
  double duration_s = 0.0;
  std::size_t num_tokens = 1;
  std::string text;
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
  std::optional<std::string> label;
  std::int64_t feature_seed = 0;
  std::optional<std::int64_t> concept_id;  // synthetic corpora only

  void validate() const;
};

void to_json(nlohmann::json& j, const ManifestItem& item);
void from_json(const nlohmann::json& j, ManifestItem& item);

/// JSON Lines, one item per line. Blank lines are skipped; errors name the line.
std::vector<ManifestItem> read_manifest(const std::filesystem::path& path);
std::vector<ManifestItem> parse_manifest(std::string_view text);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestItem> items);

struct BucketedDataset {
  std::string name;
  double weight = 1.0;
  std::vector<double> bucket_edges;
  std::map<std::size_t, std::vector<ManifestItem>> buckets;  // bucket index -> items in manifest order

  std::size_t size() const;
};

/// Duration d goes to the first bucket whose edge >= d; anything past the last
/// edge lands in overflow bucket `edges.size()` with a warning.
BucketedDataset build_buckets(std::string name, double weight, std::span<const ManifestItem> items,
                              std::vector<double> bucket_edges);
std::size_t bucket_of(double duration_s, std::span<const double> edges);

std::uint64_t sum_of_char_codes(std::string_view s);
/// Seed for the reshuffle at wrap count `wrap`: char-code sum of name + "epoch" + decimal(wrap).
std::uint64_t wrap_seed(std::string_view dataset_name, std::uint64_t wrap);

/// Fisher-Yates permutation of 0..n-1 driven by mt19937_64 seeded with `seed`.
std::vector<std::size_t> shuffle_permutation(std::size_t n, std::uint64_t seed);

template <class T>
std::vector<T> deterministic_shuffle(const std::vector<T>& bucket, std::uint64_t seed) {
  std::vector<T> out;
  out.reserve(bucket.size());
  for (std::size_t i : shuffle_permutation(bucket.size(), seed)) out.push_back(bucket[i]);
  return out;
}

using BrokenPredicate = std::function<bool(const ManifestItem&)>;

/// Weighted bucketed blending for one epoch. For each dataset and bucket (in
/// order) visits global indices g in [floor(e*b*w), floor((e+1)*b*w)) and reads
/// key g mod b from the wrap-r ordering, r = floor(g/b). Wrap 0 is manifest
/// order; wrap r > 0 is the bucket shuffled with wrap_seed(name, r).
std::vector<ManifestItem> blend_epoch(std::span<const BucketedDataset> datasets, std::uint64_t epoch,
                                      const BrokenPredicate& is_broken = nullptr);

/// Number of global indices a bucket contributes in `epoch`.
std::uint64_t epoch_slice_size(std::size_t bucket_total, double weight, std::uint64_t epoch);

enum class BatchMode { paper_literal, constraint_driven };
BatchMode parse_batch_mode(std::string_view name);
std::string_view batch_mode_name(BatchMode mode);

struct BatchStats {
  std::size_t sentences = 0;
  std::size_t max_tokens_in_batch = 0;
  std::size_t total_cells = 0;
  std::size_t padded_cells = 0;
};

struct BatchPlan {
  std::vector<std::vector<std::size_t>> batches;
  std::vector<BatchStats> stats;

  /// Stable key order, so equal plans serialize to equal bytes.
  nlohmann::json to_json() const;
};

using NumTokensFn = std::function<std::size_t(std::size_t)>;

struct BatchLimits {
  std::size_t max_tokens = 0;     // 0 = unconstrained
  std::size_t max_sentences = 0;  // 0 = unconstrained
  std::size_t bsz_mult = 1;
};

/// Dynamic batching by size. Batches are contiguous runs of `indices`.
BatchPlan batch_by_size(std::span<const std::size_t> indices, const NumTokensFn& num_tokens_of,
                        const BatchLimits& limits, BatchMode mode = BatchMode::constraint_driven);

/// Consecutive fixed-size chunks; used as the padding baseline.
BatchPlan fixed_size_batches(std::span<const std::size_t> indices, const NumTokensFn& num_tokens_of,
                             std::size_t batch_size);

/// Stable ascending sort of indices by token count.
std::vector<std::size_t> sort_by_length(std::span<const std::size_t> indices, const NumTokensFn& num_tokens_of);

struct PaddingStats {
  double padded_fraction = 0.0;
  std::vector<double> per_batch;
};

PaddingStats padding_stats(const BatchPlan& plan, const NumTokensFn& num_tokens_of);

}  // namespace afd::data
