#include "afd/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "afd/error.hpp"
#include "afd/rng.hpp"

namespace afd::data {

using nlohmann::json;

void ManifestItem::validate() const {
  if (id.empty()) throw Error("manifest item: empty id");
  if (!(duration_s > 0.0) || !std::isfinite(duration_s))
    throw Error("manifest item '" + id + "': duration_s must be positive");
  if (num_tokens < 1) throw Error("manifest item '" + id + "': num_tokens must be at least 1");
}

void to_json(json& j, const ManifestItem& item) {
  j = json{{"id", item.id},
           {"dataset", item.dataset},
           {"duration_s", item.duration_s},
           {"num_tokens", item.num_tokens},
           {"text", item.text},
           {"positives", item.positives},
           {"negatives", item.negatives},
           {"feature_seed", item.feature_seed}};
  if (item.label) j["label"] = *item.label;
  if (item.concept_id) j["concept_id"] = *item.concept_id;
}

void from_json(const json& j, ManifestItem& item) {
  item.id = j.at("id").get<std::string>();
  item.dataset = j.value("dataset", std::string());
  item.duration_s = j.at("duration_s").get<double>();
  const auto tokens = j.at("num_tokens").get<std::int64_t>();
  if (tokens < 1) throw Error("manifest item '" + item.id + "': num_tokens must be at least 1");
  item.num_tokens = static_cast<std::size_t>(tokens);
  item.text = j.value("text", std::string());
  item.positives = j.value("positives", std::vector<std::string>{});
  item.negatives = j.value("negatives", std::vector<std::string>{});
  item.feature_seed = j.value("feature_seed", std::int64_t{0});
  item.label.reset();
  if (j.contains("label") && !j["label"].is_null()) item.label = j["label"].get<std::string>();
  item.concept_id.reset();
  if (j.contains("concept_id") && !j["concept_id"].is_null()) item.concept_id = j["concept_id"].get<std::int64_t>();
}

std::vector<ManifestItem> parse_manifest(std::string_view text) {
  std::vector<ManifestItem> items;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto item = json::parse(line).get<ManifestItem>();
      item.validate();
      items.push_back(std::move(item));
    } catch (const std::exception& e) {
      throw Error("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return items;
}

std::vector<ManifestItem> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str());
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestItem> items) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& item : items) out << json(item).dump() << '\n';
  if (!out) throw IoError("write to " + path.string() + " failed");
}

std::size_t BucketedDataset::size() const {
  std::size_t n = 0;
  for (const auto& [idx, items] : buckets) n += items.size();
  return n;
}

std::size_t bucket_of(double duration_s, std::span<const double> edges) {
  return static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), duration_s) - edges.begin());
}

BucketedDataset build_buckets(std::string name, double weight, std::span<const ManifestItem> items,
                              std::vector<double> bucket_edges) {
  for (std::size_t i = 1; i < bucket_edges.size(); ++i)
    if (!(bucket_edges[i] > bucket_edges[i - 1])) throw Error("build_buckets: edges must be strictly increasing");
  if (!(weight > 0.0)) throw Error("build_buckets: dataset '" + name + "' weight must be positive");
  BucketedDataset ds;
  ds.name = std::move(name);
  ds.weight = weight;
  ds.bucket_edges = std::move(bucket_edges);
  std::size_t overflow = 0;
  for (const auto& item : items) {
    const std::size_t b = bucket_of(item.duration_s, ds.bucket_edges);
    if (b == ds.bucket_edges.size()) ++overflow;
    ds.buckets[b].push_back(item);
  }
  if (overflow > 0)
    warn("dataset '" + ds.name + "': " + std::to_string(overflow) + " item(s) longer than the last bucket edge");
  return ds;
}

std::uint64_t sum_of_char_codes(std::string_view s) {
  std::uint64_t total = 0;
  for (unsigned char c : s) total += c;
  return total;
}

std::uint64_t wrap_seed(std::string_view dataset_name, std::uint64_t wrap) {
  return sum_of_char_codes(std::string(dataset_name) + "epoch" + std::to_string(wrap));
}

std::vector<std::size_t> shuffle_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(perm));
  return perm;
}

namespace {

// floor(e * b * w). Decimal weights such as 0.3 are not exact in binary; the
// nudge keeps 10 * 10 * 0.3 from flooring to 29.
std::uint64_t blend_index(std::uint64_t e, std::size_t b, double w) {
  const double x = static_cast<double>(e) * static_cast<double>(b) * w;
  return static_cast<std::uint64_t>(std::floor(x + 1e-9 * std::max(1.0, x)));
}

}  // namespace

std::uint64_t epoch_slice_size(std::size_t bucket_total, double weight, std::uint64_t epoch) {
  return blend_index(epoch + 1, bucket_total, weight) - blend_index(epoch, bucket_total, weight);
}

std::vector<ManifestItem> blend_epoch(std::span<const BucketedDataset> datasets, std::uint64_t epoch,
                                      const BrokenPredicate& is_broken) {
  std::vector<ManifestItem> out;
  for (const auto& ds : datasets) {
    if (!(ds.weight > 0.0)) throw Error("blend_epoch: dataset '" + ds.name + "' weight must be positive");
    for (const auto& [bucket_idx, items] : ds.buckets) {
      const std::size_t b = items.size();
      if (b == 0) continue;
      const std::uint64_t start = blend_index(epoch, b, ds.weight);
      const std::uint64_t end = blend_index(epoch + 1, b, ds.weight);
      std::uint64_t cached_wrap = 0;
      std::vector<std::size_t> order(b);
      std::iota(order.begin(), order.end(), 0);
      bool have_order = start / b == 0;
      for (std::uint64_t g = start; g < end; ++g) {
        const std::uint64_t wrap = g / b;
        if (!have_order || wrap != cached_wrap) {
          if (wrap == 0) {
            std::iota(order.begin(), order.end(), 0);
          } else {
            order = shuffle_permutation(b, wrap_seed(ds.name, wrap));
          }
          cached_wrap = wrap;
          have_order = true;
        }
        const auto& item = items[order[g % b]];
        if (is_broken && is_broken(item)) continue;
        out.push_back(item);
      }
    }
  }
  return out;
}

BatchMode parse_batch_mode(std::string_view name) {
  if (name == "paper_literal") return BatchMode::paper_literal;
  if (name == "constraint_driven") return BatchMode::constraint_driven;
  throw Error("unknown batch mode '" + std::string(name) + "' (expected paper_literal or constraint_driven)");
}

std::string_view batch_mode_name(BatchMode mode) {
  return mode == BatchMode::paper_literal ? "paper_literal" : "constraint_driven";
}

namespace {

BatchStats stats_for(std::span<const std::size_t> batch, const NumTokensFn& num_tokens_of) {
  BatchStats s;
  s.sentences = batch.size();
  std::size_t real = 0;
  for (std::size_t i : batch) {
    const std::size_t t = num_tokens_of(i);
    s.max_tokens_in_batch = std::max(s.max_tokens_in_batch, t);
    real += t;
  }
  s.total_cells = s.sentences * s.max_tokens_in_batch;
  s.padded_cells = s.total_cells - real;
  return s;
}

void emit(BatchPlan& plan, std::span<const std::size_t> indices, std::size_t begin, std::size_t end,
          const NumTokensFn& num_tokens_of) {
  if (begin >= end) return;  // the literal pseudocode can slice an empty range; nothing to emit
  auto batch = indices.subspan(begin, end - begin);
  plan.batches.emplace_back(batch.begin(), batch.end());
  plan.stats.push_back(stats_for(batch, num_tokens_of));
}

bool overflows(std::size_t sentences, std::size_t max_tok, const BatchLimits& l) {
  return (l.max_sentences > 0 && sentences > l.max_sentences) || (l.max_tokens > 0 && sentences * max_tok > l.max_tokens);
}

BatchPlan literal(std::span<const std::size_t> indices, const NumTokensFn& tok, const BatchLimits& l) {
  BatchPlan plan;
  std::size_t batch_start = 0, tail_max = 0, batch_max = 0;
  for (std::size_t pos = 0; pos < indices.size(); ++pos) {
    tail_max = std::max(tail_max, tok(indices[pos]));
    const std::size_t new_end = pos + 1;
    const std::size_t new_max = std::max(batch_max, tail_max);
    const std::size_t sentences = new_end - batch_start;
    const bool size_ok = sentences < l.bsz_mult || sentences % l.bsz_mult == 0;
    if (overflows(sentences, new_max, l)) {
      emit(plan, indices, batch_start, pos, tok);
      batch_start = pos;
      batch_max = tok(indices[pos]);
      tail_max = tok(indices[pos]);
    } else if (size_ok) {
      emit(plan, indices, batch_start, new_end, tok);
      batch_start = new_end;
      batch_max = 0;
      tail_max = 0;
    } else {
      batch_max = new_max;
    }
  }
  emit(plan, indices, batch_start, indices.size(), tok);
  return plan;
}

BatchPlan constraint_driven(std::span<const std::size_t> indices, const NumTokensFn& tok, const BatchLimits& l) {
  BatchPlan plan;
  const std::size_t n = indices.size(), mult = l.bsz_mult;
  std::size_t start = 0, cur_max = 0, pos = 0;
  while (pos < n) {
    const std::size_t t = tok(indices[pos]);
    const std::size_t new_max = std::max(cur_max, t);
    const std::size_t sentences = pos + 1 - start;
    if (!overflows(sentences, new_max, l)) {
      cur_max = new_max;
      ++pos;
      continue;
    }
    if (sentences == 1) {
      warn("batch_by_size: item " + std::to_string(indices[pos]) + " with " + std::to_string(t) +
           " tokens exceeds max_tokens " + std::to_string(l.max_tokens) + " on its own");
      emit(plan, indices, pos, pos + 1, tok);
      start = ++pos;
      cur_max = 0;
      continue;
    }
    const std::size_t len = sentences - 1;
    const std::size_t keep = len < mult ? len : len - len % mult;
    emit(plan, indices, start, start + keep, tok);
    start += keep;
    pos = start;
    cur_max = 0;
  }
  const std::size_t left = n - start;
  if (left >= mult && left % mult != 0) {
    const std::size_t keep = left - left % mult;
    emit(plan, indices, start, start + keep, tok);
    start += keep;
  }
  emit(plan, indices, start, n, tok);
  return plan;
}

}  // namespace

BatchPlan batch_by_size(std::span<const std::size_t> indices, const NumTokensFn& num_tokens_of,
                        const BatchLimits& limits, BatchMode mode) {
  if (limits.bsz_mult < 1) throw Error("batch_by_size: bsz_mult must be at least 1");
  return mode == BatchMode::paper_literal ? literal(indices, num_tokens_of, limits)
                                          : constraint_driven(indices, num_tokens_of, limits);
}

BatchPlan fixed_size_batches(std::span<const std::size_t> indices, const NumTokensFn& num_tokens_of,
                             std::size_t batch_size) {
  if (batch_size == 0) throw Error("fixed_size_batches: batch size must be positive");
  BatchPlan plan;
  for (std::size_t b = 0; b < indices.size(); b += batch_size)
    emit(plan, indices, b, std::min(indices.size(), b + batch_size), num_tokens_of);
  return plan;
}

std::vector<std::size_t> sort_by_length(std::span<const std::size_t> indices, const NumTokensFn& num_tokens_of) {
  std::vector<std::size_t> out(indices.begin(), indices.end());
  std::stable_sort(out.begin(), out.end(),
                   [&](std::size_t a, std::size_t b) { return num_tokens_of(a) < num_tokens_of(b); });
  return out;
}

PaddingStats padding_stats(const BatchPlan& plan, const NumTokensFn& num_tokens_of) {
  if (plan.batches.empty()) throw Error("padding_stats: empty plan");
  PaddingStats out;
  std::size_t total = 0, padded = 0;
  for (const auto& batch : plan.batches) {
    const auto s = stats_for(batch, num_tokens_of);
    total += s.total_cells;
    padded += s.padded_cells;
    out.per_batch.push_back(s.total_cells == 0 ? 0.0
                                               : static_cast<double>(s.padded_cells) / static_cast<double>(s.total_cells));
  }
  out.padded_fraction = total == 0 ? 0.0 : static_cast<double>(padded) / static_cast<double>(total);
  return out;
}

json BatchPlan::to_json() const {
  json stats_json = json::array();
  for (const auto& s : stats)
    stats_json.push_back({{"max_tokens_in_batch", s.max_tokens_in_batch},
                          {"padded_cells", s.padded_cells},
                          {"sentences", s.sentences},
                          {"total_cells", s.total_cells}});
  return json{{"batches", batches}, {"stats", stats_json}};
}

}  // namespace afd::data
