#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "afd/checkpoint.hpp"
#include "afd/datapipe.hpp"
#include "afd/model.hpp"

namespace afd::train {

struct FreezeMask {
  bool clap_encoder = false;
  bool transform_xattn = true;
  bool lm = false;

  bool trainable(nn::Component c) const;
  void validate() const;  // at least one component trainable
  std::string str() const;  // e.g. "FTF" in clap/xattn/lm order
  static FreezeMask parse(std::string_view flags);
  bool operator==(const FreezeMask&) const = default;
};

struct StageConfig {
  std::string name;
  FreezeMask mask;
  std::size_t max_windows = 3;
  std::map<std::string, double> weights;  // dataset -> weight; empty = every dataset at 1
  std::size_t epochs = 1;
  double lr = 1e-4;
  double weight_decay = 0.1;
};

using Schedule = std::vector<StageConfig>;

/// Throws on an invalid mask, zero windows or epochs, or a negative lr.
void validate_schedule(const Schedule& schedule);

/// pretrain at w=3 (xattn only), finetune at w=9 (clap + xattn), long at w=30 (xattn only).
Schedule canonical_schedule();

/// The ten rows of the schedule ablation table, keyed "1-stage-a" .. "4-stage-b".
/// Stages that absorb later data list those datasets in their weights.
std::map<std::string, Schedule> ablation_schedules();
Schedule ablation_schedule(std::string_view name);

/// Decoupled-weight-decay Adam with per-parameter step counts.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Updates every parameter whose component `mask` leaves trainable and
  /// that has a gradient; everything else is left untouched.
  void step(nn::ParamStore& store, const FreezeMask& mask, double lr, double weight_decay);
  std::uint64_t steps_of(const std::string& param) const;

  void save(Checkpoint& ckpt) const;  // "adam/m/<name>", "adam/v/<name>", "adam/t/<name>"
  void load(const Checkpoint& ckpt);

 private:
  struct Slot {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };
  std::map<std::string, Slot> slots_;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  std::size_t max_sentences = 16;
  std::size_t max_tokens = 0;  // 0 = 4 items at the stage window cap
  std::size_t bsz_mult = 2;
  data::BatchMode batch_mode = data::BatchMode::constraint_driven;
  std::vector<double> bucket_edges = {30.0, 90.0, 300.0};
  double contrastive_weight = 1.0;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

struct StepResult {
  double loss = 0.0;
  double lm_loss = 0.0;
  double contrastive_loss = 0.0;  // 0 when the CLAP towers are frozen
  double grad_norm = 0.0;  // before clipping
  std::size_t batch_size = 0;
  std::size_t max_item_windows = 0;
};

/// One optimizer step on `batch`. Parameters outside the mask get no gradient
/// and are never written. A non-finite loss throws before any update.
StepResult train_step(AlmModel& model, std::span<const data::ManifestItem> batch, const StageConfig& stage,
                      AdamW& opt, const TrainOptions& options);

struct StepRecord {
  std::size_t stage = 0;
  std::string stage_name;
  std::uint64_t step = 0;  // global, 1-based
  std::size_t epoch = 0;
  double loss = 0.0;
  double lm_loss = 0.0;
  double contrastive_loss = 0.0;
  double grad_norm = 0.0;
  double padded_fraction = 0.0;
  std::size_t batch_size = 0;
  std::size_t max_windows = 0;
  std::size_t max_item_windows = 0;

  nlohmann::json to_json() const;
};

/// Step records, optionally mirrored line by line into a JSONL file.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(std::filesystem::path jsonl_path, bool append = false);

  void append(const StepRecord& record);
  const std::vector<StepRecord>& records() const { return records_; }
  std::string to_jsonl() const;

 private:
  std::vector<StepRecord> records_;
  std::optional<std::filesystem::path> path_;
};

/// Where a run stands; stored in checkpoint metadata.
struct Cursor {
  std::size_t stage = 0;
  std::size_t epoch = 0;
  std::size_t batch = 0;  // next batch within the epoch
  std::uint64_t global_step = 0;

  nlohmann::json to_json() const;
  static Cursor from_json(const nlohmann::json& j);
  bool operator==(const Cursor&) const = default;
};

struct RunHooks {
  // Called after every step with the batch that was trained on.
  std::function<void(const StepRecord&, std::span<const data::ManifestItem>)> on_step;
  // Called when a stage finishes (0-based index), before the next mask is applied.
  std::function<void(std::size_t stage, const AlmModel&)> on_stage_end;
};

struct RunControl {
  std::filesystem::path checkpoint_dir;  // empty = no checkpoints
  std::size_t checkpoint_every = 0;  // steps between latest.ckpt writes, 0 = only at stop
  std::optional<std::uint64_t> stop_after_steps;  // simulated interruption
  std::optional<std::filesystem::path> resume_from;
};

struct RunResult {
  Cursor cursor;
  bool completed = false;
  std::uint64_t steps = 0;  // steps taken by this call
};

/// Items of `corpus` grouped by dataset name into duration buckets, weighted
/// per the stage (datasets the stage does not name are skipped).
std::vector<data::BucketedDataset> stage_datasets(const StageConfig& stage, std::span<const data::ManifestItem> corpus,
                                                  const TrainOptions& options);

/// Batches of one epoch: blended, length-sorted, dynamically batched and then
/// shuffled with a seed derived from (seed, stage, epoch).
struct EpochPlan {
  std::vector<data::ManifestItem> items;
  data::BatchPlan plan;
  std::vector<std::size_t> effective_tokens;
};
EpochPlan plan_epoch(const StageConfig& stage, std::size_t stage_index, std::size_t epoch,
                     std::span<const data::ManifestItem> corpus, const ModelConfig& model, const TrainOptions& options);

/// Runs (or resumes) a schedule. Checkpoints "stage<k>.ckpt" after each stage
/// and "latest.ckpt" every `checkpoint_every` steps and on interruption.
RunResult run_schedule(const Schedule& schedule, std::span<const data::ManifestItem> corpus, AlmModel& model,
                       const TrainOptions& options, MetricsLog& log, const RunControl& control = {},
                       const RunHooks& hooks = {});

/// Full training state: params, optimizer, cursor.
Checkpoint make_checkpoint(const AlmModel& model, const AdamW& opt, const Cursor& cursor);

/// Training config file (JSON): model sizes, corpus, schedule, options.
struct RunConfig {
  ModelConfig model;
  Schedule schedule;
  TrainOptions options;
  std::size_t corpus_items = 512;
  std::size_t corpus_concepts = 16;
  std::size_t eval_items = 128;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& config);

/// Synthetic corpora for a config: training uses the config seed, evaluation
/// the seed + 1000 so the two never share feature draws.
std::vector<data::ManifestItem> make_train_corpus(const RunConfig& config);
std::vector<data::ManifestItem> make_eval_corpus(const RunConfig& config);

}  // namespace afd::train
