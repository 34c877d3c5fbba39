#include "afd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "afd/afclap.hpp"
#include "afd/encoders.hpp"
#include "afd/rng.hpp"
#include "afd/synth.hpp"

namespace afd::train {

using nn::Component;

bool FreezeMask::trainable(Component c) const {
  switch (c) {
    case Component::clap_encoder: return clap_encoder;
    case Component::transform_xattn: return transform_xattn;
    case Component::lm: return lm;
  }
  return false;
}

void FreezeMask::validate() const {
  if (!clap_encoder && !transform_xattn && !lm) throw Error("freeze mask: every component is frozen");
}

std::string FreezeMask::str() const {
  std::string s;
  for (bool b : {clap_encoder, transform_xattn, lm}) s += b ? 'T' : 'F';
  return s;
}

FreezeMask FreezeMask::parse(std::string_view flags) {
  if (flags.size() != 3) throw Error("freeze mask: expected three T/F flags (clap, xattn, lm), got '" + std::string(flags) + "'");
  bool v[3];
  for (int i = 0; i < 3; ++i) {
    if (flags[i] == 'T' || flags[i] == 't') v[i] = true;
    else if (flags[i] == 'F' || flags[i] == 'f') v[i] = false;
    else throw Error("freeze mask: bad flag '" + std::string(1, flags[i]) + "' in '" + std::string(flags) + "'");
  }
  return {v[0], v[1], v[2]};
}

void validate_schedule(const Schedule& schedule) {
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    const auto& st = schedule[s];
    const std::string where = "stage " + std::to_string(s + 1) + " ('" + st.name + "')";
    try {
      st.mask.validate();
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
    if (st.max_windows == 0) throw Error(where + ": max_windows must be at least 1");
    if (st.epochs == 0) throw Error(where + ": epochs must be at least 1");
    if (!(st.lr >= 0.0) || !std::isfinite(st.lr)) throw Error(where + ": learning rate must be finite and >= 0");
    if (!(st.weight_decay >= 0.0)) throw Error(where + ": weight decay must be >= 0");
    for (const auto& [name, w] : st.weights)
      if (!(w > 0.0)) throw Error(where + ": weight for '" + name + "' must be positive");
  }
}

namespace {

StageConfig stage(std::string name, std::string_view mask, std::size_t windows,
                  std::map<std::string, double> weights) {
  StageConfig s;
  s.name = std::move(name);
  s.mask = FreezeMask::parse(mask);
  s.max_windows = windows;
  s.weights = std::move(weights);
  return s;
}

const std::map<std::string, double> kPretrain = {{"pretrain", 1.0}};
const std::map<std::string, double> kFinetune = {{"finetune", 1.0}};
const std::map<std::string, double> kLong = {{"long", 1.0}};
const std::map<std::string, double> kFinetuneLong = {{"finetune", 1.0}, {"long", 1.0}};
const std::map<std::string, double> kAll = {{"pretrain", 1.0}, {"finetune", 1.0}, {"long", 1.0}};

}  // namespace

Schedule canonical_schedule() {
  return {stage("pretrain", "FTF", encoders::kStage1Windows, kPretrain),
          stage("finetune", "TTF", encoders::kStage2Windows, kFinetune),
          stage("long", "FTF", encoders::kLongAudioWindows, kLong)};
}

std::map<std::string, Schedule> ablation_schedules() {
  const auto w1 = encoders::kStage1Windows, w2 = encoders::kStage2Windows, w3 = encoders::kLongAudioWindows;
  auto one = [&](std::string_view m) { return Schedule{stage("all", m, w3, kAll)}; };
  auto two = [&](std::string_view a, std::string_view b) {
    return Schedule{stage("pretrain", a, w1, kPretrain), stage("finetune+long", b, w3, kFinetuneLong)};
  };
  std::map<std::string, Schedule> out;
  out["1-stage-a"] = one("TTF");
  out["1-stage-b"] = one("TTT");
  out["2-stage-a"] = two("FTF", "TTF");
  out["2-stage-b"] = two("FTF", "TTT");
  out["2-stage-c"] = two("FTF", "FTT");
  out["2-stage-d"] = two("TTF", "TTF");
  out["3-stage-a"] = canonical_schedule();
  out["3-stage-b"] = {stage("pretrain", "FTF", w1, kPretrain), stage("finetune", "TTF", w2, kFinetune),
                      stage("long", "TTT", w3, kLong)};
  out["4-stage-a"] = {stage("pretrain", "FTF", w1, kPretrain), stage("finetune", "TTF", w2, kFinetune),
                      stage("finetune-lm", "FTT", w2, kFinetune), stage("long", "FTF", w3, kLong)};
  out["4-stage-b"] = {stage("pretrain", "FTF", w1, kPretrain), stage("finetune", "TTF", w2, kFinetune),
                      stage("finetune-all", "TTT", w2, kFinetune), stage("long", "FTF", w3, kLong)};
  return out;
}

Schedule ablation_schedule(std::string_view name) {
  if (name == "canonical") return canonical_schedule();
  auto all = ablation_schedules();
  auto it = all.find(std::string(name));
  if (it == all.end()) {
    std::string known;
    for (const auto& [k, v] : all) known += (known.empty() ? "" : ", ") + k;
    throw Error("unknown schedule '" + std::string(name) + "' (known: canonical, " + known + ")");
  }
  return it->second;
}

// ---- AdamW ----

void AdamW::step(nn::ParamStore& store, const FreezeMask& mask, double lr, double weight_decay) {
  for (const auto& p : store.params()) {
    if (!mask.trainable(p.component) || !p.value.has_grad()) continue;
    Tensor value = p.value;
    auto w = value.mutable_values();
    auto g = p.value.grad();
    auto& slot = slots_[p.name];
    if (slot.m.empty()) {
      slot.m.assign(w.size(), 0.0);
      slot.v.assign(w.size(), 0.0);
    }
    ++slot.t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(slot.t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(slot.t));
    for (std::size_t i = 0; i < w.size(); ++i) {
      slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g[i];
      slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / c1, vhat = slot.v[i] / c2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[i]);
    }
  }
}

std::uint64_t AdamW::steps_of(const std::string& param) const {
  auto it = slots_.find(param);
  return it == slots_.end() ? 0 : it->second.t;
}

void AdamW::save(Checkpoint& ckpt) const {
  for (const auto& [name, s] : slots_) {
    ckpt.put("adam/m/" + name, {s.m.size()}, s.m);
    ckpt.put("adam/v/" + name, {s.v.size()}, s.v);
    ckpt.put("adam/t/" + name, {1}, {static_cast<double>(s.t)});
  }
}

void AdamW::load(const Checkpoint& ckpt) {
  slots_.clear();
  const std::string prefix = "adam/m/";
  for (const auto& [key, arr] : ckpt.arrays()) {
    if (key.rfind(prefix, 0) != 0) continue;
    const std::string name = key.substr(prefix.size());
    Slot s;
    s.m = arr.values;
    s.v = ckpt.get("adam/v/" + name).values;
    s.t = static_cast<std::uint64_t>(ckpt.get("adam/t/" + name).values.at(0));
    if (s.v.size() != s.m.size()) throw Error("optimizer state for '" + name + "' is inconsistent");
    slots_[name] = std::move(s);
  }
}

// ---- one step ----

namespace {

std::vector<std::size_t> lm_tokens(const std::string& text, std::size_t max_len) {
  auto t = encoders::byte_tokens(text);
  if (t.size() > max_len) t.resize(max_len);
  return t;
}

void apply_mask(nn::ParamStore& store, const FreezeMask& mask) {
  for (const auto& p : store.params()) {
    Tensor t = p.value;
    t.set_requires_grad(mask.trainable(p.component));
  }
}

// Embeds each distinct string once and returns rows in request order.
Tensor embed_texts(const encoders::TextEncoder& tower, const std::vector<std::string>& texts) {
  std::map<std::string, Tensor> cache;
  std::vector<Tensor> rows;
  rows.reserve(texts.size());
  for (const auto& s : texts) {
    auto it = cache.find(s);
    if (it == cache.end()) it = cache.emplace(s, tower.encode(s)).first;
    rows.push_back(it->second);
  }
  return rows.size() == 1 ? rows.front() : ops::concat(rows, 0);
}

}  // namespace

StepResult train_step(AlmModel& model, std::span<const data::ManifestItem> batch, const StageConfig& stage,
                      AdamW& opt, const TrainOptions& options) {
  if (batch.empty()) throw Error("train_step: empty batch");
  stage.mask.validate();
  auto& store = model.store();
  apply_mask(store, stage.mask);
  store.zero_grad();

  const auto& cfg = model.config();
  StepResult r;
  r.batch_size = batch.size();

  std::vector<encoders::SegmentedClip> segs;
  segs.reserve(batch.size());
  for (const auto& item : batch) {
    segs.push_back(encoders::segment_windows(synth::clip_for(item, cfg.encoder), cfg.encoder, stage.max_windows));
    r.max_item_windows = std::max(r.max_item_windows, segs.back().count());
  }

  std::vector<Tensor> lm_losses;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor audio = model.audio_tokens(segs[i]);
    lm_losses.push_back(
        ops::reshape(model.lm().next_token_loss(lm_tokens(batch[i].text, cfg.lm.max_len), audio), {1}));
  }
  const Tensor lm_loss =
      lm_losses.size() == 1 ? lm_losses.front() : ops::reshape(ops::mean(ops::concat(lm_losses, 0)), {1});
  r.lm_loss = lm_loss.item();
  Tensor loss = lm_loss;

  if (stage.mask.clap_encoder && options.contrastive_weight > 0.0) {
    std::size_t m = 0, n = SIZE_MAX;
    for (const auto& item : batch) {
      m = std::max(m, std::max<std::size_t>(1, item.positives.size()));
      n = std::min(n, item.negatives.size());
    }
    std::vector<Tensor> audio_rows;
    std::vector<std::string> pos, neg;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      audio_rows.push_back(model.audio().clap_embedding(segs[i]));
      const auto& item = batch[i];
      for (std::size_t j = 0; j < m; ++j) {
        pos.push_back(item.positives.empty() ? item.text : item.positives[j % item.positives.size()]);
        for (std::size_t k = 0; k < n; ++k) neg.push_back(item.negatives[(j * n + k) % item.negatives.size()]);
      }
    }
    afclap::ContrastiveBatch cb;
    cb.audio = audio_rows.size() == 1 ? audio_rows.front() : ops::concat(audio_rows, 0);
    cb.positives = embed_texts(model.text(), pos);
    if (n > 0) cb.negatives = embed_texts(model.text(), neg);
    cb.batch = batch.size();
    cb.positives_per_item = m;
    cb.negatives_per_positive = n;
    cb.tau = cfg.tau;
    const Tensor c = ops::reshape(afclap::contrastive_loss(cb), {1});
    r.contrastive_loss = c.item();
    loss = ops::add(loss, ops::scale(c, options.contrastive_weight));
  }

  r.loss = loss.item();
  if (!std::isfinite(r.loss))
    throw NonFiniteError("train_step: non-finite loss (lm " + std::to_string(r.lm_loss) + ", contrastive " +
                         std::to_string(r.contrastive_loss) + ") in stage '" + stage.name + "'; no update applied");
  if (loss.requires_grad()) backward(loss);

  double sq = 0.0;
  for (const auto& p : store.params()) {
    if (!stage.mask.trainable(p.component) || !p.value.has_grad()) continue;
    for (double g : p.value.grad()) sq += g * g;
  }
  r.grad_norm = std::sqrt(sq);
  if (!std::isfinite(r.grad_norm))
    throw NonFiniteError("train_step: non-finite gradient norm in stage '" + stage.name + "'; no update applied");
  if (options.clip_norm > 0.0 && r.grad_norm > options.clip_norm) {
    const double f = options.clip_norm / r.grad_norm;
    for (const auto& p : store.params()) {
      if (!stage.mask.trainable(p.component) || !p.value.has_grad()) continue;
      auto& g = p.value.node()->grad;
      for (double& x : g) x *= f;
    }
  }
  opt.step(store, stage.mask, stage.lr, stage.weight_decay);
  store.zero_grad();
  return r;
}

// ---- metrics ----

namespace {
std::string record_line(const StepRecord& r) {
  // Fixed key order so identical runs give identical bytes.
  nlohmann::ordered_json j;
  j["stage"] = r.stage;
  j["stage_name"] = r.stage_name;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["loss"] = r.loss;
  j["lm_loss"] = r.lm_loss;
  j["contrastive_loss"] = r.contrastive_loss;
  j["grad_norm"] = r.grad_norm;
  j["padded_fraction"] = r.padded_fraction;
  j["batch_size"] = r.batch_size;
  j["max_windows"] = r.max_windows;
  j["max_item_windows"] = r.max_item_windows;
  return j.dump();
}
}  // namespace

nlohmann::json StepRecord::to_json() const { return nlohmann::json::parse(record_line(*this)); }

MetricsLog::MetricsLog(std::filesystem::path jsonl_path, bool append) : path_(std::move(jsonl_path)) {
  if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
  std::ofstream out(*path_, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("metrics log: cannot open " + path_->string());
}

void MetricsLog::append(const StepRecord& record) {
  records_.push_back(record);
  if (!path_) return;
  std::ofstream out(*path_, std::ios::app);
  out << record_line(record) << '\n';
  if (!out) throw IoError("metrics log: write failed for " + path_->string());
}

std::string MetricsLog::to_jsonl() const {
  std::string s;
  for (const auto& r : records_) s += record_line(r) + "\n";
  return s;
}

nlohmann::json Cursor::to_json() const {
  return {{"stage", stage}, {"epoch", epoch}, {"batch", batch}, {"global_step", global_step}};
}

Cursor Cursor::from_json(const nlohmann::json& j) {
  Cursor c;
  c.stage = j.at("stage").get<std::size_t>();
  c.epoch = j.at("epoch").get<std::size_t>();
  c.batch = j.at("batch").get<std::size_t>();
  c.global_step = j.at("global_step").get<std::uint64_t>();
  return c;
}

// ---- schedule orchestration ----

std::vector<data::BucketedDataset> stage_datasets(const StageConfig& stage, std::span<const data::ManifestItem> corpus,
                                                  const TrainOptions& options) {
  // Dataset order follows first appearance in the corpus.
  std::vector<std::string> order;
  std::map<std::string, std::vector<data::ManifestItem>> groups;
  for (const auto& item : corpus) {
    auto [it, fresh] = groups.try_emplace(item.dataset);
    if (fresh) order.push_back(item.dataset);
    it->second.push_back(item);
  }
  std::vector<data::BucketedDataset> out;
  for (const auto& name : order) {
    double w = 1.0;
    if (!stage.weights.empty()) {
      auto it = stage.weights.find(name);
      if (it == stage.weights.end()) continue;
      w = it->second;
    }
    out.push_back(data::build_buckets(name, w, groups[name], options.bucket_edges));
  }
  return out;
}

EpochPlan plan_epoch(const StageConfig& stage, std::size_t stage_index, std::size_t epoch,
                     std::span<const data::ManifestItem> corpus, const ModelConfig& model, const TrainOptions& options) {
  EpochPlan ep;
  const auto datasets = stage_datasets(stage, corpus, options);
  if (datasets.empty()) return ep;
  ep.items = data::blend_epoch(datasets, epoch);
  if (ep.items.empty()) return ep;

  const std::size_t cap = stage.max_windows * model.encoder.window_frames();
  ep.effective_tokens.reserve(ep.items.size());
  for (const auto& item : ep.items) ep.effective_tokens.push_back(std::min(item.num_tokens, cap));
  const data::NumTokensFn tok = [&](std::size_t i) { return ep.effective_tokens[i]; };

  std::vector<std::size_t> idx(ep.items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto sorted = data::sort_by_length(idx, tok);
  data::BatchLimits limits;
  limits.max_sentences = options.max_sentences;
  limits.max_tokens = options.max_tokens ? options.max_tokens : 4 * cap;
  limits.bsz_mult = options.bsz_mult;
  auto plan = data::batch_by_size(sorted, tok, limits, options.batch_mode);

  const auto perm = data::shuffle_permutation(
      plan.batches.size(),
      derive_seed(options.seed, "stage" + std::to_string(stage_index) + "/epoch" + std::to_string(epoch)));
  for (std::size_t i : perm) {
    ep.plan.batches.push_back(std::move(plan.batches[i]));
    ep.plan.stats.push_back(plan.stats[i]);
  }
  return ep;
}

Checkpoint make_checkpoint(const AlmModel& model, const AdamW& opt, const Cursor& cursor) {
  Checkpoint ck;
  capture_params(model.store(), ck);
  opt.save(ck);
  nlohmann::json meta;
  meta["cursor"] = cursor.to_json();
  meta["seed"] = model.config().seed;
  ck.metadata = meta.dump();
  return ck;
}

namespace {

std::string schedule_fingerprint(const Schedule& schedule) {
  std::string s;
  for (const auto& st : schedule) {
    s += st.name + ":" + st.mask.str() + ":" + std::to_string(st.max_windows) + ":" + std::to_string(st.epochs) + ";";
  }
  return s;
}

}  // namespace

RunResult run_schedule(const Schedule& schedule, std::span<const data::ManifestItem> corpus, AlmModel& model,
                       const TrainOptions& options, MetricsLog& log, const RunControl& control,
                       const RunHooks& hooks) {
  validate_schedule(schedule);
  AdamW opt;
  Cursor cur;
  const std::string fingerprint = schedule_fingerprint(schedule);

  if (control.resume_from) {
    const Checkpoint ck = Checkpoint::load(*control.resume_from);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(ck.metadata);
      cur = Cursor::from_json(meta.at("cursor"));
    } catch (const nlohmann::json::exception& e) {
      throw Error("resume: checkpoint metadata is not a training cursor: " + std::string(e.what()));
    }
    if (meta.contains("schedule") && meta["schedule"].get<std::string>() != fingerprint)
      throw Error("resume: checkpoint was written by a different schedule");
    restore_params(model.store(), ck);
    opt.load(ck);
  }

  auto save = [&](const std::string& file, const Cursor& at) {
    if (control.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(control.checkpoint_dir);
    Checkpoint ck = make_checkpoint(model, opt, at);
    auto meta = nlohmann::json::parse(ck.metadata);
    meta["schedule"] = fingerprint;
    ck.metadata = meta.dump();
    ck.save(control.checkpoint_dir / file);
  };

  RunResult result;
  for (; cur.stage < schedule.size(); ++cur.stage, cur.epoch = 0, cur.batch = 0) {
    const auto& st = schedule[cur.stage];
    apply_mask(model.store(), st.mask);
    for (; cur.epoch < st.epochs; ++cur.epoch, cur.batch = 0) {
      const EpochPlan ep = plan_epoch(st, cur.stage, cur.epoch, corpus, model.config(), options);
      for (; cur.batch < ep.plan.batches.size();) {
        const auto& idx = ep.plan.batches[cur.batch];
        std::vector<data::ManifestItem> items;
        items.reserve(idx.size());
        for (std::size_t i : idx) items.push_back(ep.items[i]);

        const StepResult sr = train_step(model, items, st, opt, options);
        ++cur.batch;
        ++cur.global_step;
        ++result.steps;

        const auto& bs = ep.plan.stats[cur.batch - 1];
        StepRecord rec;
        rec.stage = cur.stage + 1;
        rec.stage_name = st.name;
        rec.step = cur.global_step;
        rec.epoch = cur.epoch;
        rec.loss = sr.loss;
        rec.lm_loss = sr.lm_loss;
        rec.contrastive_loss = sr.contrastive_loss;
        rec.grad_norm = sr.grad_norm;
        rec.padded_fraction =
            bs.total_cells ? static_cast<double>(bs.padded_cells) / static_cast<double>(bs.total_cells) : 0.0;
        rec.batch_size = sr.batch_size;
        rec.max_windows = st.max_windows;
        rec.max_item_windows = sr.max_item_windows;
        log.append(rec);
        if (hooks.on_step) hooks.on_step(rec, items);

        if (control.stop_after_steps && cur.global_step >= *control.stop_after_steps) {
          save("latest.ckpt", cur);
          result.cursor = cur;
          return result;
        }
        if (control.checkpoint_every && cur.global_step % control.checkpoint_every == 0) save("latest.ckpt", cur);
      }
    }
    if (hooks.on_stage_end) hooks.on_stage_end(cur.stage, model);
    save("stage" + std::to_string(cur.stage + 1) + ".ckpt", Cursor{cur.stage + 1, 0, 0, cur.global_step});
  }
  result.cursor = cur;
  result.completed = true;
  return result;
}

// ---- config file ----

namespace {

void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw Error("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      throw Error("config: unknown key '" + where + "." + k + "'");
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error("config: '" + where + "." + key + "' has the wrong type");
  }
}

StageConfig parse_stage(const nlohmann::json& j, std::size_t i) {
  const std::string where = "schedule[" + std::to_string(i) + "]";
  check_keys(j, where, {"name", "mask", "max_windows", "weights", "epochs", "lr", "weight_decay"});
  StageConfig s;
  s.name = "stage" + std::to_string(i + 1);
  read(j, "name", s.name, where);
  if (!j.contains("mask")) throw Error("config: '" + where + ".mask' is required");
  s.mask = FreezeMask::parse(j.at("mask").get<std::string>());
  read(j, "max_windows", s.max_windows, where);
  read(j, "weights", s.weights, where);
  read(j, "epochs", s.epochs, where);
  read(j, "lr", s.lr, where);
  read(j, "weight_decay", s.weight_decay, where);
  return s;
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  check_keys(j, "config", {"seed", "model", "corpus", "schedule", "options", "stage_overrides"});
  RunConfig rc;
  rc.model = desk_model_config();
  std::uint64_t seed = 0;
  read(j, "seed", seed, "config");
  rc.model.seed = seed;
  rc.options.seed = seed;

  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, "model", {"encoder", "lm", "tau"});
    read(m, "tau", rc.model.tau, "model");
    if (m.contains("encoder")) {
      const auto& e = m.at("encoder");
      check_keys(e, "model.encoder",
                 {"feature_dim", "model_dim", "tokens_per_window", "window_seconds", "frame_rate", "head_dim",
                  "encoder_layers", "encoder_heads", "encoder_inner", "transform_layers", "transform_heads",
                  "transform_inner", "rope_base", "use_rope", "rope_per_layer"});
      auto& c = rc.model.encoder;
      const std::string w = "model.encoder";
      read(e, "feature_dim", c.feature_dim, w);
      read(e, "model_dim", c.model_dim, w);
      read(e, "tokens_per_window", c.tokens_per_window, w);
      read(e, "window_seconds", c.window_seconds, w);
      read(e, "frame_rate", c.frame_rate, w);
      read(e, "head_dim", c.head_dim, w);
      read(e, "encoder_layers", c.encoder_layers, w);
      read(e, "encoder_heads", c.encoder_heads, w);
      read(e, "encoder_inner", c.encoder_inner, w);
      read(e, "transform_layers", c.transform_layers, w);
      read(e, "transform_heads", c.transform_heads, w);
      read(e, "transform_inner", c.transform_inner, w);
      read(e, "rope_base", c.rope_base, w);
      read(e, "use_rope", c.use_rope, w);
      read(e, "rope_per_layer", c.rope_per_layer, w);
      rc.model.lm.audio_dim = c.model_dim;
    }
    if (m.contains("lm")) {
      const auto& l = m.at("lm");
      check_keys(l, "model.lm",
                 {"layers", "dim", "heads", "inner", "max_len", "xattn_freq", "xattn_heads", "per_layer_audio_proj"});
      auto& c = rc.model.lm;
      const std::string w = "model.lm";
      read(l, "layers", c.layers, w);
      read(l, "dim", c.dim, w);
      read(l, "heads", c.heads, w);
      read(l, "inner", c.inner, w);
      read(l, "max_len", c.max_len, w);
      read(l, "xattn_freq", c.xattn_freq, w);
      read(l, "xattn_heads", c.xattn_heads, w);
      read(l, "per_layer_audio_proj", c.per_layer_audio_proj, w);
    }
  }
  rc.model.validate();

  if (j.contains("corpus")) {
    const auto& c = j.at("corpus");
    check_keys(c, "corpus", {"items", "concepts", "eval_items"});
    read(c, "items", rc.corpus_items, "corpus");
    read(c, "concepts", rc.corpus_concepts, "corpus");
    read(c, "eval_items", rc.eval_items, "corpus");
  }

  rc.schedule = canonical_schedule();
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    if (s.is_string()) {
      rc.schedule = ablation_schedule(s.get<std::string>());
    } else if (s.is_array()) {
      rc.schedule.clear();
      for (std::size_t i = 0; i < s.size(); ++i) rc.schedule.push_back(parse_stage(s[i], i));
    } else {
      throw Error("config: 'schedule' must be a schedule name or a list of stages");
    }
  }
  // Applied to every stage: handy for changing lr/epochs of a named schedule.
  if (j.contains("stage_overrides")) {
    const auto& o = j.at("stage_overrides");
    check_keys(o, "stage_overrides", {"epochs", "lr", "weight_decay"});
    for (auto& st : rc.schedule) {
      read(o, "epochs", st.epochs, "stage_overrides");
      read(o, "lr", st.lr, "stage_overrides");
      read(o, "weight_decay", st.weight_decay, "stage_overrides");
    }
  }
  validate_schedule(rc.schedule);

  if (j.contains("options")) {
    const auto& o = j.at("options");
    check_keys(o, "options", {"max_sentences", "max_tokens", "bsz_mult", "batch_mode", "bucket_edges",
                              "contrastive_weight", "clip_norm"});
    auto& t = rc.options;
    read(o, "max_sentences", t.max_sentences, "options");
    read(o, "max_tokens", t.max_tokens, "options");
    read(o, "bsz_mult", t.bsz_mult, "options");
    if (o.contains("batch_mode")) t.batch_mode = data::parse_batch_mode(o.at("batch_mode").get<std::string>());
    read(o, "bucket_edges", t.bucket_edges, "options");
    read(o, "contrastive_weight", t.contrastive_weight, "options");
    read(o, "clip_norm", t.clip_norm, "options");
    if (t.bsz_mult == 0) throw Error("config: 'options.bsz_mult' must be at least 1");
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path.string());
  try {
    return parse_run_config(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("config: " + path.string() + " is not valid JSON: " + e.what());
  }
}

nlohmann::json run_config_to_json(const RunConfig& rc) {
  nlohmann::json j;
  j["seed"] = rc.model.seed;
  const auto& e = rc.model.encoder;
  const auto& l = rc.model.lm;
  j["model"] = {{"tau", rc.model.tau},
                {"encoder",
                 {{"feature_dim", e.feature_dim},
                  {"model_dim", e.model_dim},
                  {"tokens_per_window", e.tokens_per_window},
                  {"window_seconds", e.window_seconds},
                  {"frame_rate", e.frame_rate},
                  {"head_dim", e.head_dim},
                  {"encoder_layers", e.encoder_layers},
                  {"encoder_heads", e.encoder_heads},
                  {"encoder_inner", e.encoder_inner},
                  {"transform_layers", e.transform_layers},
                  {"transform_heads", e.transform_heads},
                  {"transform_inner", e.transform_inner},
                  {"rope_base", e.rope_base},
                  {"use_rope", e.use_rope},
                  {"rope_per_layer", e.rope_per_layer}}},
                {"lm",
                 {{"layers", l.layers},
                  {"dim", l.dim},
                  {"heads", l.heads},
                  {"inner", l.inner},
                  {"max_len", l.max_len},
                  {"xattn_freq", l.xattn_freq},
                  {"xattn_heads", l.xattn_heads},
                  {"per_layer_audio_proj", l.per_layer_audio_proj}}}};
  j["corpus"] = {{"items", rc.corpus_items}, {"concepts", rc.corpus_concepts}, {"eval_items", rc.eval_items}};
  auto stages = nlohmann::json::array();
  for (const auto& st : rc.schedule)
    stages.push_back({{"name", st.name},
                      {"mask", st.mask.str()},
                      {"max_windows", st.max_windows},
                      {"weights", st.weights},
                      {"epochs", st.epochs},
                      {"lr", st.lr},
                      {"weight_decay", st.weight_decay}});
  j["schedule"] = stages;
  const auto& o = rc.options;
  j["options"] = {{"max_sentences", o.max_sentences},
                  {"max_tokens", o.max_tokens},
                  {"bsz_mult", o.bsz_mult},
                  {"batch_mode", std::string(data::batch_mode_name(o.batch_mode))},
                  {"bucket_edges", o.bucket_edges},
                  {"contrastive_weight", o.contrastive_weight},
                  {"clip_norm", o.clip_norm}};
  return j;
}

std::vector<data::ManifestItem> make_train_corpus(const RunConfig& config) {
  synth::CorpusConfig cc;
  cc.items = config.corpus_items;
  cc.concepts = config.corpus_concepts;
  cc.seed = config.model.seed;
  cc.frame_rate = config.model.encoder.frame_rate;
  return synth::make_corpus(cc);
}

std::vector<data::ManifestItem> make_eval_corpus(const RunConfig& config) {
  synth::CorpusConfig cc;
  cc.items = config.eval_items;
  cc.concepts = config.corpus_concepts;
  cc.seed = config.model.seed + 1000;
  cc.frame_rate = config.model.encoder.frame_rate;
  return synth::make_corpus(cc);
}

}  // namespace afd::train
