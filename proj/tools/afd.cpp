// afd: command-line front end over the library.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "afd/checkpoint.hpp"
#include "afd/datapipe.hpp"
#include "afd/error.hpp"
#include "afd/eval.hpp"
#include "afd/gradsuite.hpp"
#include "afd/synth.hpp"
#include "afd/trainer.hpp"
#include "afd/xattn_lm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace afd;

namespace {

constexpr int kUsage = 2;
constexpr int kFailure = 1;

// Flag combinations CLI11 cannot check on its own.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Globals {
  std::string out_dir;
  bool quiet = false;
};

fs::path out_dir(const Globals& g) {
  fs::path p = g.out_dir;
  if (p.empty()) {
    const char* env = std::getenv("AFD_OUT_DIR");
    p = env && *env ? env : "afd_out";
  }
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<json> rows;
  std::string line;
  for (std::size_t n = 1; std::getline(f, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return rows;
}

train::RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return train::parse_run_config(json::object());
  return train::load_run_config(path);
}

// Parameters from a checkpoint when one is given, else the seeded init.
void load_params(AlmModel& model, const std::string& checkpoint) {
  if (!checkpoint.empty()) restore_params(model.store(), Checkpoint::load(checkpoint));
}

// ---- subcommands ----

struct SynthArgs {
  std::uint64_t seed = 0;
  std::size_t items = 512;
  std::size_t concepts = 16;
  std::string name = "corpus";
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  synth::CorpusConfig cc;
  cc.seed = a.seed;
  cc.items = a.items;
  cc.concepts = a.concepts;
  const auto items = synth::make_corpus(cc);
  const auto path = out_dir(g) / (a.name + ".jsonl");
  data::write_manifest(path, items);
  if (!g.quiet) std::cout << "wrote " << items.size() << " items to " << path.string() << "\n";
  return 0;
}

struct BlendArgs {
  std::string manifest;
  std::uint64_t epoch = 0;
  std::vector<std::string> weights;  // name=w
  std::vector<double> edges = {30, 90, 300};
};

int cmd_blend(const Globals& g, const BlendArgs& a) {
  const auto items = data::read_manifest(a.manifest);
  std::map<std::string, double> weight;
  for (const auto& w : a.weights) {
    const auto eq = w.find('=');
    if (eq == std::string::npos || eq == 0) throw Error("--weight expects name=value, got '" + w + "'");
    weight[w.substr(0, eq)] = std::stod(w.substr(eq + 1));
  }
  std::vector<std::string> order;
  std::map<std::string, std::vector<data::ManifestItem>> by_name;
  for (const auto& it : items) {
    if (!by_name.contains(it.dataset)) order.push_back(it.dataset);
    by_name[it.dataset].push_back(it);
  }
  for (const auto& [name, w] : weight)
    if (!by_name.contains(name)) throw Error("--weight names unknown dataset '" + name + "'");

  std::vector<data::BucketedDataset> datasets;
  json ds = json::array();
  for (const auto& name : order) {
    const double w = weight.contains(name) ? weight[name] : 1.0;
    datasets.push_back(data::build_buckets(name, w, by_name[name], a.edges));
    json buckets = json::object();
    for (const auto& [b, list] : datasets.back().buckets) buckets[std::to_string(b)] = list.size();
    ds.push_back({{"name", name}, {"weight", w}, {"size", datasets.back().size()}, {"buckets", buckets}});
  }
  const auto blended = data::blend_epoch(datasets, a.epoch);
  std::map<std::string, std::size_t> counts;
  json ids = json::array();
  for (const auto& it : blended) {
    ++counts[it.dataset];
    ids.push_back(it.id);
  }
  const json out = {{"epoch", a.epoch}, {"datasets", ds}, {"counts", counts}, {"items", ids}};
  const auto path = out_dir(g) / ("blend_plan_epoch" + std::to_string(a.epoch) + ".json");
  write_json(path, out);
  if (!g.quiet) std::cout << "epoch " << a.epoch << ": " << blended.size() << " items -> " << path.string() << "\n";
  return 0;
}

struct BatchArgs {
  std::vector<std::size_t> tokens;
  std::string manifest;
  std::size_t max_tokens = 0;
  std::size_t max_sentences = 0;
  std::size_t bsz_mult = 1;
  std::string mode = "constraint_driven";
  bool sort = false;
};

int cmd_batch(const Globals& g, const BatchArgs& a) {
  std::vector<std::size_t> tokens = a.tokens;
  if (!a.manifest.empty()) {
    if (!tokens.empty()) throw UsageError("give --tokens or --manifest, not both");
    for (const auto& it : data::read_manifest(a.manifest)) tokens.push_back(it.num_tokens);
  }
  if (tokens.empty()) throw UsageError("batch-plan needs --tokens or --manifest");
  const data::NumTokensFn len = [&](std::size_t i) { return tokens.at(i); };
  std::vector<std::size_t> idx(tokens.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (a.sort) idx = data::sort_by_length(idx, len);
  const auto plan =
      data::batch_by_size(idx, len, {a.max_tokens, a.max_sentences, a.bsz_mult}, data::parse_batch_mode(a.mode));
  json out = plan.to_json();
  out["mode"] = a.mode;
  out["padded_fraction"] = data::padding_stats(plan, len).padded_fraction;
  write_json(out_dir(g) / "batch_plan.json", out);
  if (!g.quiet) std::cout << json{{"batches", out["batches"]}}.dump() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string manifest;
  std::string resume;
  std::uint64_t stop_after = 0;
  std::size_t checkpoint_every = 0;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  const auto rc = config_or_default(a.config);
  const auto dir = out_dir(g);
  const auto corpus = a.manifest.empty() ? train::make_train_corpus(rc) : data::read_manifest(a.manifest);
  AlmModel model(rc.model);
  write_json(dir / "run_config.json", train::run_config_to_json(rc));

  train::MetricsLog log(dir / "metrics.jsonl", !a.resume.empty());
  train::RunControl control;
  control.checkpoint_dir = dir / "checkpoints";
  control.checkpoint_every = a.checkpoint_every;
  if (a.stop_after > 0) control.stop_after_steps = a.stop_after;
  if (!a.resume.empty()) control.resume_from = a.resume;

  json stages = json::array();
  train::RunHooks hooks;
  hooks.on_stage_end = [&](std::size_t stage, const AlmModel& m) {
    json hashes;
    for (auto c : {nn::Component::clap_encoder, nn::Component::transform_xattn, nn::Component::lm})
      hashes[std::string(nn::component_name(c))] = component_hash(m.store(), c);
    stages.push_back({{"stage", stage + 1}, {"name", rc.schedule.at(stage).name}, {"hashes", hashes}});
    if (!g.quiet) std::cout << "stage " << stage + 1 << " (" << rc.schedule.at(stage).name << ") done\n";
  };
  const auto result = train::run_schedule(rc.schedule, corpus, model, rc.options, log, control, hooks);
  write_json(dir / "train_summary.json", {{"completed", result.completed},
                                          {"steps", result.steps},
                                          {"cursor", result.cursor.to_json()},
                                          {"stages", stages}});
  if (!g.quiet)
    std::cout << (result.completed ? "completed" : "stopped") << " after " << result.steps << " steps; metrics in "
              << (dir / "metrics.jsonl").string() << "\n";
  return 0;
}

int cmd_gradcheck(const Globals& g, std::uint64_t seed) {
  const auto cases = run_gradcheck_suite(seed);
  bool ok = true;
  json out = {{"seed", seed}, {"cases", json::array()}};
  for (const auto& c : cases) {
    ok = ok && c.passed;
    json rows = json::array();
    double worst = 0.0;
    for (const auto& r : c.results) {
      if (!r.vanishing) worst = std::max(worst, r.rel_error);
      rows.push_back({{"tensor", r.name},
                      {"rel_error", r.rel_error},
                      {"max_abs_error", r.max_abs_error},
                      {"vanishing", r.vanishing},
                      {"passed", r.passed}});
    }
    out["cases"].push_back({{"name", c.name}, {"passed", c.passed}, {"tensors", rows}});
    if (!g.quiet)
      std::cout << (c.passed ? "ok   " : "FAIL ") << c.name << "  worst rel err " << std::scientific
                << std::setprecision(2) << worst << std::defaultfloat << "\n";
  }
  out["passed"] = ok;
  write_json(out_dir(g) / "gradcheck.json", out);
  return ok ? 0 : kFailure;
}

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::string manifest;
  std::size_t max_windows = 9;
  std::vector<std::size_t> ks = {1, 5, 10};
};

int cmd_eval_retrieval(const Globals& g, const EvalArgs& a) {
  const auto rc = config_or_default(a.config);
  AlmModel model(rc.model);
  load_params(model, a.checkpoint);
  const auto items = a.manifest.empty() ? train::make_eval_corpus(rc) : data::read_manifest(a.manifest);
  const auto report = eval::evaluate_retrieval(model, items, a.max_windows, a.ks);
  write_json(out_dir(g) / "retrieval.json", report.to_json());
  if (!g.quiet) std::cout << report.to_json().dump() << "\n";
  return 0;
}

struct ClassifyArgs {
  std::string config;
  std::string checkpoint;
  std::string input;
  std::vector<std::string> labels;
};

int cmd_eval_classify(const Globals& g, const ClassifyArgs& a) {
  const auto rc = config_or_default(a.config);
  AlmModel model(rc.model);
  load_params(model, a.checkpoint);
  auto labels = a.labels;
  if (labels.empty())
    for (std::size_t c = 0; c < rc.corpus_concepts; ++c) labels.push_back(synth::concept_name(c));
  const auto tower = eval::text_tower_of(model);

  std::string lines;
  std::size_t graded = 0, correct = 0, n = 0;
  for (const auto& row : read_jsonl(a.input)) {
    const std::string id = row.at("item_id");
    const std::string response = row.at("response");
    const std::string predicted = eval::clap_retrieval_classify(response, labels, tower);
    json out = {{"item_id", id}, {"predicted", predicted}};
    if (row.contains("label")) {
      const bool hit = predicted == row["label"].get<std::string>();
      out["correct"] = hit;
      ++graded;
      correct += hit;
    }
    lines += out.dump() + "\n";
    ++n;
  }
  const auto dir = out_dir(g);
  write_text(dir / "classify.jsonl", lines);
  json summary = {{"items", n}, {"labels", labels.size()}, {"graded", graded}};
  if (graded > 0) summary["accuracy"] = static_cast<double>(correct) / static_cast<double>(graded);
  write_json(dir / "classify.json", summary);
  if (!g.quiet) std::cout << summary.dump() << "\n";
  return 0;
}

struct JudgeArgs {
  std::string requests;
  bool mock = false;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string path = "/v1/judge";
  int timeout_ms = 10000;
  std::size_t attempts = 3;
  std::size_t concurrency = 4;
  std::string template_file;
};

int cmd_eval_judge(const Globals& g, const JudgeArgs& a) {
  std::vector<eval::JudgeRequest> reqs;
  for (const auto& r : read_jsonl(a.requests))
    reqs.push_back({r.at("item_id"), r.at("category"), r.at("question"), r.at("reference_answer"),
                    r.at("model_response")});
  eval::JudgeOptions opts;
  opts.max_attempts = a.attempts;
  opts.concurrency = a.concurrency;
  if (!a.template_file.empty()) {
    std::ifstream f(a.template_file);
    if (!f) throw IoError("cannot read " + a.template_file);
    std::stringstream ss;
    ss << f.rdbuf();
    opts.prompt_template = ss.str();
  }
  std::unique_ptr<eval::JudgeClient> client;
  if (a.mock) {
    client = std::make_unique<eval::MockJudge>();
  } else {
    client = std::make_unique<eval::HttpJudgeClient>(
        eval::HttpJudgeConfig{a.host, a.port, a.path, std::chrono::milliseconds(a.timeout_ms)});
  }
  const auto outcomes = eval::judge_all(reqs, *client, opts);

  std::vector<eval::JudgeVerdict> verdicts;
  std::string errors;
  for (const auto& o : outcomes) {
    if (o.verdict)
      verdicts.push_back(*o.verdict);
    else
      errors += json{{"item_id", o.item_id}, {"error", o.error}}.dump() + "\n";
  }
  const auto dir = out_dir(g);
  write_text(dir / "verdicts.jsonl", eval::verdicts_to_jsonl(verdicts));
  write_text(dir / "judge_errors.jsonl", errors);
  json report = {{"requests", reqs.size()}, {"failed", reqs.size() - verdicts.size()}};
  if (!verdicts.empty()) report["scores"] = eval::aggregate_by_category(verdicts).to_json();
  write_json(dir / "judge_report.json", report);
  if (!g.quiet) std::cout << report.dump() << "\n";
  if (verdicts.size() != reqs.size()) {
    std::cerr << "afd: " << reqs.size() - verdicts.size() << " judge request(s) failed, see judge_errors.jsonl\n";
    return kFailure;
  }
  return 0;
}

struct ReportArgs {
  std::string config;
  std::uint64_t l1 = 80;
  std::uint64_t l2 = 1920;
};

int cmd_report(const Globals& g, const ReportArgs& a) {
  const auto dir = out_dir(g);
  const auto rc = config_or_default(a.config);
  json rep = json::object();
  std::ostringstream txt;
  txt << std::fixed << std::setprecision(4);

  if (fs::exists(dir / "metrics.jsonl")) {
    struct Acc {
      std::string name;
      std::size_t steps = 0;
      double first = 0, last = 0, sum = 0, pad = 0;
    };
    std::map<std::size_t, Acc> by_stage;
    for (const auto& r : read_jsonl(dir / "metrics.jsonl")) {
      auto& s = by_stage[r.at("stage").get<std::size_t>()];
      const double loss = r.at("loss");
      if (s.steps == 0) s.first = loss;
      s.name = r.at("stage_name");
      s.last = loss;
      s.sum += loss;
      s.pad += r.at("padded_fraction").get<double>();
      ++s.steps;
    }
    json stages = json::array();
    txt << "training\n";
    for (const auto& [k, s] : by_stage) {
      const double n = static_cast<double>(s.steps);
      stages.push_back({{"stage", k},
                        {"name", s.name},
                        {"steps", s.steps},
                        {"first_loss", s.first},
                        {"last_loss", s.last},
                        {"mean_loss", s.sum / n},
                        {"mean_padded_fraction", s.pad / n}});
      txt << "  stage " << k << " " << s.name << ": " << s.steps << " steps, loss " << s.first << " -> " << s.last
          << ", padding " << s.pad / n << "\n";
    }
    rep["training"] = stages;
  }
  if (fs::exists(dir / "batch_plan.json")) {
    const auto bp = read_json(dir / "batch_plan.json");
    rep["batch_plan"] = {{"batches", bp.at("batches").size()}, {"padded_fraction", bp.at("padded_fraction")}};
    txt << "batch plan: " << bp.at("batches").size() << " batches, padding "
        << bp.at("padded_fraction").get<double>() << "\n";
  }
  if (fs::exists(dir / "retrieval.json")) {
    const auto r = read_json(dir / "retrieval.json");
    rep["retrieval"] = r;
    txt << "retrieval (" << r.at("queries") << " queries)\n";
    for (const char* dir_name : {"text_to_audio", "audio_to_text"}) {
      txt << "  " << dir_name << ":";
      std::map<std::size_t, double> by_k;  // JSON keys sort "R@10" before "R@5"
      for (const auto& [k, v] : r.at(dir_name).items()) by_k[std::stoul(k.substr(2))] = v.get<double>();
      for (const auto& [k, v] : by_k) txt << " R@" << k << "=" << v;
      txt << "\n";
    }
  }
  if (fs::exists(dir / "judge_report.json")) {
    const auto j = read_json(dir / "judge_report.json");
    rep["judge"] = j;
    txt << "judge: " << j.at("requests") << " requests, " << j.at("failed") << " failed\n";
    if (j.contains("scores"))
      for (const auto& [cat, s] : j["scores"].at("categories").items())
        txt << "  " << cat << ": mean " << s.at("mean").get<double>() << " (x10 " << s.at("mean_x10").get<double>()
            << ", n=" << s.at("count") << ")\n";
  }

  const auto n_xattn = lm::xattn_insertions(rc.model.lm.layers, rc.model.lm.xattn_freq);
  const auto ops = lm::count_attention_ops(a.l1, a.l2, n_xattn);
  rep["complexity"] = {{"l1", a.l1},
                       {"l2", a.l2},
                       {"xattn_layers", n_xattn},
                       {"cross_scores_per_layer", ops.cross_per_layer},
                       {"cross_scores_total", ops.cross_total},
                       {"prefix_equivalent_per_layer", ops.prefix_equivalent}};
  txt << "attention scores for l1=" << a.l1 << ", l2=" << a.l2 << ": cross " << ops.cross_per_layer
      << " per xattn layer (" << ops.cross_total << " over " << n_xattn << "), prefix tuning would need "
      << ops.prefix_equivalent << " per layer\n";

  write_json(dir / "report.json", rep);
  write_text(dir / "report.txt", txt.str());
  if (!g.quiet) std::cout << txt.str();
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"afd: audio-language curriculum training on synthetic data"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("-o,--out", g.out_dir, "Output directory (default: $AFD_OUT_DIR, else ./afd_out)");
  app.add_flag("-q,--quiet", g.quiet, "Only write artifacts");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate a seeded synthetic manifest (<name>.jsonl)");
  synth_cmd->add_option("--seed", sa.seed, "Seed")->capture_default_str();
  synth_cmd->add_option("--items", sa.items, "Number of items")->capture_default_str()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--concepts", sa.concepts, "Number of sound concepts")
      ->capture_default_str()
      ->check(CLI::Range(std::size_t{2}, std::size_t{1000}));
  synth_cmd->add_option("--name", sa.name, "Output file stem")->capture_default_str();

  BlendArgs ba;
  auto* blend_cmd = app.add_subcommand("blend-plan", "Blend one epoch from a manifest (blend_plan_epoch<E>.json)");
  blend_cmd->add_option("--manifest", ba.manifest, "Manifest JSONL")->required()->check(CLI::ExistingFile);
  blend_cmd->add_option("--epoch", ba.epoch, "Epoch index")->capture_default_str();
  blend_cmd->add_option("--weight", ba.weights, "Dataset weight as name=w (repeatable, default 1)");
  blend_cmd->add_option("--bucket-edges", ba.edges, "Duration bucket edges in seconds")
      ->delimiter(',')
      ->capture_default_str();

  BatchArgs bta;
  auto* batch_cmd = app.add_subcommand("batch-plan", "Dynamic batching of token lengths (batch_plan.json)");
  batch_cmd->add_option("--tokens", bta.tokens, "Comma-separated token counts")->delimiter(',');
  batch_cmd->add_option("--manifest", bta.manifest, "Manifest JSONL (uses num_tokens)")->check(CLI::ExistingFile);
  batch_cmd->add_option("--max-tokens", bta.max_tokens, "Cell budget per batch, 0 = none")->capture_default_str();
  batch_cmd->add_option("--max-sentences", bta.max_sentences, "Items per batch, 0 = none")->capture_default_str();
  batch_cmd->add_option("--bsz-mult", bta.bsz_mult, "Batch size multiple")->capture_default_str()->check(
      CLI::PositiveNumber);
  batch_cmd->add_option("--mode", bta.mode, "constraint_driven or paper_literal")
      ->capture_default_str()
      ->check(CLI::IsMember({"constraint_driven", "paper_literal"}));
  batch_cmd->add_flag("--sort", bta.sort, "Sort by length before batching");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Run a curriculum schedule (metrics.jsonl, checkpoints/)");
  train_cmd->add_option("--config", ta.config, "Run config JSON (default: desk model, canonical schedule)")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--manifest", ta.manifest, "Training manifest instead of the config's synthetic corpus")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--resume", ta.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train_cmd->add_option("--stop-after", ta.stop_after, "Stop after this many steps and save latest.ckpt");
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "Steps between latest.ckpt writes");

  std::uint64_t gc_seed = 7;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite; exit 1 on any failure");
  gc_cmd->add_option("--seed", gc_seed, "Seed")->capture_default_str();

  EvalArgs ea;
  auto* er_cmd = app.add_subcommand("eval-retrieval", "Text/audio recall@k with the CLAP towers (retrieval.json)");
  er_cmd->add_option("--config", ea.config, "Run config JSON")->check(CLI::ExistingFile);
  er_cmd->add_option("--checkpoint", ea.checkpoint, "Parameters to load (default: untrained)")
      ->check(CLI::ExistingFile);
  er_cmd->add_option("--manifest", ea.manifest, "Evaluation manifest (default: the config's eval corpus)")
      ->check(CLI::ExistingFile);
  er_cmd->add_option("--max-windows", ea.max_windows, "Window cap for evaluation clips")->capture_default_str();
  er_cmd->add_option("--k", ea.ks, "Cutoffs")->delimiter(',')->capture_default_str();

  ClassifyArgs ca;
  auto* ec_cmd = app.add_subcommand("eval-classify", "Map free-text responses onto labels (classify.jsonl)");
  ec_cmd->add_option("--config", ca.config, "Run config JSON")->check(CLI::ExistingFile);
  ec_cmd->add_option("--checkpoint", ca.checkpoint, "Parameters to load")->check(CLI::ExistingFile);
  ec_cmd->add_option("--input", ca.input, "JSONL of {item_id, response, label?}")
      ->required()
      ->check(CLI::ExistingFile);
  ec_cmd->add_option("--labels", ca.labels, "Comma-separated label set (default: concept names)")->delimiter(',');

  JudgeArgs ja;
  auto* ej_cmd = app.add_subcommand("eval-judge", "Score responses with a judge model (verdicts.jsonl)");
  ej_cmd->add_option("--requests", ja.requests, "JSONL of judge requests")->required()->check(CLI::ExistingFile);
  ej_cmd->add_flag("--mock", ja.mock, "Use the offline rule-based judge");
  ej_cmd->add_option("--host", ja.host, "Judge host")->capture_default_str();
  ej_cmd->add_option("--port", ja.port, "Judge port")->capture_default_str();
  ej_cmd->add_option("--path", ja.path, "Judge endpoint path")->capture_default_str();
  ej_cmd->add_option("--timeout-ms", ja.timeout_ms, "Per-request timeout")->capture_default_str()->check(
      CLI::PositiveNumber);
  ej_cmd->add_option("--attempts", ja.attempts, "Attempts per request")->capture_default_str()->check(
      CLI::PositiveNumber);
  ej_cmd->add_option("--concurrency", ja.concurrency, "Requests in flight")->capture_default_str()->check(
      CLI::PositiveNumber);
  ej_cmd->add_option("--template", ja.template_file, "Prompt template file with {question} {reference} {response}")
      ->check(CLI::ExistingFile);

  ReportArgs ra;
  auto* rep_cmd = app.add_subcommand("report", "Summarize artifacts in the output dir (report.txt, report.json)");
  rep_cmd->add_option("--config", ra.config, "Run config JSON (for the xattn layer count)")->check(CLI::ExistingFile);
  rep_cmd->add_option("--l1", ra.l1, "Text length for the complexity count")->capture_default_str();
  rep_cmd->add_option("--l2", ra.l2, "Audio token count for the complexity count")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (argc <= 1) std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth(g, sa);
    if (*blend_cmd) return cmd_blend(g, ba);
    if (*batch_cmd) return cmd_batch(g, bta);
    if (*train_cmd) return cmd_train(g, ta);
    if (*gc_cmd) return cmd_gradcheck(g, gc_seed);
    if (*er_cmd) return cmd_eval_retrieval(g, ea);
    if (*ec_cmd) return cmd_eval_classify(g, ca);
    if (*ej_cmd) return cmd_eval_judge(g, ja);
    if (*rep_cmd) return cmd_report(g, ra);
  } catch (const UsageError& e) {
    std::cerr << "afd: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "afd: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

int main(int argc, char** argv) { return run(argc, argv); }
