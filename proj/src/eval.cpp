#include "afd/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "afd/encoders.hpp"
#include "afd/synth.hpp"

namespace afd::eval {

namespace {

// Turns off gradient recording on every parameter for the guard's lifetime.
class NoGrad {
 public:
  explicit NoGrad(const nn::ParamStore& store) {
    for (const auto& p : store.params()) {
      Tensor t = p.value;
      saved_.emplace_back(t, t.requires_grad());
      t.set_requires_grad(false);
    }
  }
  ~NoGrad() {
    for (auto& [t, on] : saved_) t.set_requires_grad(on);
  }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  std::vector<std::pair<Tensor, bool>> saved_;
};

void check_unit_rows(const Tensor& x, const char* what) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += x.at(r, c) * x.at(r, c);
    if (std::abs(s - 1.0) > 1e-6)
      throw Error(std::string("recall_at_k: ") + what + " row " + std::to_string(r) + " is not unit norm (|x|^2 = " +
                  std::to_string(s) + ")");
  }
}

}  // namespace

RelevanceSets relevance_from_pairs(std::size_t queries, std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  RelevanceSets rel(queries);
  for (const auto& [q, g] : pairs) {
    if (q >= queries) throw Error("recall_at_k: ground-truth query index " + std::to_string(q) + " out of range");
    rel[q].push_back(g);
  }
  return rel;
}

std::vector<std::size_t> ranks_for_query(const Tensor& queries, const Tensor& gallery, std::size_t q) {
  const std::size_t n = gallery.rows(), d = gallery.cols();
  std::vector<double> s(n, 0.0);
  for (std::size_t g = 0; g < n; ++g)
    for (std::size_t c = 0; c < d; ++c) s[g] += queries.at(q, c) * gallery.at(g, c);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  std::vector<std::size_t> rank(n);
  for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r;
  return rank;
}

std::map<std::size_t, double> recall_at_k(const Tensor& queries, const Tensor& gallery, const RelevanceSets& relevant,
                                          std::span<const std::size_t> ks) {
  if (!gallery.defined() || gallery.numel() == 0) throw Error("recall_at_k: empty gallery");
  if (!queries.defined() || queries.numel() == 0) throw Error("recall_at_k: no queries");
  if (queries.cols() != gallery.cols())
    throw ShapeError("recall_at_k: query width " + std::to_string(queries.cols()) + " vs gallery width " +
                     std::to_string(gallery.cols()));
  if (relevant.size() != queries.rows())
    throw Error("recall_at_k: " + std::to_string(relevant.size()) + " ground-truth sets for " +
                std::to_string(queries.rows()) + " queries");
  if (ks.empty()) throw Error("recall_at_k: no k values");
  const std::size_t n = gallery.rows();
  for (std::size_t k : ks)
    if (k == 0 || k > n)
      throw Error("recall_at_k: k = " + std::to_string(k) + " outside 1.." + std::to_string(n));
  check_unit_rows(queries, "query");
  check_unit_rows(gallery, "gallery");

  std::map<std::size_t, std::size_t> hits;
  for (std::size_t k : ks) hits[k] = 0;
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    if (relevant[q].empty()) throw Error("recall_at_k: query " + std::to_string(q) + " has no ground truth");
    const auto rank = ranks_for_query(queries, gallery, q);
    std::size_t best = n;
    for (std::size_t g : relevant[q]) {
      if (g >= n) throw Error("recall_at_k: ground-truth gallery index " + std::to_string(g) + " out of range");
      best = std::min(best, rank[g]);
    }
    for (auto& [k, h] : hits)
      if (best < k) ++h;
  }
  std::map<std::size_t, double> out;
  for (const auto& [k, h] : hits) out[k] = static_cast<double>(h) / static_cast<double>(queries.rows());
  return out;
}

std::map<std::size_t, double> recall_at_k(const Tensor& queries, const Tensor& gallery,
                                          std::span<const std::pair<std::size_t, std::size_t>> ground_truth,
                                          std::span<const std::size_t> ks) {
  return recall_at_k(queries, gallery, relevance_from_pairs(queries.defined() ? queries.rows() : 0, ground_truth), ks);
}

nlohmann::json RetrievalReport::to_json() const {
  nlohmann::json j;
  j["queries"] = queries;
  for (const auto& [k, v] : text_to_audio) j["text_to_audio"]["R@" + std::to_string(k)] = v;
  for (const auto& [k, v] : audio_to_text) j["audio_to_text"]["R@" + std::to_string(k)] = v;
  return j;
}

RetrievalReport evaluate_retrieval(const AlmModel& model, std::span<const data::ManifestItem> items,
                                   std::size_t max_windows, std::span<const std::size_t> ks) {
  if (items.empty()) throw Error("evaluate_retrieval: no items");
  NoGrad guard(model.store());
  const auto& cfg = model.config().encoder;
  std::vector<Tensor> audio, text;
  for (const auto& item : items) {
    const auto seg = encoders::segment_windows(synth::clip_for(item, cfg), cfg, max_windows);
    audio.push_back(model.audio().clap_embedding(seg));
    text.push_back(model.text().encode(item.text));
  }
  const Tensor a = audio.size() == 1 ? audio.front() : ops::concat(audio, 0);
  const Tensor t = text.size() == 1 ? text.front() : ops::concat(text, 0);
  RelevanceSets rel(items.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = 0; j < items.size(); ++j) {
      const bool same = items[i].concept_id && items[j].concept_id ? *items[i].concept_id == *items[j].concept_id
                                                                      : i == j;
      if (same) rel[i].push_back(j);
    }
  RetrievalReport r;
  r.queries = items.size();
  r.text_to_audio = recall_at_k(t, a, rel, ks);
  r.audio_to_text = recall_at_k(a, t, rel, ks);
  return r;
}

TextTower text_tower_of(const AlmModel& model) {
  return [&model](std::string_view s) {
    NoGrad guard(model.store());
    const Tensor e = model.text().encode(s);
    return std::vector<double>(e.values().begin(), e.values().end());
  };
}

std::string clap_retrieval_classify(std::string_view response, std::span<const std::string> labels,
                                    const TextTower& tower) {
  if (labels.empty()) throw Error("clap_retrieval_classify: empty label set");
  auto unit = [](std::vector<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > 0.0)
      for (double& x : v) x /= n;
    return v;
  };
  const auto r = unit(tower(response));
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto l = unit(tower(labels[i]));
    if (l.size() != r.size()) throw ShapeError("clap_retrieval_classify: tower returned vectors of different widths");
    double s = 0.0;
    for (std::size_t c = 0; c < r.size(); ++c) s += r[c] * l[c];
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return labels[best];
}

// ---- judge ----

const char* const kEvaluatorTemplate =
    "You are grading an answer about an audio recording.\n"
    "Compare the model response with the reference answer and rate how well it answers the question.\n"
    "Reply with a single integer from 1 (wrong or missing) to 10 (fully correct) on the first line, "
    "then a one-sentence justification.\n"
    "<question>{question}</question>\n"
    "<reference>{reference}</reference>\n"
    "<response>{response}</response>\n";

std::string render_prompt(const JudgeRequest& request, std::string_view tmpl) {
  std::string out;
  out.reserve(tmpl.size() + request.question.size() + request.reference_answer.size() + request.model_response.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto end = tmpl.find('}', i);
      if (end != std::string_view::npos) {
        const auto key = tmpl.substr(i + 1, end - i - 1);
        if (key == "question" || key == "reference" || key == "response") {
          out += key == "question" ? request.question : key == "reference" ? request.reference_answer
                                                                          : request.model_response;
          i = end + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

std::pair<int, std::string> parse_judge_reply(std::string_view reply) {
  static const std::regex re(R"(^\s*(?:score\s*[:=]?\s*)?([+-]?\d+)(?:\s*/\s*10)?\b([\s\S]*)$)", std::regex::icase);
  const std::string s(reply);
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw JudgeReplyError("judge reply has no leading integer score", s);
  long v = 0;
  try {
    v = std::stol(m[1].str());
  } catch (const std::exception&) {
    throw JudgeReplyError("judge reply score is not a valid integer", s);
  }
  if (v < 1 || v > 10) throw JudgeReplyError("judge score " + std::to_string(v) + " outside 1..10", s);
  std::string rest = m[2].str();
  const auto b = rest.find_first_not_of(" \t\r\n.:-");
  rest = b == std::string::npos ? std::string() : rest.substr(b);
  while (!rest.empty() && std::isspace(static_cast<unsigned char>(rest.back()))) rest.pop_back();
  return {static_cast<int>(v), rest};
}

namespace {

std::string between(const std::string& s, const std::string& open, const std::string& close) {
  const auto a = s.find(open);
  if (a == std::string::npos) return {};
  const auto b = s.find(close, a + open.size());
  if (b == std::string::npos) return {};
  return s.substr(a + open.size(), b - a - open.size());
}

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string fold(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

}  // namespace

int MockJudge::score(std::string_view reference, std::string_view response) {
  const std::string r = fold(response);
  if (r.empty()) return 1;
  if (r == fold(reference)) return 10;
  const auto a = words(reference), b = words(response);
  std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (const auto& w : sb) inter += sa.count(w);
  const std::size_t uni = sa.size() + sb.size() - inter;
  const double jac = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
  return 1 + static_cast<int>(std::lround(8.0 * jac));
}

std::string MockJudge::complete(const std::string& prompt) {
  const std::string ref = between(prompt, "<reference>", "</reference>");
  const std::string resp = between(prompt, "<response>", "</response>");
  const int s = score(ref, resp);
  std::string why = s == 10 ? "response matches the reference" : s == 1 && fold(resp).empty() ? "empty response"
                                                                                                : "partial word overlap";
  return std::to_string(s) + "\n" + why;
}

JudgeVerdict judge_score(const JudgeRequest& request, JudgeClient& client, const JudgeOptions& options) {
  if (options.max_attempts == 0) throw Error("judge: max_attempts must be at least 1");
  const std::string prompt = render_prompt(request, options.prompt_template);
  auto backoff = options.initial_backoff;
  std::string last_error;
  std::optional<JudgeReplyError> last_reply_error;
  for (std::size_t attempt = 1; attempt <= options.max_attempts; ++attempt) {
    try {
      const std::string reply = client.complete(prompt);
      auto [score, why] = parse_judge_reply(reply);
      return JudgeVerdict{request.item_id, request.category, score, why};
    } catch (const JudgeReplyError& e) {
      // An integer outside 1..10 is the judge misbehaving, not noise.
      if (std::string(e.what()).find("outside 1..10") != std::string::npos) throw;
      last_reply_error = e;
      last_error = e.what();
    } catch (const TransientError& e) {
      last_reply_error.reset();
      last_error = e.what();
    }
    if (attempt < options.max_attempts) {
      if (options.sleep) options.sleep(backoff);
      else std::this_thread::sleep_for(backoff);
      backoff = std::min(backoff * 2, options.max_backoff);
    }
  }
  const std::string where = "judge: item '" + request.item_id + "' failed after " +
                            std::to_string(options.max_attempts) + " attempts: " + last_error;
  if (last_reply_error) throw JudgeReplyError(where, last_reply_error->raw_reply());
  throw Error(where);
}

std::vector<JudgeOutcome> judge_all(std::span<const JudgeRequest> requests, JudgeClient& client,
                                    const JudgeOptions& options) {
  std::vector<JudgeOutcome> out(requests.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      out[i].item_id = requests[i].item_id;
      try {
        out[i].verdict = judge_score(requests[i], client, options);
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(options.concurrency, requests.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.item_id < b.item_id; });
  return out;
}

CascadedAnswer cascaded_answer(JudgeClient& client, std::string_view question,
                               std::span<const std::string> segment_descriptions) {
  if (segment_descriptions.empty()) throw Error("cascaded_answer: no segments");
  std::string p1 = "Write one short caption for each audio segment below, one per line.\n";
  for (std::size_t i = 0; i < segment_descriptions.size(); ++i)
    p1 += "<segment index=\"" + std::to_string(i) + "\">" + segment_descriptions[i] + "</segment>\n";
  CascadedAnswer r;
  r.captions = client.complete(p1);
  const std::string p2 = "Captions of consecutive segments of one recording:\n" + r.captions +
                         "\nUsing only these captions, answer the question.\n<question>" + std::string(question) +
                         "</question>\n";
  r.answer = client.complete(p2);
  return r;
}

nlohmann::json CategoryReport::to_json() const {
  nlohmann::json j;
  for (const auto& [name, c] : categories)
    j["categories"][name] = {{"count", c.count}, {"mean", c.mean}, {"mean_x10", c.mean_x10}};
  j["overall"] = {{"count", overall.count}, {"mean", overall.mean}, {"mean_x10", overall.mean_x10}};
  return j;
}

CategoryReport aggregate_by_category(std::span<const JudgeVerdict> verdicts) {
  if (verdicts.empty()) throw Error("aggregate_by_category: no verdicts");
  std::vector<const JudgeVerdict*> sorted;
  for (const auto& v : verdicts) sorted.push_back(&v);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->item_id < b->item_id; });
  std::map<std::string, double> sums;
  double total = 0.0;
  CategoryReport r;
  for (const auto* v : sorted) {
    if (v->score < 1 || v->score > 10)
      throw Error("aggregate_by_category: item '" + v->item_id + "' has score " + std::to_string(v->score));
    sums[v->category] += v->score;
    ++r.categories[v->category].count;
    total += v->score;
  }
  for (auto& [name, c] : r.categories) {
    c.mean = sums[name] / static_cast<double>(c.count);
    c.mean_x10 = c.mean * 10.0;
  }
  r.overall.count = sorted.size();
  r.overall.mean = total / static_cast<double>(sorted.size());
  r.overall.mean_x10 = r.overall.mean * 10.0;
  return r;
}

std::string verdicts_to_jsonl(std::span<const JudgeVerdict> verdicts) {
  std::vector<const JudgeVerdict*> sorted;
  for (const auto& v : verdicts) sorted.push_back(&v);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->item_id < b->item_id; });
  std::string out;
  for (const auto* v : sorted) {
    nlohmann::ordered_json j;
    j["item_id"] = v->item_id;
    j["category"] = v->category;
    j["score"] = v->score;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace afd::eval
