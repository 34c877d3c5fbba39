#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "afd/datapipe.hpp"
#include "afd/model.hpp"
#include "afd/tensor.hpp"

namespace afd::eval {

// ---- retrieval ----

/// relevant[q] lists the gallery rows that count as a match for query q.
using RelevanceSets = std::vector<std::vector<std::size_t>>;

RelevanceSets relevance_from_pairs(std::size_t queries, std::span<const std::pair<std::size_t, std::size_t>> pairs);

/// 0-based rank of gallery row g for query q: rows scoring higher, plus rows
/// scoring equal with a smaller index.
std::vector<std::size_t> ranks_for_query(const Tensor& queries, const Tensor& gallery, std::size_t q);

/// Fraction of queries with a relevant gallery row inside the top k by dot
/// product. Rows must be unit norm. Throws on an empty gallery, k of zero or
/// past the gallery size, a query without ground truth, or width mismatch.
std::map<std::size_t, double> recall_at_k(const Tensor& queries, const Tensor& gallery, const RelevanceSets& relevant,
                                          std::span<const std::size_t> ks);
std::map<std::size_t, double> recall_at_k(const Tensor& queries, const Tensor& gallery,
                                          std::span<const std::pair<std::size_t, std::size_t>> ground_truth,
                                          std::span<const std::size_t> ks);

struct RetrievalReport {
  std::map<std::size_t, double> text_to_audio;
  std::map<std::size_t, double> audio_to_text;
  std::size_t queries = 0;

  nlohmann::json to_json() const;
};

/// Caption-to-clip retrieval with the CLAP towers; an item matches every item
/// sharing its concept id (or only itself when it has none). Clips are
/// windowed at `max_windows`.
RetrievalReport evaluate_retrieval(const AlmModel& model, std::span<const data::ManifestItem> items,
                                   std::size_t max_windows, std::span<const std::size_t> ks);

// ---- retrieval-based classification ----

using TextTower = std::function<std::vector<double>(std::string_view)>;

TextTower text_tower_of(const AlmModel& model);

/// Label whose embedding has the highest cosine with the response; ties go to
/// the earliest label. Throws on an empty label set.
std::string clap_retrieval_classify(std::string_view response, std::span<const std::string> labels,
                                    const TextTower& tower);

// ---- judge ----

struct JudgeRequest {
  std::string item_id;
  std::string category;
  std::string question;
  std::string reference_answer;
  std::string model_response;
};

struct JudgeVerdict {
  std::string item_id;
  std::string category;
  int score = 0;  // 1..10
  std::string rationale;
};

/// Reply that could not be turned into a score; keeps the raw text.
class JudgeReplyError : public Error {
 public:
  JudgeReplyError(const std::string& what, std::string raw) : Error(what), raw_(std::move(raw)) {}
  const std::string& raw_reply() const { return raw_; }

 private:
  std::string raw_;
};

/// Failure worth retrying (timeouts, 5xx, dropped connections).
class TransientError : public Error {
 public:
  using Error::Error;
};

/// Text-in, text-out model endpoint. Implementations must be callable from
/// several threads at once.
class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

extern const char* const kEvaluatorTemplate;

/// Fills {question}, {reference} and {response} in `tmpl`.
std::string render_prompt(const JudgeRequest& request, std::string_view tmpl = kEvaluatorTemplate);

/// Leading integer of the reply ("7", "Score: 7 ..."), rest is the rationale.
/// Throws JudgeReplyError when there is no integer or it is outside 1..10.
std::pair<int, std::string> parse_judge_reply(std::string_view reply);

/// Deterministic offline judge. Reads the reference and response back out of
/// a rendered evaluator prompt: exact match (case and spacing folded) gives
/// 10, an empty response 1, otherwise 1 + round(8 * token Jaccard overlap).
class MockJudge : public JudgeClient {
 public:
  std::string complete(const std::string& prompt) override;
  static int score(std::string_view reference, std::string_view response);
};

struct HttpJudgeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string path = "/v1/judge";
  std::chrono::milliseconds timeout{10000};
};

/// POSTs {"prompt": ...} and expects {"reply": "..."}. 5xx and connection
/// failures are transient; other non-200 statuses are hard errors.
class HttpJudgeClient : public JudgeClient {
 public:
  explicit HttpJudgeClient(HttpJudgeConfig config) : config_(std::move(config)) {}
  std::string complete(const std::string& prompt) override;

 private:
  HttpJudgeConfig config_;
};

struct JudgeOptions {
  std::size_t max_attempts = 3;
  std::chrono::milliseconds initial_backoff{50};
  std::chrono::milliseconds max_backoff{1000};
  std::size_t concurrency = 4;
  std::string prompt_template = kEvaluatorTemplate;
  // Replaceable for tests; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// Verdict or error, never a made-up score. Transient failures and
/// unparseable replies are retried with doubling backoff capped at
/// max_backoff; a score outside 1..10 fails at once.
JudgeVerdict judge_score(const JudgeRequest& request, JudgeClient& client, const JudgeOptions& options = {});

struct JudgeOutcome {
  std::string item_id;
  std::optional<JudgeVerdict> verdict;
  std::string error;
};

/// Runs at most options.concurrency requests at a time. Outcomes come back
/// sorted by item id.
std::vector<JudgeOutcome> judge_all(std::span<const JudgeRequest> requests, JudgeClient& client,
                                    const JudgeOptions& options = {});

/// Two calls on one client: describe each segment, then answer from the
/// descriptions. Stand-in for the caption-then-answer long-audio baseline.
struct CascadedAnswer {
  std::string captions;
  std::string answer;
};
CascadedAnswer cascaded_answer(JudgeClient& client, std::string_view question,
                               std::span<const std::string> segment_descriptions);

struct CategoryScore {
  std::size_t count = 0;
  double mean = 0.0;
  double mean_x10 = 0.0;  // the same mean on a 0..100 scale
};

struct CategoryReport {
  std::map<std::string, CategoryScore> categories;
  CategoryScore overall;  // mean over items, not over categories

  nlohmann::json to_json() const;
};

/// Throws on empty input.
CategoryReport aggregate_by_category(std::span<const JudgeVerdict> verdicts);

/// One {item_id, category, score} object per line, sorted by item id.
std::string verdicts_to_jsonl(std::span<const JudgeVerdict> verdicts);

}  // namespace afd::eval
