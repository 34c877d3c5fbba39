// httplib is heavy; keep it in its own translation unit.
#include <httplib.h>

#include "afd/eval.hpp"

namespace afd::eval {

std::string HttpJudgeClient::complete(const std::string& prompt) {
  httplib::Client cli(config_.host, config_.port);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());

  const nlohmann::json body = {{"prompt", prompt}};
  auto res = cli.Post(config_.path, body.dump(), "application/json");
  if (!res) throw TransientError("judge http: " + httplib::to_string(res.error()));
  if (res->status >= 500) throw TransientError("judge http: server returned " + std::to_string(res->status));
  if (res->status != 200) throw Error("judge http: server returned " + std::to_string(res->status) + ": " + res->body);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error&) {
    throw JudgeReplyError("judge http: response body is not JSON", res->body);
  }
  if (!j.contains("reply") || !j["reply"].is_string())
    throw JudgeReplyError("judge http: response has no string 'reply' field", res->body);
  return j["reply"].get<std::string>();
}

}  // namespace afd::eval
