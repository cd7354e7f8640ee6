#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace editprobe {

struct MockRule {
  std::string match;
  bool regex = false;
  /// Match against the last message only instead of the whole conversation.
  bool last_message_only = false;
  std::string response;
  /// When non-empty, hit k answers responses[min(k, size-1)] instead of `response`.
  std::vector<std::string> responses;
  std::optional<std::vector<double>> logprobs;
  /// Non-2xx statuses answer {"error": {"message": response}}.
  int status = 200;
};

/// Ordered rules over the prompt text; the first match wins and `default_response`
/// answers everything else.
struct MockScript {
  std::vector<MockRule> rules;
  std::string default_response = "UNKNOWN";
  /// Logprob given to scored tokens not covered by a rule's `logprobs`.
  double default_logprob = -1.0;
  /// Added latency per request.
  std::chrono::milliseconds delay{0};

  /// Index of the first matching rule, or rules.size() for the default.
  std::size_t match(const std::string& prompt, const std::string& last_message) const;

  /// Throws ConfigError on an invalid regex or a positive logprob.
  void validate() const;

  static MockScript from_json(const std::string& text);
  static MockScript from_file(const std::filesystem::path& path);
};

/// Tokens used by the scoring route: maximal runs of leading whitespace plus
/// non-whitespace, with their byte offsets.
std::vector<std::pair<std::string, std::size_t>> mock_tokenize(const std::string& text);

/// OpenAI-compatible server driven by a MockScript. Serves
/// POST /v1/chat/completions and POST /v1/completions (including echo
/// scoring). Counts requests per rule and tracks peak concurrency.
class MockModelServer {
 public:
  explicit MockModelServer(MockScript script, int worker_threads = 16);
  ~MockModelServer();
  MockModelServer(const MockModelServer&) = delete;
  MockModelServer& operator=(const MockModelServer&) = delete;

  /// Throws ConfigError if the address cannot be bound.
  void start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();

  std::string base_url() const;
  int port() const;

  std::uint64_t request_count() const;
  std::uint64_t rule_hits(std::size_t rule) const;
  std::uint64_t default_hits() const;
  int max_concurrent() const;
  /// Request bodies in arrival order.
  std::vector<std::string> request_bodies() const;
  void reset_counters();

  /// Sleep before answering each request.
  void set_delay(std::chrono::milliseconds delay);
  /// Answer the next `count` requests with `status` instead of the script.
  void fail_next(int count, int status = 503);
  /// Once `count` requests have been served, answer every later one with `status`.
  void fail_after(std::uint64_t count, int status = 503);
  void clear_failures();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace editprobe
