#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "editprobe/cache.hpp"
#include "editprobe/http.hpp"

namespace editprobe {

enum class EndpointRole { Subject, Rewriter, Simulator };

const char* to_string(EndpointRole r);
EndpointRole endpoint_role_from_string(const std::string& s);

/// Chat endpoints get role-tagged messages. Raw endpoints get one user message
/// holding the whole conversation.
enum class PromptFormat { Chat, Raw };

const char* to_string(PromptFormat f);
PromptFormat prompt_format_from_string(const std::string& s);

struct EndpointConfig {
  std::string name;
  std::string base_url;
  std::string model_id;
  EndpointRole role = EndpointRole::Subject;
  int max_tokens = 128;
  double temperature = 0.0;
  std::chrono::milliseconds timeout{60000};
  int max_parallel = 4;
  PromptFormat format = PromptFormat::Chat;
  /// Whether /v1/completions accepts echo + logprobs for scoring.
  bool supports_scoring = false;
  /// Input budget in bytes; longer inputs are cut from the left.
  std::optional<std::size_t> context_chars;
  /// Name of the environment variable holding a bearer token, if any.
  std::string api_key_env;
  RetryPolicy retry{2, std::chrono::milliseconds(200), std::chrono::milliseconds(4000)};
  /// Replay identical requests from the response cache (rewriter, simulator).
  bool cache_responses = false;

  /// Throws ConfigError on a violated invariant.
  void validate() const;
};

struct Message {
  std::string role;  // "system", "user" or "assistant"
  std::string text;

  bool operator==(const Message&) const = default;
};

struct GenerationParams {
  std::optional<int> max_tokens;
  std::optional<double> temperature;
  /// Forwarded as the request's `seed` field.
  std::optional<std::uint64_t> seed;
  /// Identifies the sample in the run log and in RequestFailed.
  std::string sample_id;
};

struct GenerationResult {
  std::string text;
  std::string finish_reason;
  std::optional<std::vector<double>> token_logprobs;
  std::int64_t latency_ms = 0;
  /// Run-log sequence number of the request that produced this result; 0 for
  /// a cache replay.
  std::uint64_t request_seq = 0;
  bool truncated = false;
  bool from_cache = false;
};

struct RunLogEntry {
  std::uint64_t seq = 0;
  std::string endpoint;
  std::string sample_id;
  std::string path;
  std::string request_body;
  int status = 0;
  std::string response_body;
  std::string transport_error;
  std::int64_t latency_ms = 0;
};

/// Append-only JSON-lines log of every request put on the wire. Sequence
/// numbers start at 1 and increase by one per request.
class RunLog {
 public:
  RunLog() = default;
  explicit RunLog(const std::filesystem::path& path);

  std::uint64_t next_seq();
  void append(const RunLogEntry& entry);
  std::vector<RunLogEntry> entries() const;
  std::uint64_t size() const;

 private:
  mutable std::mutex mu_;
  std::uint64_t seq_ = 0;
  std::vector<RunLogEntry> entries_;
  std::optional<std::ofstream> out_;
};

/// Cuts `messages` from the left until their total text fits in `budget`
/// bytes. Whole leading non-system messages go first; the first survivor is
/// trimmed at a UTF-8 boundary. Returns true if anything was removed.
bool truncate_left(std::vector<Message>& messages, std::size_t budget);

/// Renders messages as a single text for raw endpoints: a lone user message is
/// passed through; otherwise each line is prefixed "User: " or "AI: ".
std::string flatten_messages(const std::vector<Message>& messages);

/// Shared front end to OpenAI-compatible endpoints. Each endpoint (keyed by
/// name) gets its own semaphore of `max_parallel` permits.
class ModelGateway {
 public:
  explicit ModelGateway(std::shared_ptr<RunLog> log = std::make_shared<RunLog>(),
                        std::shared_ptr<HttpTransport> transport = nullptr,
                        std::shared_ptr<ResponseCache> cache = nullptr);

  /// Throws PreconditionError on empty messages, EndpointError on a
  /// non-retryable HTTP error (message verbatim), RequestFailed when retries
  /// are exhausted.
  GenerationResult generate(const EndpointConfig& ep, std::vector<Message> messages,
                            const GenerationParams& params = {});

  /// Log-probabilities of the completion tokens given the prompt, via
  /// /v1/completions with echo. Tokens overlapping the prompt/completion
  /// boundary count as completion tokens.
  std::vector<double> score_completion(const EndpointConfig& ep, const std::string& prompt,
                                       const std::string& completion,
                                       const std::string& sample_id = {});

  RunLog& log() { return *log_; }
  std::shared_ptr<RunLog> log_ptr() const { return log_; }

 private:
  struct Wire {
    int status;
    std::string body;
    std::uint64_t seq;
    std::int64_t latency_ms;
  };
  Wire post(const EndpointConfig& ep, const std::string& path, const std::string& body,
            const std::string& sample_id);
  std::counting_semaphore<>& slots(const EndpointConfig& ep);

  std::shared_ptr<RunLog> log_;
  std::shared_ptr<HttpTransport> transport_;
  std::shared_ptr<ResponseCache> cache_;
  std::mutex slots_mu_;
  std::map<std::string, std::unique_ptr<std::counting_semaphore<>>> slots_;
};

}  // namespace editprobe
