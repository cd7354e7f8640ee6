#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace editprobe {

/// "https://host:port/prefix" split into origin and path prefix (no trailing '/').
struct Url {
  std::string origin;
  std::string path_prefix;
};

Url parse_url(const std::string& url);

/// Percent-encodes everything outside RFC 3986 unreserved characters.
std::string url_encode(std::string_view s);

using QueryParams = std::vector<std::pair<std::string, std::string>>;
using Headers = std::vector<std::pair<std::string, std::string>>;

struct HttpRequest {
  std::string method = "GET";
  std::string path;
  QueryParams query;
  Headers headers;
  std::string body;
  std::string content_type;
};

struct HttpResponse {
  int status = 0;
  std::string body;
  /// Set when the request never produced an HTTP status (DNS, refused, timeout).
  std::string transport_error;
};

/// Stable text form of a request: method, path, query sorted by key, the
/// Accept/Content-Type headers, body. Other headers (user agent, auth, their
/// order) do not affect it.
std::string canonical_request(const HttpRequest& req);

std::string path_with_query(const HttpRequest& req);

/// Blocking transport. The default implementation uses cpp-httplib and follows
/// redirects.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse send(const std::string& origin, const HttpRequest& req,
                            std::chrono::milliseconds timeout) = 0;
};

std::shared_ptr<HttpTransport> make_default_transport();

/// Token bucket limiter; `acquire` blocks until a token is available.
class TokenBucket {
 public:
  TokenBucket(double rate_per_second, double burst);
  void acquire();

 private:
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mu_;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds base_backoff{500};
  std::chrono::milliseconds max_backoff{8000};
};

/// One remote service: base URL, rate limit, retry on 429/5xx/transport
/// failures with exponential backoff. Counts every request it puts on the wire.
class HttpService {
 public:
  HttpService(std::string name, const std::string& base_url, RetryPolicy retry,
              double requests_per_second, std::shared_ptr<HttpTransport> transport = nullptr,
              std::chrono::milliseconds timeout = std::chrono::seconds(30),
              std::string user_agent = "editprobe/0.3 (research harness)");

  /// Returns the final response (possibly 4xx). Throws TransientError when the
  /// retry budget is exhausted on retryable failures.
  HttpResponse send(HttpRequest req);

  const std::string& name() const { return name_; }
  const Url& url() const { return url_; }
  std::uint64_t requests_sent() const { return requests_sent_.load(); }

 private:
  std::string name_;
  Url url_;
  RetryPolicy retry_;
  std::shared_ptr<HttpTransport> transport_;
  std::chrono::milliseconds timeout_;
  std::string user_agent_;
  TokenBucket bucket_;
  std::atomic<std::uint64_t> requests_sent_{0};
};

bool is_retryable_status(int status);

}  // namespace editprobe
