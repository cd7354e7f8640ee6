#include "editprobe/http.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <thread>

#include "editprobe/error.hpp"
#include "httplib.h"

namespace editprobe {

Url parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("URL lacks a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  Url out;
  if (path_start == std::string::npos) {
    out.origin = url;
  } else {
    out.origin = url.substr(0, path_start);
    out.path_prefix = url.substr(path_start);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  }
  return out;
}

std::string url_encode(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0x0f]);
    }
  }
  return out;
}

std::string path_with_query(const HttpRequest& req) {
  std::string out = req.path;
  for (std::size_t i = 0; i < req.query.size(); ++i) {
    out.push_back(i == 0 ? '?' : '&');
    out += url_encode(req.query[i].first);
    out.push_back('=');
    out += url_encode(req.query[i].second);
  }
  return out;
}

std::string canonical_request(const HttpRequest& req) {
  auto query = req.query;
  std::stable_sort(query.begin(), query.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string out = req.method + " " + req.path + "\n";
  for (const auto& [k, v] : query) out += url_encode(k) + "=" + url_encode(v) + "\n";
  std::vector<std::string> kept;
  for (const auto& [k, v] : req.headers) {
    std::string lower = k;
    std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
    if (lower == "accept") kept.push_back(lower + ":" + v);
  }
  std::sort(kept.begin(), kept.end());
  for (const auto& h : kept) out += h + "\n";
  if (!req.content_type.empty()) out += "content-type:" + req.content_type + "\n";
  out += "\n" + req.body;
  return out;
}

namespace {

class HttplibTransport final : public HttpTransport {
 public:
  HttpResponse send(const std::string& origin, const HttpRequest& req,
                    std::chrono::milliseconds timeout) override {
    httplib::Client client(origin);
    client.set_follow_location(true);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    for (const auto& [k, v] : req.headers) headers.emplace(k, v);
    const auto target = path_with_query(req);
    httplib::Result res = req.method == "POST"
                              ? client.Post(target, headers, req.body,
                                            req.content_type.empty() ? "application/json"
                                                                     : req.content_type)
                              : client.Get(target, headers);
    HttpResponse out;
    if (!res) {
      out.transport_error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  }
};

}  // namespace

std::shared_ptr<HttpTransport> make_default_transport() {
  return std::make_shared<HttplibTransport>();
}

TokenBucket::TokenBucket(double rate_per_second, double burst)
    : rate_(rate_per_second), burst_(std::max(1.0, burst)), tokens_(burst_),
      last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire() {
  if (rate_ <= 0.0) return;  // unlimited
  std::unique_lock lock(mu_);
  while (true) {
    const auto now = std::chrono::steady_clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    tokens_ = std::min(burst_, tokens_ + elapsed * rate_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
    lock.unlock();
    std::this_thread::sleep_for(wait);
    lock.lock();
  }
}

bool is_retryable_status(int status) { return status == 429 || status >= 500; }

HttpService::HttpService(std::string name, const std::string& base_url, RetryPolicy retry,
                         double requests_per_second, std::shared_ptr<HttpTransport> transport,
                         std::chrono::milliseconds timeout, std::string user_agent)
    : name_(std::move(name)),
      url_(parse_url(base_url)),
      retry_(retry),
      transport_(transport ? std::move(transport) : make_default_transport()),
      timeout_(timeout),
      user_agent_(std::move(user_agent)),
      bucket_(requests_per_second, std::max(1.0, requests_per_second)) {}

HttpResponse HttpService::send(HttpRequest req) {
  req.path = url_.path_prefix + req.path;
  req.headers.emplace_back("User-Agent", user_agent_);
  auto backoff = retry_.base_backoff;
  const int attempts = retry_.max_retries + 1;
  HttpResponse last;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    bucket_.acquire();
    ++requests_sent_;
    last = transport_->send(url_.origin, req, timeout_);
    const bool retryable = !last.transport_error.empty() || is_retryable_status(last.status);
    if (!retryable) return last;
    spdlog::warn("{}: {} {} failed ({}), attempt {}/{}", name_, req.method, req.path,
                 last.transport_error.empty() ? std::to_string(last.status) : last.transport_error,
                 attempt, attempts);
    if (attempt < attempts) {
      std::this_thread::sleep_for(backoff);
      backoff = std::min(retry_.max_backoff, backoff * 2);
    }
  }
  throw TransientError(name_ + ": " + req.method + " " + req.path + " failed after " +
                           std::to_string(attempts) + " attempts" +
                           (last.transport_error.empty() ? "" : " (" + last.transport_error + ")"),
                       last.status, attempts);
}

}  // namespace editprobe
