#include <future>
#include <thread>

#include "doctest.h"
#include "editprobe/cache.hpp"
#include "editprobe/error.hpp"
#include "editprobe/http.hpp"
#include "support.hpp"

using namespace editprobe;
using testing::TempDir;

namespace {

/// Replays a fixed list of statuses, then answers 200.
class ScriptedTransport : public HttpTransport {
 public:
  explicit ScriptedTransport(std::vector<int> statuses) : statuses_(std::move(statuses)) {}

  HttpResponse send(const std::string& origin, const HttpRequest& req,
                    std::chrono::milliseconds) override {
    std::lock_guard lock(mu_);
    seen.push_back(origin + path_with_query(req));
    HttpResponse r;
    r.status = calls_ < statuses_.size() ? statuses_[calls_] : 200;
    if (r.status == 0) r.transport_error = "connection refused";
    r.body = "body" + std::to_string(calls_);
    ++calls_;
    return r;
  }

  std::vector<std::string> seen;

 private:
  std::mutex mu_;
  std::vector<int> statuses_;
  std::size_t calls_ = 0;
};

RetryPolicy fast_retry(int n) { return {n, std::chrono::milliseconds(1), std::chrono::milliseconds(2)}; }

}  // namespace

TEST_CASE("url parsing and encoding") {
  const auto u = parse_url("https://example.org:8443/api/v1/");
  CHECK(u.origin == "https://example.org:8443");
  CHECK(u.path_prefix == "/api/v1");
  CHECK(parse_url("http://localhost:80").path_prefix == "");
  CHECK(url_encode("a b/c~-_.\xC3\xA9") == "a%20b%2Fc~-_.%C3%A9");
}

TEST_CASE("canonical request ignores query order and unrelated headers") {
  HttpRequest a;
  a.path = "/x";
  a.query = {{"b", "2"}, {"a", "1"}};
  a.headers = {{"User-Agent", "one"}};
  HttpRequest b = a;
  b.query = {{"a", "1"}, {"b", "2"}};
  b.headers = {{"User-Agent", "two"}, {"Authorization", "Bearer x"}};
  CHECK(canonical_request(a) == canonical_request(b));
  b.body = "payload";
  CHECK(canonical_request(a) != canonical_request(b));
}

TEST_CASE("retryable statuses") {
  CHECK(is_retryable_status(429));
  CHECK(is_retryable_status(503));
  CHECK_FALSE(is_retryable_status(404));
  CHECK_FALSE(is_retryable_status(200));
}

TEST_CASE("HttpService retries transient failures and counts every attempt") {
  auto t = std::make_shared<ScriptedTransport>(std::vector<int>{503, 0, 200});
  HttpService svc("wiki", "http://host/prefix", fast_retry(3), 1000, t);
  HttpRequest req;
  req.path = "/page";
  const auto r = svc.send(req);
  CHECK(r.status == 200);
  CHECK(svc.requests_sent() == 3);
  CHECK(t->seen.front() == "http://host/prefix/page");
}

TEST_CASE("HttpService gives up with TransientError and passes 4xx through") {
  auto t = std::make_shared<ScriptedTransport>(std::vector<int>{500, 500, 500});
  HttpService svc("s", "http://host", fast_retry(2), 1000, t);
  CHECK_THROWS_AS(svc.send({}), TransientError);
  CHECK(svc.requests_sent() == 3);

  auto t404 = std::make_shared<ScriptedTransport>(std::vector<int>{404});
  HttpService svc404("s", "http://host", fast_retry(2), 1000, t404);
  CHECK(svc404.send({}).status == 404);
  CHECK(svc404.requests_sent() == 1);
}

TEST_CASE("token bucket paces requests") {
  TokenBucket bucket(50.0, 1.0);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 6; ++i) bucket.acquire();
  const auto elapsed = std::chrono::steady_clock::now() - t0;
  CHECK(elapsed >= std::chrono::milliseconds(90));
}

TEST_CASE("response cache stores, reloads and deduplicates fetches") {
  TempDir tmp;
  const auto key = ResponseCache::make_key("svc", "GET /x");
  CHECK(key.size() == 64);
  CHECK(key != ResponseCache::make_key("other", "GET /x"));
  {
    ResponseCache cache(tmp.path());
    CHECK_FALSE(cache.get(key).has_value());
    int fetches = 0;
    const auto e1 = cache.get_or_fetch(key, [&] {
      ++fetches;
      return std::string("payload\0bytes", 13);
    });
    const auto e2 = cache.get_or_fetch(key, [&] {
      ++fetches;
      return std::string("other");
    });
    CHECK(fetches == 1);
    CHECK(e1.payload == e2.payload);
    CHECK(e1.payload.size() == 13);
  }
  ResponseCache reopened(tmp.path());
  const auto e = reopened.get(key);
  REQUIRE(e.has_value());
  CHECK(e->payload == std::string("payload\0bytes", 13));
  CHECK(e->fetched_at > 0);
}

TEST_CASE("concurrent callers share one in-flight fetch") {
  TempDir tmp;
  ResponseCache cache(tmp.path());
  std::atomic<int> fetches{0};
  const auto key = ResponseCache::make_key("svc", "slow");
  std::vector<std::future<CacheEntry>> futures;
  for (int i = 0; i < 8; ++i) {
    futures.push_back(std::async(std::launch::async, [&] {
      return cache.get_or_fetch(key, [&] {
        ++fetches;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        return std::string("v");
      });
    }));
  }
  for (auto& f : futures) CHECK(f.get().payload == "v");
  CHECK(fetches == 1);
}

TEST_CASE("expired entries are refetched") {
  TempDir tmp;
  ResponseCache cache(tmp.path(), std::chrono::seconds(0));
  const auto key = ResponseCache::make_key("svc", "ttl");
  int fetches = 0;
  cache.get_or_fetch(key, [&] { return std::to_string(++fetches); });
  std::this_thread::sleep_for(std::chrono::milliseconds(1100));
  CHECK(cache.get_or_fetch(key, [&] { return std::to_string(++fetches); }).payload == "2");
}
