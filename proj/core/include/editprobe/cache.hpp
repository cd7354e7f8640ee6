#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

namespace editprobe {

struct CacheEntry {
  std::string key;
  std::string payload;
  /// Seconds since the Unix epoch, UTC.
  std::int64_t fetched_at = 0;
};

/// Content-addressed, append-only response cache. Each entry lives in
/// `<dir>/<key[0:2]>/<key>.body` with a `<key>.meta` JSON sidecar. Entries are
/// never rewritten unless a TTL is configured and the entry has expired.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir,
                         std::optional<std::chrono::seconds> ttl = std::nullopt);

  /// SHA-256 of "<service>\n<canonical request>".
  static std::string make_key(std::string_view service, std::string_view canonical_request);

  std::optional<CacheEntry> get(const std::string& key) const;
  CacheEntry put(const std::string& key, const std::string& payload);

  /// Returns the cached entry or runs `fetch` once; concurrent callers asking
  /// for the same key wait for the single in-flight fetch.
  CacheEntry get_or_fetch(const std::string& key, const std::function<std::string()>& fetch);

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path body_path(const std::string& key) const;
  std::filesystem::path meta_path(const std::string& key) const;

  std::filesystem::path dir_;
  std::optional<std::chrono::seconds> ttl_;
  std::mutex inflight_mu_;
  std::unordered_map<std::string, std::shared_future<CacheEntry>> inflight_;
};

}  // namespace editprobe
