#include "editprobe/cache.hpp"

#include <fstream>
#include <sstream>

#include "editprobe/error.hpp"
#include "editprobe/hash.hpp"
#include "json_io.hpp"

namespace editprobe {

using detail::json;

namespace {

std::int64_t now_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

ResponseCache::ResponseCache(std::filesystem::path dir, std::optional<std::chrono::seconds> ttl)
    : dir_(std::move(dir)), ttl_(ttl) {
  std::filesystem::create_directories(dir_);
}

std::string ResponseCache::make_key(std::string_view service, std::string_view canonical_request) {
  std::string material(service);
  material.push_back('\n');
  material.append(canonical_request);
  return sha256_hex(material);
}

std::filesystem::path ResponseCache::body_path(const std::string& key) const {
  return dir_ / key.substr(0, 2) / (key + ".body");
}

std::filesystem::path ResponseCache::meta_path(const std::string& key) const {
  return dir_ / key.substr(0, 2) / (key + ".meta");
}

std::optional<CacheEntry> ResponseCache::get(const std::string& key) const {
  const auto meta = meta_path(key);
  const auto body = body_path(key);
  std::error_code ec;
  if (!std::filesystem::exists(meta, ec) || !std::filesystem::exists(body, ec)) return std::nullopt;
  json m = json::parse(detail::read_file(meta), nullptr, false);
  if (m.is_discarded()) return std::nullopt;
  CacheEntry e{key, detail::read_file(body), m.value("fetched_at", std::int64_t{0})};
  if (ttl_ && now_seconds() - e.fetched_at > ttl_->count()) return std::nullopt;
  return e;
}

CacheEntry ResponseCache::put(const std::string& key, const std::string& payload) {
  if (auto existing = get(key)) return *existing;
  CacheEntry e{key, payload, now_seconds()};
  // Body first: readers only trust an entry once its meta file exists.
  detail::write_file(body_path(key), payload);
  detail::write_file(meta_path(key), json{{"key", key}, {"fetched_at", e.fetched_at}}.dump());
  return e;
}

CacheEntry ResponseCache::get_or_fetch(const std::string& key,
                                       const std::function<std::string()>& fetch) {
  if (auto hit = get(key)) return *hit;
  std::promise<CacheEntry> promise;
  std::shared_future<CacheEntry> future;
  bool owner = false;
  {
    std::lock_guard lock(inflight_mu_);
    auto it = inflight_.find(key);
    if (it != inflight_.end()) {
      future = it->second;
    } else {
      future = promise.get_future().share();
      inflight_.emplace(key, future);
      owner = true;
    }
  }
  if (!owner) return future.get();
  try {
    // Re-check: another thread may have finished between our miss and the lock.
    auto entry = get(key);
    if (!entry) entry = put(key, fetch());
    promise.set_value(*entry);
  } catch (...) {
    promise.set_exception(std::current_exception());
  }
  {
    std::lock_guard lock(inflight_mu_);
    inflight_.erase(key);
  }
  return future.get();
}

}  // namespace editprobe
