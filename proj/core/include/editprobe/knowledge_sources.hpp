#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "editprobe/cache.hpp"
#include "editprobe/http.hpp"

namespace editprobe {

struct ProfileText {
  std::string subject;
  std::string text;
  std::size_t word_count = 0;
  std::int64_t fetched_at = 0;
  std::string source_url;

  bool operator==(const ProfileText&) const = default;
};

struct YearMonth {
  int year = 2021;
  int month = 10;

  static YearMonth parse(const std::string& s);  // "YYYY-MM"
  std::string to_string() const;
  int last_day() const;
};

enum class CooccurrenceDirection { Forward, Bidirectional };

const char* to_string(CooccurrenceDirection d);
CooccurrenceDirection direction_from_string(const std::string& s);

struct KnowledgeConfig {
  std::string wikipedia_url = "https://en.wikipedia.org";
  std::string pageviews_url = "https://wikimedia.org";
  std::string wikidata_url = "https://www.wikidata.org";
  std::string sparql_url = "https://query.wikidata.org";
  std::filesystem::path cache_dir = ".editprobe-cache";
  std::optional<std::chrono::seconds> cache_ttl;
  double requests_per_second = 5.0;
  RetryPolicy retry;
  std::chrono::milliseconds timeout{30000};
  std::string user_agent = "editprobe/0.3 (research harness)";
  YearMonth pageview_month{2021, 10};
  /// Manual label -> QID table consulted before entity search.
  std::map<std::string, std::string> qid_overrides;
};

/// Verbatim WikiData queries with the QIDs substituted.
std::string edge_count_query(const std::string& qid);
std::string path_count_query(const std::string& subject_qid, const std::string& object_qid);

/// REST pageviews path for one calendar month of one article.
std::string pageviews_path(const std::string& title, const YearMonth& month);

/// Lead prose from a Wikipedia article page: <p> paragraphs with tags,
/// reference markers ("[1]", "[citation needed]") and entities removed.
/// Headers and tables never contribute since only paragraphs are read.
std::string extract_profile_text(const std::string& html);

/// If `html` is a search-results page, the title of the first hit; empty when
/// the page reports no results; nullopt when it is not a results page at all.
std::optional<std::string> first_search_hit(const std::string& html);

/// Whole sentences (see text::split_sentences) while the running word count
/// stays within `max_words`; a first sentence longer than the budget is kept.
std::string truncate_to_sentences(const std::string& text, std::size_t max_words);

bool is_valid_qid(const std::string& qid);

/// Clients for Wikipedia, the pageviews REST API, WikiData entity search and
/// the WikiData SPARQL endpoint, all behind one content-addressed cache.
/// Safe for concurrent use.
class KnowledgeClient {
 public:
  explicit KnowledgeClient(KnowledgeConfig cfg,
                           std::shared_ptr<HttpTransport> transport = nullptr);

  ProfileText fetch_profile(const std::string& subject, std::size_t max_words = 300);
  std::int64_t fetch_pageviews(const std::string& title,
                               std::optional<YearMonth> month = std::nullopt);
  std::string resolve_qid(const std::string& label);
  std::int64_t fetch_edge_count(const std::string& qid);
  std::int64_t fetch_cooccurrence(const std::string& subject_qid, const std::string& object_qid,
                                  CooccurrenceDirection direction);

  /// Requests actually sent over the network, summed across services.
  std::uint64_t network_calls() const;
  const KnowledgeConfig& config() const { return cfg_; }

 private:
  struct Fetched {
    int status;
    std::string body;
    std::int64_t fetched_at;
  };
  Fetched cached_get(HttpService& svc, HttpRequest req);
  std::int64_t sparql_count(const std::string& query, const char* variable);

  KnowledgeConfig cfg_;
  ResponseCache cache_;
  HttpService wikipedia_;
  HttpService pageviews_;
  HttpService wikidata_;
  HttpService sparql_;
};

}  // namespace editprobe
