#include "editprobe/knowledge_sources.hpp"

#include <spdlog/spdlog.h>

#include <cstdio>
#include <regex>

#include "editprobe/error.hpp"
#include "editprobe/text.hpp"
#include "json_io.hpp"

namespace editprobe {

using detail::json;

YearMonth YearMonth::parse(const std::string& s) {
  YearMonth ym;
  if (std::sscanf(s.c_str(), "%d-%d", &ym.year, &ym.month) != 2 || ym.month < 1 || ym.month > 12) {
    throw ConfigError("expected YYYY-MM, got '" + s + "'");
  }
  return ym;
}

std::string YearMonth::to_string() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
  return buf;
}

int YearMonth::last_day() const {
  static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
  return month == 2 && leap ? 29 : kDays[month - 1];
}

const char* to_string(CooccurrenceDirection d) {
  return d == CooccurrenceDirection::Forward ? "forward" : "bidirectional";
}

CooccurrenceDirection direction_from_string(const std::string& s) {
  if (s == "forward") return CooccurrenceDirection::Forward;
  if (s == "bidirectional") return CooccurrenceDirection::Bidirectional;
  throw ConfigError("unknown co-occurrence direction: " + s);
}

std::string edge_count_query(const std::string& qid) {
  return "SELECT (COUNT(?neighbor) AS ?edgeCount)\n"
         "WHERE {\n"
         "wd:" + qid + " ?p ?neighbor.\n"
         "}\n";
}

std::string path_count_query(const std::string& subject_qid, const std::string& object_qid) {
  return "SELECT (COUNT(*) AS ?pathCount)\n"
         "WHERE {\n"
         "{\n"
         "    wd:" + subject_qid + " ?p1 ?middle.\n"
         "    ?middle ?p2 wd:" + object_qid + ".\n"
         "    FILTER (?middle != wd:" + subject_qid + " &&\n"
         "    ?middle != wd:" + object_qid + ")\n"
         "}\n"
         "}\n";
}

std::string pageviews_path(const std::string& title, const YearMonth& month) {
  char window[64];
  std::snprintf(window, sizeof window, "%04d%02d0100/%04d%02d%02d00", month.year, month.month,
                month.year, month.month, month.last_day());
  const auto article = url_encode(text::replace_all(title, " ", "_"));
  return "/api/rest_v1/metrics/pageviews/per-article/en.wikipedia/all-access/all-agents/" +
         article + "/monthly/" + window;
}

bool is_valid_qid(const std::string& qid) {
  static const std::regex kQid("Q[0-9]+");
  return std::regex_match(qid, kQid);
}

namespace {

std::string decode_entities(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '&') {
      out.push_back(s[i]);
      continue;
    }
    const auto semi = s.find(';', i);
    if (semi == std::string::npos || semi - i > 10) {
      out.push_back(s[i]);
      continue;
    }
    const auto name = s.substr(i + 1, semi - i - 1);
    std::string rep;
    if (name == "amp") rep = "&";
    else if (name == "lt") rep = "<";
    else if (name == "gt") rep = ">";
    else if (name == "quot") rep = "\"";
    else if (name == "apos" || name == "#39") rep = "'";
    else if (name == "nbsp" || name == "#160") rep = " ";
    else if (!name.empty() && name[0] == '#') {
      unsigned long cp = name.size() > 1 && (name[1] == 'x' || name[1] == 'X')
                             ? std::strtoul(name.c_str() + 2, nullptr, 16)
                             : std::strtoul(name.c_str() + 1, nullptr, 10);
      if (cp < 0x80) {
        rep.push_back(static_cast<char>(cp));
      } else if (cp < 0x800) {
        rep.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        rep.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      } else if (cp < 0x10000) {
        rep.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        rep.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        rep.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      } else {
        rep.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        rep.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        rep.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        rep.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      }
    } else {
      out.push_back(s[i]);
      continue;
    }
    out += rep;
    i = semi;
  }
  return out;
}

std::string lower_copy(const std::string& s) { return text::ascii_lower(s); }

// Drops tags, plus the contents of <sup>/<style>/<script> (reference markers,
// inline CSS). Hand-rolled: std::regex recursion does not survive full pages.
std::string strip_tags(const std::string& html) {
  const std::string lower = lower_copy(html);
  std::string out;
  std::size_t i = 0;
  while (i < html.size()) {
    if (html[i] != '<') {
      out.push_back(html[i++]);
      continue;
    }
    const auto close = html.find('>', i);
    if (close == std::string::npos) break;
    bool skipped = false;
    for (const char* tag : {"sup", "style", "script"}) {
      const std::string open = std::string("<") + tag;
      if (lower.compare(i, open.size(), open) == 0 &&
          (lower[i + open.size()] == '>' || lower[i + open.size()] == ' ')) {
        const auto end_tag = lower.find(std::string("</") + tag, close);
        if (end_tag != std::string::npos) {
          i = lower.find('>', end_tag);
          i = i == std::string::npos ? html.size() : i + 1;
          skipped = true;
        }
        break;
      }
    }
    if (!skipped) i = close + 1;
  }
  return out;
}

std::string strip_reference_markers(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '[') {
      const auto close = s.find(']', i);
      if (close != std::string::npos && close - i <= 20) {
        const auto inner = lower_copy(s.substr(i + 1, close - i - 1));
        const bool digits = !inner.empty() &&
                            inner.find_first_not_of("0123456789") == std::string::npos;
        const bool letter = inner.size() == 1 && inner[0] >= 'a' && inner[0] <= 'z';
        const bool note = inner == "citation needed" || inner.rfind("note ", 0) == 0 ||
                          inner.rfind("nb ", 0) == 0;
        if (digits || letter || note) {
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(s[i++]);
  }
  return out;
}

std::string percent_decode_title(const std::string& raw) {
  std::string title;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == '%' && i + 2 < raw.size()) {
      title.push_back(static_cast<char>(std::stoi(raw.substr(i + 1, 2), nullptr, 16)));
      i += 2;
    } else {
      title.push_back(raw[i] == '_' ? ' ' : raw[i]);
    }
  }
  return title;
}

}  // namespace

std::string extract_profile_text(const std::string& html) {
  const std::string lower = lower_copy(html);
  std::vector<std::string> paragraphs;
  std::size_t pos = 0;
  while (true) {
    const auto open = lower.find("<p", pos);
    if (open == std::string::npos) break;
    const char after = open + 2 < lower.size() ? lower[open + 2] : '\0';
    if (after != '>' && after != ' ' && after != '\t' && after != '\n') {
      pos = open + 2;
      continue;
    }
    const auto tag_end = lower.find('>', open);
    if (tag_end == std::string::npos) break;
    const auto attrs = html.substr(open + 2, tag_end - open - 2);
    const auto close = lower.find("</p>", tag_end);
    if (close == std::string::npos) break;
    pos = close + 4;
    if (attrs.find("mw-empty-elt") != std::string::npos) continue;
    auto para = decode_entities(strip_tags(html.substr(tag_end + 1, close - tag_end - 1)));
    para = text::squash_whitespace(strip_reference_markers(para));
    if (!para.empty()) paragraphs.push_back(std::move(para));
  }
  return text::join(paragraphs, " ");
}

std::optional<std::string> first_search_hit(const std::string& html) {
  const bool results_page = html.find("mw-search-result") != std::string::npos ||
                            html.find("mw-search-nonefound") != std::string::npos ||
                            html.find("searchresults") != std::string::npos;
  if (!results_page) return std::nullopt;
  const auto heading = html.find("mw-search-result-heading");
  if (heading == std::string::npos) return std::string{};
  const std::string marker = "href=\"/wiki/";
  const auto href = html.find(marker, heading);
  if (href == std::string::npos) return std::string{};
  const auto begin = href + marker.size();
  const auto end = html.find_first_of("\"#?", begin);
  if (end == std::string::npos) return std::string{};
  return percent_decode_title(html.substr(begin, end - begin));
}

std::string truncate_to_sentences(const std::string& text_in, std::size_t max_words) {
  const auto sentences = text::split_sentences(text_in);
  std::string out;
  std::size_t words = 0;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto n = text::word_count(sentences[i]);
    if (i > 0 && words + n > max_words) break;
    out += sentences[i];
    words += n;
    if (words >= max_words) break;
  }
  return std::string(text::trim(out));
}

KnowledgeClient::KnowledgeClient(KnowledgeConfig cfg, std::shared_ptr<HttpTransport> transport)
    : cfg_(std::move(cfg)),
      cache_(cfg_.cache_dir, cfg_.cache_ttl),
      wikipedia_("wikipedia", cfg_.wikipedia_url, cfg_.retry, cfg_.requests_per_second, transport,
                 cfg_.timeout, cfg_.user_agent),
      pageviews_("pageviews", cfg_.pageviews_url, cfg_.retry, cfg_.requests_per_second, transport,
                 cfg_.timeout, cfg_.user_agent),
      wikidata_("wikidata", cfg_.wikidata_url, cfg_.retry, cfg_.requests_per_second, transport,
                cfg_.timeout, cfg_.user_agent),
      sparql_("sparql", cfg_.sparql_url, cfg_.retry, cfg_.requests_per_second, transport,
              cfg_.timeout, cfg_.user_agent) {}

std::uint64_t KnowledgeClient::network_calls() const {
  return wikipedia_.requests_sent() + pageviews_.requests_sent() + wikidata_.requests_sent() +
         sparql_.requests_sent();
}

KnowledgeClient::Fetched KnowledgeClient::cached_get(HttpService& svc, HttpRequest req) {
  const auto key = ResponseCache::make_key(svc.name(), canonical_request(req));
  // Status is part of the payload so 404s are cached as well.
  const auto entry = cache_.get_or_fetch(key, [&] {
    const auto res = svc.send(req);
    return std::to_string(res.status) + "\n" + res.body;
  });
  const auto nl = entry.payload.find('\n');
  return {std::stoi(entry.payload.substr(0, nl)), entry.payload.substr(nl + 1), entry.fetched_at};
}

ProfileText KnowledgeClient::fetch_profile(const std::string& subject, std::size_t max_words) {
  if (text::trim(subject).empty()) throw PreconditionError("fetch_profile: empty subject");
  HttpRequest search;
  search.path = "/w/index.php";
  search.query = {{"search", subject}};
  auto page = cached_get(wikipedia_, search);
  std::string source = wikipedia_.url().origin + path_with_query(search);
  if (page.status == 404) throw NotFoundError("no Wikipedia page for '" + subject + "'");
  if (page.status != 200) {
    throw TransientError("wikipedia search returned HTTP " + std::to_string(page.status),
                         page.status, 1);
  }
  if (auto hit = first_search_hit(page.body)) {
    if (hit->empty()) throw NotFoundError("no Wikipedia search result for '" + subject + "'");
    HttpRequest article;
    article.path = "/wiki/" + url_encode(text::replace_all(*hit, " ", "_"));
    page = cached_get(wikipedia_, article);
    source = wikipedia_.url().origin + article.path;
    if (page.status != 200) throw NotFoundError("article fetch failed for '" + *hit + "'");
  }
  ProfileText p;
  p.subject = subject;
  p.text = truncate_to_sentences(extract_profile_text(page.body), max_words);
  if (p.text.empty()) throw NotFoundError("Wikipedia page for '" + subject + "' has no prose");
  p.word_count = text::word_count(p.text);
  p.fetched_at = page.fetched_at;
  p.source_url = source;
  return p;
}

std::int64_t KnowledgeClient::fetch_pageviews(const std::string& title,
                                              std::optional<YearMonth> month) {
  if (text::trim(title).empty()) throw PreconditionError("fetch_pageviews: empty title");
  HttpRequest req;
  req.path = pageviews_path(title, month.value_or(cfg_.pageview_month));
  req.headers = {{"Accept", "application/json"}};
  const auto res = cached_get(pageviews_, req);
  if (res.status == 404) throw NotFoundError("no pageviews for '" + title + "'");
  if (res.status != 200) {
    throw TransientError("pageviews returned HTTP " + std::to_string(res.status), res.status, 1);
  }
  const json j = json::parse(res.body, nullptr, false);
  if (j.is_discarded()) throw TransientError("pageviews: malformed JSON", res.status, 1);
  std::int64_t views = 0;
  if (auto items = j.find("items"); items != j.end() && items->is_array()) {
    for (const auto& item : *items) views += item.value("views", std::int64_t{0});
  } else {
    views = j.value("views", std::int64_t{0});
  }
  return std::max<std::int64_t>(0, views);
}

std::string KnowledgeClient::resolve_qid(const std::string& label) {
  if (text::trim(label).empty()) throw PreconditionError("resolve_qid: empty label");
  if (auto it = cfg_.qid_overrides.find(label); it != cfg_.qid_overrides.end()) return it->second;
  HttpRequest req;
  req.path = "/w/api.php";
  req.query = {{"action", "wbsearchentities"}, {"search", label}, {"language", "en"},
               {"format", "json"}, {"limit", "10"}};
  const auto res = cached_get(wikidata_, req);
  if (res.status != 200) {
    throw TransientError("entity search returned HTTP " + std::to_string(res.status), res.status, 1);
  }
  const json j = json::parse(res.body, nullptr, false);
  if (j.is_discarded() || !j.contains("search") || !j["search"].is_array() || j["search"].empty()) {
    throw NotFoundError("no WikiData entity for '" + label + "'");
  }
  const auto& hits = j["search"];
  if (hits.size() > 1) {
    std::vector<std::string> ids;
    for (const auto& h : hits) ids.push_back(h.value("id", std::string{"?"}));
    spdlog::info("resolve_qid('{}'): {} candidates [{}], taking {}", label, hits.size(),
                 text::join(ids, ", "), ids.front());
  }
  return hits.front().value("id", std::string{});
}

std::int64_t KnowledgeClient::sparql_count(const std::string& query, const char* variable) {
  HttpRequest req;
  req.path = "/sparql";
  req.query = {{"query", query}, {"format", "json"}};
  req.headers = {{"Accept", "application/sparql-results+json"}};
  const auto res = cached_get(sparql_, req);
  if (res.status != 200) {
    throw TransientError("SPARQL endpoint returned HTTP " + std::to_string(res.status), res.status, 1);
  }
  const json j = json::parse(res.body, nullptr, false);
  try {
    const auto& bindings = j.at("results").at("bindings");
    if (bindings.empty()) return 0;
    const auto& cell = bindings.at(0).at(variable);
    const auto& v = cell.at("value");
    const auto n = v.is_string() ? std::stoll(v.get<std::string>()) : v.get<std::int64_t>();
    return std::max<std::int64_t>(0, n);
  } catch (const std::exception& e) {
    throw TransientError(std::string("malformed SPARQL result: ") + e.what(), res.status, 1);
  }
}

std::int64_t KnowledgeClient::fetch_edge_count(const std::string& qid) {
  if (!is_valid_qid(qid)) throw PreconditionError("malformed QID '" + qid + "'");
  return sparql_count(edge_count_query(qid), "edgeCount");
}

std::int64_t KnowledgeClient::fetch_cooccurrence(const std::string& subject_qid,
                                                 const std::string& object_qid,
                                                 CooccurrenceDirection direction) {
  if (!is_valid_qid(subject_qid)) throw PreconditionError("malformed QID '" + subject_qid + "'");
  if (!is_valid_qid(object_qid)) throw PreconditionError("malformed QID '" + object_qid + "'");
  if (subject_qid == object_qid) throw PreconditionError("co-occurrence needs distinct entities");
  auto total = sparql_count(path_count_query(subject_qid, object_qid), "pathCount");
  if (direction == CooccurrenceDirection::Bidirectional) {
    total += sparql_count(path_count_query(object_qid, subject_qid), "pathCount");
  }
  return total;
}

}  // namespace editprobe
