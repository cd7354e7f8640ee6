#include "editprobe/knowledge_mock.hpp"

#include <algorithm>
#include <regex>
#include <set>

#include "editprobe/error.hpp"
#include "editprobe/text.hpp"
#include "httplib.h"
#include "json_io.hpp"

namespace editprobe {

using detail::json;

KnowledgeFixture KnowledgeFixture::from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  KnowledgeFixture f;
  if (j.contains("articles")) f.articles = j["articles"].get<std::map<std::string, std::string>>();
  if (j.contains("pageviews")) f.pageviews = j["pageviews"].get<std::map<std::string, std::int64_t>>();
  if (j.contains("entities")) {
    for (const auto& [label, ids] : j["entities"].items()) {
      f.entities[label] = ids.is_array() ? ids.get<std::vector<std::string>>()
                                         : std::vector<std::string>{ids.get<std::string>()};
    }
  }
  if (j.contains("triples")) {
    for (const auto& t : j["triples"]) {
      f.triples.push_back({t.at(0).get<std::string>(), t.at(1).get<std::string>(),
                           t.at(2).get<std::string>()});
    }
  }
  return f;
}

KnowledgeFixture KnowledgeFixture::from_file(const std::filesystem::path& path) {
  return from_json(detail::read_file(path));
}

TripleIndex::TripleIndex(const std::vector<Triple>& triples) {
  std::set<Triple> unique(triples.begin(), triples.end());
  for (const auto& t : unique) out_[t.subject].emplace_back(t.predicate, t.object);
}

std::int64_t TripleIndex::edge_count(const std::string& subject) const {
  auto it = out_.find(subject);
  return it == out_.end() ? 0 : static_cast<std::int64_t>(it->second.size());
}

std::int64_t TripleIndex::path_count(const std::string& subject, const std::string& object) const {
  auto it = out_.find(subject);
  if (it == out_.end()) return 0;
  std::int64_t total = 0;
  for (const auto& [p1, middle] : it->second) {
    if (middle == subject || middle == object) continue;
    auto mid = out_.find(middle);
    if (mid == out_.end()) continue;
    for (const auto& [p2, target] : mid->second) {
      if (target == object) ++total;
    }
  }
  return total;
}

namespace {

std::string article_html(const std::string& title, const std::string& body) {
  std::string html = "<html><head><title>" + title + "</title></head><body><h1>" + title + "</h1>";
  if (!body.empty() && body.front() == '<') {
    html += body;
  } else {
    std::size_t start = 0;
    while (start <= body.size()) {
      const auto nl = body.find('\n', start);
      const auto para = body.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
      if (!text::trim(para).empty()) html += "<p>" + para + "</p>";
      if (nl == std::string::npos) break;
      start = nl + 1;
    }
  }
  return html + "</body></html>";
}

}  // namespace

struct MockKnowledgeServer::Impl {
  KnowledgeFixture fixture;
  TripleIndex index;
  httplib::Server server;
  std::thread thread;
  std::string host;
  int port = 0;
  std::atomic<std::uint64_t> requests{0};
  std::atomic<std::uint64_t> sparql_requests{0};

  explicit Impl(KnowledgeFixture f) : fixture(std::move(f)), index(fixture.triples) {}

  void routes() {
    server.Get("/w/index.php", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      const auto q = req.get_param_value("search");
      if (auto it = fixture.articles.find(q); it != fixture.articles.end()) {
        res.set_content(article_html(it->first, it->second), "text/html");
        return;
      }
      const auto lq = text::ascii_lower(q);
      for (const auto& [title, body] : fixture.articles) {
        const auto lt = text::ascii_lower(title);
        if (!lq.empty() && lt.find(lq) != std::string::npos) {
          res.set_content("<div class=\"searchresults\"><ul><li><div class=\"mw-search-result-heading\">"
                           "<a href=\"/wiki/" + text::replace_all(title, " ", "_") + "\" title=\"" +
                               title + "\">" + title + "</a></div></li></ul></div>",
                           "text/html");
          return;
        }
      }
      res.set_content("<div class=\"searchresults\"><p class=\"mw-search-nonefound\">"
                      "There were no results matching the query.</p></div>",
                      "text/html");
    });
    server.Get(R"(/wiki/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      const auto title = text::replace_all(req.matches[1].str(), "_", " ");
      auto it = fixture.articles.find(title);
      if (it == fixture.articles.end()) {
        res.status = 404;
        return;
      }
      res.set_content(article_html(it->first, it->second), "text/html");
    });
    server.Get(R"(/api/rest_v1/metrics/pageviews/per-article/en\.wikipedia/all-access/all-agents/([^/]+)/monthly/(\d+)/(\d+))",
               [this](const httplib::Request& req, httplib::Response& res) {
                 ++requests;
                 const auto title = text::replace_all(req.matches[1].str(), "_", " ");
                 auto it = fixture.pageviews.find(title);
                 if (it == fixture.pageviews.end()) {
                   res.status = 404;
                   res.set_content(R"({"type":"not_found"})", "application/json");
                   return;
                 }
                 json body = {{"items", json::array({{{"article", req.matches[1].str()},
                                                       {"granularity", "monthly"},
                                                       {"timestamp", req.matches[2].str()},
                                                       {"views", it->second}}})}};
                 res.set_content(body.dump(), "application/json");
               });
    server.Get("/w/api.php", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      const auto label = req.get_param_value("search");
      json hits = json::array();
      if (auto it = fixture.entities.find(label); it != fixture.entities.end()) {
        for (const auto& id : it->second) hits.push_back({{"id", id}, {"label", label}});
      }
      res.set_content(json{{"searchinfo", {{"search", label}}}, {"search", hits}}.dump(),
                      "application/json");
    });
    auto sparql = [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      ++sparql_requests;
      const auto query = req.has_param("query") ? req.get_param_value("query") : req.body;
      static const std::regex kEdge(R"(wd:(Q\d+)\s+\?p\s+\?neighbor)");
      static const std::regex kPathS(R"(wd:(Q\d+)\s+\?p1\s+\?middle)");
      static const std::regex kPathO(R"(\?middle\s+\?p2\s+wd:(Q\d+))");
      std::smatch m1, m2;
      std::string var;
      std::int64_t value = 0;
      if (query.find("?edgeCount") != std::string::npos && std::regex_search(query, m1, kEdge)) {
        var = "edgeCount";
        value = index.edge_count(m1[1].str());
      } else if (query.find("?pathCount") != std::string::npos &&
                 std::regex_search(query, m1, kPathS) && std::regex_search(query, m2, kPathO)) {
        var = "pathCount";
        value = index.path_count(m1[1].str(), m2[1].str());
      } else {
        res.status = 400;
        res.set_content("unsupported query", "text/plain");
        return;
      }
      json body = {{"head", {{"vars", {var}}}},
                   {"results",
                    {{"bindings",
                      json::array({{{var,
                                     {{"datatype", "http://www.w3.org/2001/XMLSchema#integer"},
                                      {"type", "literal"},
                                      {"value", std::to_string(value)}}}}})}}}};
      res.set_content(body.dump(), "application/sparql-results+json");
    };
    server.Get("/sparql", sparql);
    server.Post("/sparql", sparql);
  }
};

MockKnowledgeServer::MockKnowledgeServer(KnowledgeFixture fixture)
    : impl_(std::make_unique<Impl>(std::move(fixture))) {
  impl_->routes();
}

MockKnowledgeServer::~MockKnowledgeServer() { stop(); }

void MockKnowledgeServer::start(const std::string& host, int port) {
  impl_->host = host;
  impl_->port = port == 0 ? impl_->server.bind_to_any_port(host) : port;
  if (port != 0 && !impl_->server.bind_to_port(host, port)) impl_->port = -1;
  if (impl_->port <= 0) throw ConfigError("mock knowledge server: cannot bind " + host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void MockKnowledgeServer::stop() {
  if (!impl_ || !impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

std::string MockKnowledgeServer::base_url() const {
  return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

std::uint64_t MockKnowledgeServer::request_count() const { return impl_->requests.load(); }
std::uint64_t MockKnowledgeServer::sparql_request_count() const {
  return impl_->sparql_requests.load();
}

}  // namespace editprobe
