#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace editprobe {

struct Triple {
  std::string subject;
  std::string predicate;
  std::string object;

  auto operator<=>(const Triple&) const = default;
};

/// Offline stand-in for the public knowledge services.
///   articles:   title -> article HTML (or plain text, wrapped in <p> per line)
///   pageviews:  title -> monthly views
///   entities:   label -> ranked QIDs
///   triples:    [subject, predicate, object] QID statements
struct KnowledgeFixture {
  std::map<std::string, std::string> articles;
  std::map<std::string, std::int64_t> pageviews;
  std::map<std::string, std::vector<std::string>> entities;
  std::vector<Triple> triples;

  static KnowledgeFixture from_json(const std::string& json_text);
  static KnowledgeFixture from_file(const std::filesystem::path& path);
};

/// Indexed evaluator for the two count queries, as a SPARQL engine would run
/// them over a duplicate-free triple set.
class TripleIndex {
 public:
  explicit TripleIndex(const std::vector<Triple>& triples);

  std::int64_t edge_count(const std::string& subject) const;
  std::int64_t path_count(const std::string& subject, const std::string& object) const;

 private:
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> out_;  // s -> (p, o)
};

/// HTTP server answering the Wikipedia search/article, pageviews, entity
/// search and SPARQL routes from a fixture. Binds 127.0.0.1 on an ephemeral
/// port unless told otherwise.
class MockKnowledgeServer {
 public:
  explicit MockKnowledgeServer(KnowledgeFixture fixture);
  ~MockKnowledgeServer();
  MockKnowledgeServer(const MockKnowledgeServer&) = delete;
  MockKnowledgeServer& operator=(const MockKnowledgeServer&) = delete;

  /// Throws Error(Config) if the port cannot be bound.
  void start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();

  std::string base_url() const;
  std::uint64_t request_count() const;
  std::uint64_t sparql_request_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace editprobe
