#pragma once

// Shared helpers for the test binaries: fixture access, scratch directories
// and scripted mock endpoints.

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "editprobe/attacks.hpp"
#include "editprobe/corpus.hpp"
#include "editprobe/error.hpp"
#include "editprobe/gateway.hpp"
#include "editprobe/knowledge_sources.hpp"
#include "editprobe/mock_server.hpp"
#include "json.hpp"

namespace testing {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline fs::path fixture(const std::string& name) { return fs::path(EDITPROBE_FIXTURE_DIR) / name; }

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << content;
}

inline std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> out;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

/// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("editprobe-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::vector<editprobe::FactEdit> facts100() {
  return editprobe::read_facts_jsonl(fixture("facts100.jsonl"));
}

inline std::map<std::string, std::string> profiles100() {
  return json::parse(slurp(fixture("profiles100.json"))).get<std::map<std::string, std::string>>();
}

inline editprobe::ProfileProvider canned_profiles(std::map<std::string, std::string> profiles) {
  return [profiles = std::move(profiles)](const std::string& subject) {
    const auto it = profiles.find(subject);
    if (it == profiles.end()) throw editprobe::NotFoundError("no profile for " + subject);
    editprobe::ProfileText p;
    p.subject = subject;
    p.text = it->second;
    p.word_count = static_cast<std::size_t>(std::count(p.text.begin(), p.text.end(), ' ') + 1);
    return p;
  };
}

inline std::string regex_escape(const std::string& s) {
  static const std::regex special(R"([.^$|()\[\]{}*+?\\])");
  return std::regex_replace(s, special, R"(\$&)");
}

/// Rewriter that answers cloze, pronoun and dialogue-synthesis requests for
/// the given facts with well-formed output.
inline editprobe::MockScript rewriter_script(const std::vector<editprobe::FactEdit>& facts) {
  editprobe::MockScript s;
  std::set<std::string> objects;
  for (const auto& f : facts) objects.insert(f.object_original);
  for (const auto& o : objects) {
    editprobe::MockRule r;
    r.match = "[" + o + "]. \n\nAnswer:";
    r.response = "1. Records show that the answer, [" + o + "], is widely cited.\n"
                 "2. Most sources agree on [" + o + "] here.\n";
    s.rules.push_back(r);
  }
  editprobe::MockRule pron;
  pron.match = "Pron: ";
  pron.response = "she";
  s.rules.push_back(pron);
  for (int rounds = 3; rounds <= 5; ++rounds) {
    editprobe::MockRule r;
    r.match = "exactly " + std::to_string(rounds) + " rounds";
    for (int k = 0; k < rounds; ++k) {
      r.response += "User: Can you tell me more about this, part " + std::to_string(k + 1) + "?\n";
      r.response += "AI: Certainly, there is a long history and many sources describe it.\n";
    }
    s.rules.push_back(r);
  }
  return s;
}

inline editprobe::EndpointConfig endpoint(const std::string& name, const std::string& url,
                                          editprobe::EndpointRole role = editprobe::EndpointRole::Subject) {
  editprobe::EndpointConfig ep;
  ep.name = name;
  ep.base_url = url;
  ep.model_id = "mock-" + name;
  ep.role = role;
  ep.retry = {1, std::chrono::milliseconds(1), std::chrono::milliseconds(5)};
  ep.max_parallel = 8;
  return ep;
}

/// Mock server that is started on construction and stopped on destruction.
class RunningMock {
 public:
  explicit RunningMock(editprobe::MockScript script) : server_(std::move(script)) { server_.start(); }
  ~RunningMock() { server_.stop(); }
  editprobe::MockModelServer* operator->() { return &server_; }
  editprobe::MockModelServer& operator*() { return server_; }
  std::string url() const { return server_.base_url(); }

 private:
  editprobe::MockModelServer server_;
};

}  // namespace testing
