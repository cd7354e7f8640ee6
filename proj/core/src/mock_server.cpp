#include "editprobe/mock_server.hpp"

#include <atomic>
#include <mutex>
#include <regex>
#include <thread>

#include "editprobe/error.hpp"
#include "httplib.h"
#include "json_io.hpp"

namespace editprobe {

using detail::json;

std::size_t MockScript::match(const std::string& prompt, const std::string& last_message) const {
  for (std::size_t i = 0; i < rules.size(); ++i) {
    const auto& r = rules[i];
    const std::string& hay = r.last_message_only ? last_message : prompt;
    const bool hit = r.regex ? std::regex_search(hay, std::regex(r.match))
                             : hay.find(r.match) != std::string::npos;
    if (hit) return i;
  }
  return rules.size();
}

void MockScript::validate() const {
  if (default_logprob > 0) throw ConfigError("mock script: default_logprob must be <= 0");
  for (const auto& r : rules) {
    if (r.regex) {
      try {
        std::regex re(r.match);
      } catch (const std::regex_error& e) {
        throw ConfigError("mock script: bad regex '" + r.match + "': " + e.what());
      }
    }
    if (r.logprobs) {
      for (double v : *r.logprobs) {
        if (v > 0) throw ConfigError("mock script: positive logprob in rule '" + r.match + "'");
      }
    }
  }
}

MockScript MockScript::from_json(const std::string& text) {
  const json j = json::parse(text);
  MockScript s;
  s.default_response = j.value("default", s.default_response);
  s.default_logprob = j.value("default_logprob", s.default_logprob);
  s.delay = std::chrono::milliseconds(j.value("delay_ms", 0));
  for (const auto& r : j.value("rules", json::array())) {
    MockRule rule;
    rule.match = r.at("match").get<std::string>();
    rule.regex = r.value("regex", false);
    rule.last_message_only = r.value("last_message_only", false);
    rule.response = r.value("response", std::string{});
    if (r.contains("responses")) rule.responses = r["responses"].get<std::vector<std::string>>();
    if (r.contains("logprobs")) rule.logprobs = r["logprobs"].get<std::vector<double>>();
    rule.status = r.value("status", 200);
    s.rules.push_back(std::move(rule));
  }
  s.validate();
  return s;
}

MockScript MockScript::from_file(const std::filesystem::path& path) {
  return from_json(detail::read_file(path));
}

std::vector<std::pair<std::string, std::size_t>> mock_tokenize(const std::string& text) {
  std::vector<std::pair<std::string, std::size_t>> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i == start) break;
    out.emplace_back(text.substr(start, i - start), start);
  }
  return out;
}

struct MockModelServer::Impl {
  MockScript script;
  httplib::Server server;
  std::thread thread;
  std::string host;
  int port = 0;

  mutable std::mutex mu;
  std::uint64_t requests = 0;
  std::vector<std::uint64_t> hits;
  std::uint64_t defaults = 0;
  std::vector<std::string> bodies;
  int in_flight = 0;
  int peak = 0;
  std::chrono::milliseconds delay{0};
  int fail_count = 0;
  int fail_status = 503;
  std::optional<std::uint64_t> fail_after;

  explicit Impl(MockScript s)
      : script(std::move(s)), hits(script.rules.size(), 0), delay(script.delay) {}

  struct Picked {
    int status = 200;
    std::string text;
    std::optional<std::vector<double>> logprobs;
  };

  // Chooses a response and updates counters; returns status 0 when a failure
  // is injected.
  Picked pick(const std::string& body, const std::string& prompt, const std::string& last) {
    std::lock_guard lock(mu);
    ++requests;
    bodies.push_back(body);
    if (fail_count > 0) {
      --fail_count;
      return {fail_status, "injected failure", std::nullopt};
    }
    if (fail_after && requests > *fail_after) return {fail_status, "injected failure", std::nullopt};
    const auto idx = script.match(prompt, last);
    if (idx == script.rules.size()) {
      ++defaults;
      return {200, script.default_response, std::nullopt};
    }
    const auto& rule = script.rules[idx];
    const auto k = hits[idx]++;
    std::string text = rule.responses.empty()
                           ? rule.response
                           : rule.responses[std::min<std::size_t>(k, rule.responses.size() - 1)];
    return {rule.status, std::move(text), rule.logprobs};
  }

  void enter() {
    std::lock_guard lock(mu);
    ++in_flight;
    peak = std::max(peak, in_flight);
  }
  void leave() {
    std::lock_guard lock(mu);
    --in_flight;
  }
  std::chrono::milliseconds current_delay() const {
    std::lock_guard lock(mu);
    return delay;
  }

  static void error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", {{"message", message}, {"type", "mock_error"}}}}.dump(),
                    "application/json");
  }

  void chat(const httplib::Request& req, httplib::Response& res) {
    enter();
    const auto d = current_delay();
    if (d.count() > 0) std::this_thread::sleep_for(d);
    const json j = json::parse(req.body, nullptr, false);
    if (!j.is_object() || !j.contains("messages") || !j["messages"].is_array()) {
      leave();
      return error(res, 400, "messages must be an array");
    }
    std::string prompt;
    std::string last;
    for (const auto& m : j["messages"]) {
      last = m.value("content", std::string{});
      if (!prompt.empty()) prompt += '\n';
      prompt += last;
    }
    auto p = pick(req.body, prompt, last);
    leave();
    if (p.status != 200) return error(res, p.status, p.text);
    json choice = {{"index", 0},
                   {"message", {{"role", "assistant"}, {"content", p.text}}},
                   {"finish_reason", "stop"}};
    if (p.logprobs) {
      json content = json::array();
      const auto toks = mock_tokenize(p.text);
      for (std::size_t i = 0; i < p.logprobs->size(); ++i) {
        content.push_back({{"token", i < toks.size() ? toks[i].first : std::string{}},
                           {"logprob", (*p.logprobs)[i]}});
      }
      choice["logprobs"] = {{"content", content}};
    }
    res.set_content(json{{"id", "mock"},
                         {"object", "chat.completion"},
                         {"model", j.value("model", std::string{"mock"})},
                         {"choices", json::array({choice})}}
                        .dump(),
                    "application/json");
  }

  void completion(const httplib::Request& req, httplib::Response& res) {
    enter();
    const auto d = current_delay();
    if (d.count() > 0) std::this_thread::sleep_for(d);
    const json j = json::parse(req.body, nullptr, false);
    if (!j.is_object() || !j.contains("prompt") || !j["prompt"].is_string()) {
      leave();
      return error(res, 400, "prompt must be a string");
    }
    const auto prompt = j["prompt"].get<std::string>();
    auto p = pick(req.body, prompt, prompt);
    leave();
    if (p.status != 200) return error(res, p.status, p.text);
    json choice = {{"index", 0}, {"finish_reason", "stop"}};
    if (j.value("echo", false)) {
      const auto toks = mock_tokenize(prompt);
      std::vector<double> values(toks.size(), script.default_logprob);
      if (p.logprobs) {
        const auto& lp = *p.logprobs;
        const std::size_t k = std::min(lp.size(), toks.size());
        for (std::size_t i = 0; i < k; ++i) values[toks.size() - k + i] = lp[lp.size() - k + i];
      }
      json tokens = json::array(), logprobs = json::array(), offsets = json::array();
      for (std::size_t i = 0; i < toks.size(); ++i) {
        tokens.push_back(toks[i].first);
        offsets.push_back(toks[i].second);
        if (i == 0) {
          logprobs.push_back(nullptr);
        } else {
          logprobs.push_back(values[i]);
        }
      }
      choice["text"] = prompt;
      choice["logprobs"] = {{"tokens", tokens}, {"token_logprobs", logprobs},
                            {"text_offset", offsets}};
    } else {
      choice["text"] = p.text;
    }
    res.set_content(json{{"id", "mock"},
                         {"object", "text_completion"},
                         {"choices", json::array({choice})}}
                        .dump(),
                    "application/json");
  }
};

MockModelServer::MockModelServer(MockScript script, int worker_threads)
    : impl_(std::make_unique<Impl>(std::move(script))) {
  impl_->script.validate();
  impl_->server.new_task_queue = [worker_threads] {
    return new httplib::ThreadPool(static_cast<std::size_t>(worker_threads));
  };
  impl_->server.Post("/v1/chat/completions",
                     [this](const httplib::Request& q, httplib::Response& r) { impl_->chat(q, r); });
  impl_->server.Post("/v1/completions", [this](const httplib::Request& q, httplib::Response& r) {
    impl_->completion(q, r);
  });
}

MockModelServer::~MockModelServer() { stop(); }

void MockModelServer::start(const std::string& host, int port) {
  impl_->host = host;
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
  } else {
    impl_->port = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  if (impl_->port <= 0) {
    throw ConfigError("mock model server: cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void MockModelServer::stop() {
  if (!impl_ || !impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

std::string MockModelServer::base_url() const {
  return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

int MockModelServer::port() const { return impl_->port; }

std::uint64_t MockModelServer::request_count() const {
  std::lock_guard lock(impl_->mu);
  return impl_->requests;
}

std::uint64_t MockModelServer::rule_hits(std::size_t rule) const {
  std::lock_guard lock(impl_->mu);
  return impl_->hits.at(rule);
}

std::uint64_t MockModelServer::default_hits() const {
  std::lock_guard lock(impl_->mu);
  return impl_->defaults;
}

int MockModelServer::max_concurrent() const {
  std::lock_guard lock(impl_->mu);
  return impl_->peak;
}

std::vector<std::string> MockModelServer::request_bodies() const {
  std::lock_guard lock(impl_->mu);
  return impl_->bodies;
}

void MockModelServer::reset_counters() {
  std::lock_guard lock(impl_->mu);
  impl_->requests = 0;
  std::fill(impl_->hits.begin(), impl_->hits.end(), 0);
  impl_->defaults = 0;
  impl_->bodies.clear();
  impl_->peak = impl_->in_flight;
}

void MockModelServer::set_delay(std::chrono::milliseconds delay) {
  std::lock_guard lock(impl_->mu);
  impl_->delay = delay;
}

void MockModelServer::fail_next(int count, int status) {
  std::lock_guard lock(impl_->mu);
  impl_->fail_count = count;
  impl_->fail_status = status;
}

void MockModelServer::fail_after(std::uint64_t count, int status) {
  std::lock_guard lock(impl_->mu);
  impl_->fail_after = count;
  impl_->fail_status = status;
}

void MockModelServer::clear_failures() {
  std::lock_guard lock(impl_->mu);
  impl_->fail_count = 0;
  impl_->fail_after.reset();
}

}  // namespace editprobe
