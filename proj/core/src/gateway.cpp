#include "editprobe/gateway.hpp"

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <thread>

#include "editprobe/error.hpp"
#include "json_io.hpp"

namespace editprobe {

using detail::json;

const char* to_string(EndpointRole r) {
  switch (r) {
    case EndpointRole::Subject: return "subject";
    case EndpointRole::Rewriter: return "rewriter";
    case EndpointRole::Simulator: return "simulator";
  }
  return "subject";
}

EndpointRole endpoint_role_from_string(const std::string& s) {
  if (s == "subject") return EndpointRole::Subject;
  if (s == "rewriter") return EndpointRole::Rewriter;
  if (s == "simulator") return EndpointRole::Simulator;
  throw ConfigError("unknown endpoint role: " + s);
}

const char* to_string(PromptFormat f) { return f == PromptFormat::Chat ? "chat" : "raw"; }

PromptFormat prompt_format_from_string(const std::string& s) {
  if (s == "chat") return PromptFormat::Chat;
  if (s == "raw") return PromptFormat::Raw;
  throw ConfigError("unknown prompt format: " + s);
}

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ConfigError("endpoint " + name + ": base_url is empty");
  if (temperature < 0) throw ConfigError("endpoint " + name + ": temperature must be >= 0");
  if (max_tokens < 1) throw ConfigError("endpoint " + name + ": max_tokens must be >= 1");
  if (max_parallel < 1) throw ConfigError("endpoint " + name + ": max_parallel must be >= 1");
}

RunLog::RunLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.emplace(path, std::ios::app);
  if (!*out_) throw IoError("cannot open run log " + path.string());
}

std::uint64_t RunLog::next_seq() {
  std::lock_guard lock(mu_);
  return ++seq_;
}

void RunLog::append(const RunLogEntry& e) {
  std::lock_guard lock(mu_);
  entries_.push_back(e);
  if (out_) {
    json j = {{"seq", e.seq},
              {"endpoint", e.endpoint},
              {"sample_id", e.sample_id},
              {"path", e.path},
              {"request", e.request_body},
              {"status", e.status},
              {"response", e.response_body},
              {"latency_ms", e.latency_ms}};
    if (!e.transport_error.empty()) j["transport_error"] = e.transport_error;
    *out_ << j.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    out_->flush();
  }
}

std::vector<RunLogEntry> RunLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::uint64_t RunLog::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

namespace {

std::string api_path(const Url& url, const std::string& endpoint) {
  std::string prefix = url.path_prefix;
  if (prefix.size() >= 3 && prefix.compare(prefix.size() - 3, 3, "/v1") == 0) {
    prefix.resize(prefix.size() - 3);
  }
  return prefix + "/v1/" + endpoint;
}

std::string error_message(const std::string& body) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_object() && j.contains("error")) {
    const auto& e = j["error"];
    if (e.is_string()) return e.get<std::string>();
    if (e.is_object() && e.contains("message") && e["message"].is_string()) {
      return e["message"].get<std::string>();
    }
  }
  return body;
}

}  // namespace

bool truncate_left(std::vector<Message>& messages, std::size_t budget) {
  std::size_t total = 0;
  for (const auto& m : messages) total += m.text.size();
  if (total <= budget) return false;
  std::size_t excess = total - budget;
  for (auto it = messages.begin(); excess > 0 && it != messages.end();) {
    if (it->role == "system") {
      ++it;
      continue;
    }
    const auto size = it->text.size();
    if (std::next(it) != messages.end() && size <= excess) {
      excess -= size;
      it = messages.erase(it);
      continue;
    }
    std::size_t cut = std::min(excess, size);
    while (cut < size && (static_cast<unsigned char>(it->text[cut]) & 0xC0) == 0x80) ++cut;
    it->text.erase(0, cut);
    excess -= std::min(excess, cut);
    ++it;
  }
  return true;
}

std::string flatten_messages(const std::vector<Message>& messages) {
  if (messages.size() == 1 && messages.front().role == "user") return messages.front().text;
  std::string out;
  for (const auto& m : messages) {
    if (!out.empty()) out += '\n';
    if (m.role == "user") {
      out += "User: ";
    } else if (m.role == "assistant") {
      out += "AI: ";
    }
    out += m.text;
  }
  return out;
}

ModelGateway::ModelGateway(std::shared_ptr<RunLog> log, std::shared_ptr<HttpTransport> transport,
                           std::shared_ptr<ResponseCache> cache)
    : log_(log ? std::move(log) : std::make_shared<RunLog>()),
      transport_(transport ? std::move(transport) : make_default_transport()),
      cache_(std::move(cache)) {}

std::counting_semaphore<>& ModelGateway::slots(const EndpointConfig& ep) {
  std::lock_guard lock(slots_mu_);
  const auto key = ep.name + "|" + ep.base_url;
  auto& slot = slots_[key];
  if (!slot) slot = std::make_unique<std::counting_semaphore<>>(ep.max_parallel);
  return *slot;
}

ModelGateway::Wire ModelGateway::post(const EndpointConfig& ep, const std::string& path,
                                      const std::string& body, const std::string& sample_id) {
  const Url url = parse_url(ep.base_url);
  HttpRequest req;
  req.method = "POST";
  req.path = api_path(url, path);
  req.body = body;
  req.content_type = "application/json";
  req.headers.emplace_back("Accept", "application/json");
  if (!ep.api_key_env.empty()) {
    if (const char* key = std::getenv(ep.api_key_env.c_str()); key && *key) {
      req.headers.emplace_back("Authorization", std::string("Bearer ") + key);
    }
  }

  auto& sem = slots(ep);
  auto backoff = ep.retry.base_backoff;
  const int attempts = ep.retry.max_retries + 1;
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    const auto seq = log_->next_seq();
    const auto t0 = std::chrono::steady_clock::now();
    HttpResponse res;
    {
      sem.acquire();
      try {
        res = transport_->send(url.origin, req, ep.timeout);
      } catch (...) {
        sem.release();
        throw;
      }
      sem.release();
    }
    const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
    log_->append({seq, ep.name, sample_id, req.path, body, res.status, res.body,
                  res.transport_error, latency});

    if (res.transport_error.empty() && res.status >= 200 && res.status < 300) {
      return {res.status, std::move(res.body), seq, latency};
    }
    const bool retryable = !res.transport_error.empty() || is_retryable_status(res.status);
    if (!retryable) throw EndpointError(error_message(res.body), res.status);
    last_error = res.transport_error.empty() ? "HTTP " + std::to_string(res.status)
                                             : res.transport_error;
    spdlog::warn("{}: sample {} attempt {}/{} failed: {}", ep.name, sample_id, attempt, attempts,
                 last_error);
    if (attempt < attempts) {
      std::this_thread::sleep_for(backoff);
      backoff = std::min(ep.retry.max_backoff, backoff * 2);
    }
  }
  throw RequestFailed(ep.name + ": sample " + sample_id + " failed after " +
                          std::to_string(attempts) + " attempts (" + last_error + ")",
                      sample_id, attempts);
}

GenerationResult ModelGateway::generate(const EndpointConfig& ep, std::vector<Message> messages,
                                        const GenerationParams& params) {
  if (messages.empty()) throw PreconditionError("generate: messages must not be empty");
  GenerationResult out;
  if (ep.context_chars) {
    out.truncated = truncate_left(messages, *ep.context_chars);
    if (out.truncated) {
      spdlog::info("{}: sample {} input truncated from the left to {} bytes", ep.name,
                   params.sample_id, *ep.context_chars);
    }
  }

  json body;
  body["model"] = ep.model_id;
  json msgs = json::array();
  if (ep.format == PromptFormat::Raw) {
    msgs.push_back({{"role", "user"}, {"content", flatten_messages(messages)}});
  } else {
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.text}});
  }
  body["messages"] = std::move(msgs);
  body["temperature"] = params.temperature.value_or(ep.temperature);
  body["max_tokens"] = params.max_tokens.value_or(ep.max_tokens);
  if (params.seed) body["seed"] = *params.seed;
  const std::string payload = body.dump(-1, ' ', false, json::error_handler_t::replace);

  auto parse = [&](const std::string& text) {
    const json j = json::parse(text, nullptr, false);
    if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() ||
        j["choices"].empty()) {
      throw EndpointError("malformed completion response: " + text.substr(0, 200), 200);
    }
    const auto& choice = j["choices"][0];
    if (choice.contains("message") && choice["message"].contains("content") &&
        choice["message"]["content"].is_string()) {
      out.text = choice["message"]["content"].get<std::string>();
    } else if (choice.contains("text") && choice["text"].is_string()) {
      out.text = choice["text"].get<std::string>();
    }
    out.finish_reason = detail::str_or(choice, "finish_reason", "");
    if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
        choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array()) {
      std::vector<double> lp;
      for (const auto& t : choice["logprobs"]["content"]) {
        const double v = t.value("logprob", 0.0);
        if (v > 0) throw InvariantViolation("endpoint returned a positive logprob");
        lp.push_back(v);
      }
      out.token_logprobs = std::move(lp);
    }
  };

  if (cache_ && ep.cache_responses) {
    const auto key = ResponseCache::make_key("gateway:" + ep.name, payload);
    bool fetched = false;
    const auto entry = cache_->get_or_fetch(key, [&] {
      fetched = true;
      auto w = post(ep, "chat/completions", payload, params.sample_id);
      out.request_seq = w.seq;
      out.latency_ms = w.latency_ms;
      return w.body;
    });
    out.from_cache = !fetched;
    parse(entry.payload);
    return out;
  }

  auto w = post(ep, "chat/completions", payload, params.sample_id);
  out.request_seq = w.seq;
  out.latency_ms = w.latency_ms;
  parse(w.body);
  return out;
}

std::vector<double> ModelGateway::score_completion(const EndpointConfig& ep,
                                                   const std::string& prompt,
                                                   const std::string& completion,
                                                   const std::string& sample_id) {
  if (!ep.supports_scoring) {
    throw UnsupportedCapability("endpoint " + ep.name + " does not support logprob scoring");
  }
  if (completion.empty()) return {};
  json body = {{"model", ep.model_id}, {"prompt", prompt + completion},
               {"max_tokens", 0},      {"echo", true},
               {"logprobs", 1},        {"temperature", 0.0}};
  auto w = post(ep, "completions", body.dump(-1, ' ', false, json::error_handler_t::replace),
                sample_id);
  const json j = json::parse(w.body, nullptr, false);
  if (!j.is_object() || !j.contains("choices") || j["choices"].empty() ||
      !j["choices"][0].contains("logprobs") || !j["choices"][0]["logprobs"].is_object()) {
    throw EndpointError("scoring response without logprobs", w.status);
  }
  const auto& lp = j["choices"][0]["logprobs"];
  const auto& tokens = lp.at("tokens");
  const auto& values = lp.at("token_logprobs");
  const auto& offsets = lp.at("text_offset");
  if (tokens.size() != values.size() || tokens.size() != offsets.size()) {
    throw EndpointError("scoring response has ragged logprob arrays", w.status);
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto off = offsets[i].get<std::size_t>();
    const auto len = tokens[i].get<std::string>().size();
    if (off + len <= prompt.size()) continue;
    if (values[i].is_null()) throw EndpointError("null logprob on a completion token", w.status);
    const double v = values[i].get<double>();
    if (v > 0) throw InvariantViolation("endpoint returned a positive logprob");
    out.push_back(v);
  }
  return out;
}

}  // namespace editprobe
