#include "editprobe/campaign.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <set>
#include <thread>

#include "editprobe/attacks.hpp"
#include "editprobe/dialogue_prober.hpp"
#include "editprobe/error.hpp"
#include "editprobe/evaluation.hpp"
#include "editprobe/hash.hpp"
#include "editprobe/knowledge_mock.hpp"
#include "editprobe/metrics.hpp"
#include "editprobe/mock_server.hpp"
#include "editprobe/report.hpp"
#include "editprobe/rng.hpp"
#include "editprobe/templates.hpp"
#include "editprobe/text.hpp"
#include "json_io.hpp"

#ifndef EDITPROBE_VERSION
#define EDITPROBE_VERSION "unknown"
#endif

namespace editprobe {

namespace fs = std::filesystem;
using detail::json;

const char* code_version() { return EDITPROBE_VERSION; }

std::uint64_t stage_seed(std::uint64_t root, const std::string& stage) {
  return derive_seed(root, "stage:" + stage);
}

namespace {

std::string now_utc() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}",
                     std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()));
}

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) ==
        allowed.end()) {
      throw ConfigError(fmt::format("unknown key '{}' in {}", key, where));
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() ? p : base / p;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::All: return "all";
    case Split::Test: return "test";
    case Split::Train: return "train";
  }
  return "all";
}

Split split_from_string(const std::string& s) {
  for (auto v : {Split::All, Split::Test, Split::Train}) {
    if (s == split_name(v)) return v;
  }
  throw ConfigError("unknown split: " + s);
}

EndpointConfig endpoint_from_json(const json& j) {
  check_keys(j, "endpoint",
             {"name", "base_url", "model_id", "role", "max_tokens", "temperature", "timeout_ms",
              "max_parallel", "format", "supports_scoring", "context_chars", "api_key_env",
              "max_retries", "backoff_ms", "max_backoff_ms", "cache_responses"});
  EndpointConfig ep;
  read(j, "name", ep.name);
  read(j, "base_url", ep.base_url);
  read(j, "model_id", ep.model_id);
  if (j.contains("role")) ep.role = endpoint_role_from_string(j["role"].get<std::string>());
  // Simulated users should vary; measured endpoints stay greedy.
  if (ep.role == EndpointRole::Simulator) ep.temperature = 0.7;
  read(j, "max_tokens", ep.max_tokens);
  read(j, "temperature", ep.temperature);
  if (j.contains("timeout_ms")) ep.timeout = std::chrono::milliseconds(j["timeout_ms"].get<long>());
  read(j, "max_parallel", ep.max_parallel);
  if (j.contains("format")) ep.format = prompt_format_from_string(j["format"].get<std::string>());
  read(j, "supports_scoring", ep.supports_scoring);
  if (j.contains("context_chars")) ep.context_chars = j["context_chars"].get<std::size_t>();
  read(j, "api_key_env", ep.api_key_env);
  read(j, "max_retries", ep.retry.max_retries);
  if (j.contains("backoff_ms")) ep.retry.base_backoff = std::chrono::milliseconds(j["backoff_ms"].get<long>());
  if (j.contains("max_backoff_ms")) {
    ep.retry.max_backoff = std::chrono::milliseconds(j["max_backoff_ms"].get<long>());
  }
  read(j, "cache_responses", ep.cache_responses);
  if (ep.name.empty()) throw ConfigError("endpoint without a name");
  return ep;
}

json endpoint_to_json(const EndpointConfig& ep) {
  json j = {{"name", ep.name},
            {"base_url", ep.base_url},
            {"model_id", ep.model_id},
            {"role", to_string(ep.role)},
            {"max_tokens", ep.max_tokens},
            {"temperature", ep.temperature},
            {"timeout_ms", ep.timeout.count()},
            {"max_parallel", ep.max_parallel},
            {"format", to_string(ep.format)},
            {"supports_scoring", ep.supports_scoring},
            {"api_key_env", ep.api_key_env},
            {"max_retries", ep.retry.max_retries},
            {"backoff_ms", ep.retry.base_backoff.count()},
            {"max_backoff_ms", ep.retry.max_backoff.count()},
            {"cache_responses", ep.cache_responses}};
  if (ep.context_chars) j["context_chars"] = *ep.context_chars;
  return j;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
/// is rethrown after all threads stop.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    const auto count = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1,
                                                std::max<std::size_t>(n, 1));
    for (std::size_t w = 0; w < count; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!error) error = std::current_exception();
            failed = true;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

std::string mode_suffix(MitigationMode m) { return text::ascii_lower(to_string(m)); }

}  // namespace

RunConfig RunConfig::from_json(const std::string& text, const fs::path& base_dir) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON");
  check_keys(j, "config",
             {"run_id", "run_dir", "seed", "dataset", "dialogues", "endpoints", "roles", "cells",
              "attacks", "evaluation", "mitigation", "knowledge", "popularity", "memory_probe",
              "dialogue_probe", "mock"});
  RunConfig c;
  try {
    read(j, "run_id", c.run_id);
    c.run_dir = "runs/" + c.run_id;
    if (j.contains("run_dir")) c.run_dir = j["run_dir"].get<std::string>();
    c.run_dir = resolve(base_dir, c.run_dir);
    read(j, "seed", c.seed);

    if (const auto it = j.find("dataset"); it != j.end()) {
      check_keys(*it, "dataset", {"kind", "path", "split", "limit"});
      if (it->contains("kind")) c.dataset = dataset_from_string((*it)["kind"].get<std::string>());
      if (it->contains("path")) c.dataset_path = resolve(base_dir, (*it)["path"].get<std::string>());
      if (it->contains("split")) c.split = split_from_string((*it)["split"].get<std::string>());
      if (it->contains("limit") && !(*it)["limit"].is_null()) c.limit = (*it)["limit"].get<std::size_t>();
    }
    if (const auto it = j.find("dialogues"); it != j.end()) {
      check_keys(*it, "dialogues", {"path", "min_turns", "max_turns"});
      if (it->contains("path") && !(*it)["path"].is_null()) c.dialogues_path = resolve(base_dir, (*it)["path"].get<std::string>());
      read(*it, "min_turns", c.clip_range.min_turns);
      read(*it, "max_turns", c.clip_range.max_turns);
    }
    for (const auto& e : j.value("endpoints", json::array())) {
      c.endpoints.push_back(endpoint_from_json(e));
    }
    if (const auto it = j.find("roles"); it != j.end()) {
      check_keys(*it, "roles", {"subject", "rewriter", "simulator", "memory"});
      read(*it, "subject", c.subject);
      read(*it, "rewriter", c.rewriter);
      read(*it, "simulator", c.simulator);
      read(*it, "memory", c.memory);
    }
    read(j, "cells", c.cells);
    if (const auto it = j.find("attacks"); it != j.end()) {
      check_keys(*it, "attacks",
                 {"context_words", "profile_fetch_words", "rewriter_candidates",
                  "rewriter_retries", "workers"});
      read(*it, "context_words", c.attacks.context_words);
      read(*it, "profile_fetch_words", c.attacks.profile_fetch_words);
      read(*it, "rewriter_candidates", c.attacks.rewriter_candidates);
      read(*it, "rewriter_retries", c.attacks.rewriter_retries);
      read(*it, "workers", c.attacks.workers);
    }
    if (const auto it = j.find("evaluation"); it != j.end()) {
      check_keys(*it, "evaluation", {"workers", "hard_down_after"});
      read(*it, "workers", c.eval_workers);
      read(*it, "hard_down_after", c.hard_down_after);
    }
    if (const auto it = j.find("mitigation"); it != j.end()) {
      check_keys(*it, "mitigation", {"mode", "extractor", "fallback_to_self"});
      if (it->contains("mode")) c.mitigation = mitigation_mode_from_string((*it)["mode"].get<std::string>());
      read(*it, "extractor", c.extractor);
      read(*it, "fallback_to_self", c.fallback_to_self);
    }
    if (const auto it = j.find("knowledge"); it != j.end()) {
      check_keys(*it, "knowledge",
                 {"wikipedia_url", "pageviews_url", "wikidata_url", "sparql_url", "cache_dir",
                  "cache_ttl_s", "requests_per_second", "pageview_month", "qid_overrides",
                  "user_agent", "timeout_ms", "max_retries"});
      auto& k = c.knowledge;
      read(*it, "wikipedia_url", k.wikipedia_url);
      read(*it, "pageviews_url", k.pageviews_url);
      read(*it, "wikidata_url", k.wikidata_url);
      read(*it, "sparql_url", k.sparql_url);
      if (it->contains("cache_dir")) k.cache_dir = (*it)["cache_dir"].get<std::string>();
      if (it->contains("cache_ttl_s")) k.cache_ttl = std::chrono::seconds((*it)["cache_ttl_s"].get<long>());
      read(*it, "requests_per_second", k.requests_per_second);
      if (it->contains("pageview_month")) {
        k.pageview_month = YearMonth::parse((*it)["pageview_month"].get<std::string>());
      }
      read(*it, "qid_overrides", k.qid_overrides);
      read(*it, "user_agent", k.user_agent);
      if (it->contains("timeout_ms")) k.timeout = std::chrono::milliseconds((*it)["timeout_ms"].get<long>());
      read(*it, "max_retries", k.retry.max_retries);
    }
    c.knowledge.cache_dir = resolve(base_dir, c.knowledge.cache_dir);
    if (const auto it = j.find("popularity"); it != j.end()) {
      check_keys(*it, "popularity", {"direction", "workers", "buckets", "strategy"});
      if (it->contains("direction")) c.direction = direction_from_string((*it)["direction"].get<std::string>());
      read(*it, "workers", c.popularity_workers);
      read(*it, "buckets", c.n_buckets);
      if (it->contains("strategy")) {
        c.bucket_strategy = bucket_strategy_from_string((*it)["strategy"].get<std::string>());
      }
    }
    if (const auto it = j.find("memory_probe"); it != j.end()) {
      check_keys(*it, "memory_probe", {"mode", "demos", "workers"});
      if (it->contains("mode")) {
        const auto m = (*it)["mode"].get<std::string>();
        if (m != "icl" && m != "direct") throw ConfigError("unknown memory probe mode: " + m);
        c.probe_mode = m == "icl" ? ProbeMode::Icl : ProbeMode::Direct;
      }
      read(*it, "demos", c.icl_demos);
      read(*it, "workers", c.probe_workers);
    }
    if (const auto it = j.find("dialogue_probe"); it != j.end()) {
      check_keys(*it, "dialogue_probe", {"max_user_turns", "limit", "workers"});
      read(*it, "max_user_turns", c.dialogue_max_user_turns);
      read(*it, "limit", c.dialogue_limit);
      read(*it, "workers", c.dialogue_workers);
    }
    if (const auto it = j.find("mock"); it != j.end()) {
      check_keys(*it, "mock", {"enabled", "model_script", "knowledge_fixture"});
      read(*it, "enabled", c.mock);
      if (it->contains("model_script")) {
        c.mock_model_script = resolve(base_dir, (*it)["model_script"].get<std::string>());
      }
      if (it->contains("knowledge_fixture")) {
        c.mock_knowledge_fixture = resolve(base_dir, (*it)["knowledge_fixture"].get<std::string>());
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::from_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return from_json(detail::read_file(path), path.parent_path());
}

std::string RunConfig::to_json() const {
  json eps = json::array();
  for (const auto& e : endpoints) eps.push_back(endpoint_to_json(e));
  json j = {
      {"run_id", run_id},
      {"run_dir", run_dir.string()},
      {"seed", seed},
      {"dataset",
       {{"kind", editprobe::to_string(dataset)},
        {"path", dataset_path.string()},
        {"split", split_name(split)},
        {"limit", limit ? json(*limit) : json(nullptr)}}},
      {"dialogues",
       {{"path", dialogues_path ? json(dialogues_path->string()) : json(nullptr)},
        {"min_turns", clip_range.min_turns},
        {"max_turns", clip_range.max_turns}}},
      {"endpoints", eps},
      {"roles", {{"subject", subject}, {"rewriter", rewriter}, {"simulator", simulator}, {"memory", memory}}},
      {"cells", cells},
      {"attacks",
       {{"context_words", attacks.context_words},
        {"profile_fetch_words", attacks.profile_fetch_words},
        {"rewriter_candidates", attacks.rewriter_candidates},
        {"rewriter_retries", attacks.rewriter_retries},
        {"workers", attacks.workers}}},
      {"evaluation", {{"workers", eval_workers}, {"hard_down_after", hard_down_after}}},
      {"mitigation",
       {{"mode", editprobe::to_string(mitigation)},
        {"extractor", extractor},
        {"fallback_to_self", fallback_to_self}}},
      {"knowledge",
       {{"wikipedia_url", knowledge.wikipedia_url},
        {"pageviews_url", knowledge.pageviews_url},
        {"wikidata_url", knowledge.wikidata_url},
        {"sparql_url", knowledge.sparql_url},
        {"cache_dir", knowledge.cache_dir.string()},
        {"requests_per_second", knowledge.requests_per_second},
        {"pageview_month", knowledge.pageview_month.to_string()},
        {"qid_overrides", knowledge.qid_overrides}}},
      {"popularity",
       {{"direction", editprobe::to_string(direction)},
        {"workers", popularity_workers},
        {"buckets", n_buckets},
        {"strategy", editprobe::to_string(bucket_strategy)}}},
      {"memory_probe",
       {{"mode", probe_mode == ProbeMode::Icl ? "icl" : "direct"},
        {"demos", icl_demos},
        {"workers", probe_workers}}},
      {"dialogue_probe",
       {{"max_user_turns", dialogue_max_user_turns},
        {"limit", dialogue_limit},
        {"workers", dialogue_workers}}},
      {"mock", {{"enabled", mock}}}};
  return j.dump(2);
}

void RunConfig::validate() const {
  if (run_id.empty()) throw ConfigError("run_id is empty");
  std::set<std::string> names;
  for (const auto& e : endpoints) {
    e.validate();
    if (!names.insert(e.name).second) throw ConfigError("duplicate endpoint name: " + e.name);
  }
  for (const auto* role : {&subject, &rewriter, &simulator, &memory, &extractor}) {
    if (!role->empty() && !names.contains(*role)) {
      throw ConfigError("role refers to unknown endpoint: " + *role);
    }
  }
  if (mitigation == MitigationMode::DisentangleExternal && extractor.empty()) {
    throw ConfigError("mitigation DisentangleExternal needs an extractor endpoint");
  }
  if (n_buckets < 1) throw ConfigError("popularity.buckets must be >= 1");
  if (dialogue_max_user_turns < 1 || dialogue_max_user_turns > 5) {
    throw ConfigError("dialogue_probe.max_user_turns must be in [1, 5]");
  }
  if (clip_range.min_turns < 2 || clip_range.max_turns < clip_range.min_turns) {
    throw ConfigError("dialogues: need 2 <= min_turns <= max_turns");
  }
  if (hard_down_after < 1) throw ConfigError("evaluation.hard_down_after must be >= 1");
  if (mock && !mock_model_script) throw ConfigError("mock mode needs mock.model_script");
}

const EndpointConfig& RunConfig::endpoint(const std::string& name) const {
  for (const auto& e : endpoints) {
    if (e.name == name) return e;
  }
  throw ConfigError(name.empty() ? "no endpoint assigned to this role" : "unknown endpoint: " + name);
}

bool RunConfig::has_endpoint(const std::string& name) const {
  return std::any_of(endpoints.begin(), endpoints.end(), [&](const auto& e) { return e.name == name; });
}

std::string RunManifest::to_json() const {
  json stages_j = json::array();
  for (const auto& s : stages) {
    stages_j.push_back({{"stage", s.stage},
                        {"started_at", s.started_at},
                        {"finished_at", s.finished_at},
                        {"config", json::parse(s.config)},
                        {"counts", s.counts},
                        {"warnings", s.warnings}});
  }
  json j = {{"run_id", run_id},
            {"code_version", code_version},
            {"created_at", created_at},
            {"policies", policies},
            {"stages", stages_j}};
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw IoError("manifest.json is not valid JSON");
  RunManifest m;
  m.run_id = j.value("run_id", std::string{});
  m.code_version = j.value("code_version", std::string{});
  m.created_at = j.value("created_at", std::string{});
  m.policies = j.value("policies", std::map<std::string, std::string>{});
  for (const auto& s : j.value("stages", json::array())) {
    StageRecord r;
    r.stage = s.value("stage", std::string{});
    r.started_at = s.value("started_at", std::string{});
    r.finished_at = s.value("finished_at", std::string{});
    r.config = s.value("config", json::object()).dump(2);
    r.counts = s.value("counts", std::map<std::string, std::int64_t>{});
    r.warnings = s.value("warnings", std::vector<std::string>{});
    m.stages.push_back(std::move(r));
  }
  return m;
}

Campaign::Campaign(RunConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.mock) {
    mock_model_ = std::make_unique<MockModelServer>(MockScript::from_file(*cfg_.mock_model_script));
    mock_model_->start();
    for (auto& e : cfg_.endpoints) e.base_url = mock_model_->base_url();
    if (cfg_.mock_knowledge_fixture) {
      mock_knowledge_ = std::make_unique<MockKnowledgeServer>(
          KnowledgeFixture::from_file(*cfg_.mock_knowledge_fixture));
      mock_knowledge_->start();
      const auto url = mock_knowledge_->base_url();
      cfg_.knowledge.wikipedia_url = cfg_.knowledge.pageviews_url = url;
      cfg_.knowledge.wikidata_url = cfg_.knowledge.sparql_url = url;
      cfg_.knowledge.requests_per_second = 1000;
    }
    spdlog::info("mock mode: model server at {}", mock_model_->base_url());
  }
  fs::create_directories(cfg_.run_dir);
  auto cache = std::make_shared<ResponseCache>(cfg_.knowledge.cache_dir / "responses");
  gateway_ = std::make_unique<ModelGateway>(std::make_shared<RunLog>(file("requests.jsonl")),
                                            nullptr, std::move(cache));
}

Campaign::~Campaign() {
  if (mock_model_) mock_model_->stop();
  if (mock_knowledge_) mock_knowledge_->stop();
}

fs::path Campaign::records_file(MitigationMode mode) const {
  return mode == MitigationMode::None ? file("records.jsonl")
                                      : file("records." + mode_suffix(mode) + ".jsonl");
}

fs::path Campaign::require(const std::string& name) const {
  const auto p = file(name);
  if (!fs::exists(p)) {
    throw ConfigError(fmt::format("missing prerequisite {}; run the stage that produces it first",
                                  p.string()));
  }
  return p;
}

std::vector<FactEdit> Campaign::load_facts() const {
  return read_facts_jsonl(require("facts.jsonl"));
}

KnowledgeClient& Campaign::knowledge() {
  if (!knowledge_) knowledge_ = std::make_unique<KnowledgeClient>(cfg_.knowledge);
  return *knowledge_;
}

void Campaign::finish(StageRecord& rec) {
  rec.finished_at = now_utc();
  rec.config = cfg_.to_json();
  const auto path = file("manifest.json");
  RunManifest m;
  if (fs::exists(path)) {
    m = RunManifest::from_json(detail::read_file(path));
    if (m.run_id != cfg_.run_id) {
      throw ConfigError(fmt::format("{} belongs to run '{}', not '{}'", path.string(), m.run_id,
                                    cfg_.run_id));
    }
  } else {
    m.run_id = cfg_.run_id;
    m.code_version = code_version();
    m.created_at = rec.started_at;
    m.policies = {{"negation_markers", std::string(kNegationMarkerVersion)},
                  {"reversion_scoring", "first_sentence,truncate_negations,normalize"},
                  {"noise_separator", std::string(kNoiseSeparator)},
                  {"blank_marker", std::string(templates::kBlankMarker)},
                  {"cloze_prefix", std::string(templates::kClozePrefix)}};
  }
  m.stages.push_back(rec);
  detail::write_file(path, m.to_json());
  for (const auto& w : rec.warnings) spdlog::warn("{}: {}", rec.stage, w);
}

StageRecord Campaign::ingest() {
  StageRecord rec{"ingest", now_utc(), {}, {}, {}, {}};
  if (cfg_.dataset_path.empty()) throw ConfigError("dataset.path is not set");
  if (!fs::exists(cfg_.dataset_path)) {
    throw ConfigError("dataset file not found: " + cfg_.dataset_path.string());
  }
  auto loaded = load_dataset(cfg_.dataset, cfg_.dataset_path, {cfg_.split});
  if (cfg_.limit && loaded.facts.size() > *cfg_.limit) loaded.facts.resize(*cfg_.limit);
  for (const auto& issue : loaded.issues) {
    rec.warnings.push_back(fmt::format("record {}: {}", issue.record_index, issue.message));
  }
  for (auto& w : loaded.warnings) rec.warnings.push_back(std::move(w));
  if (loaded.facts.empty()) rec.warnings.push_back("dataset yielded no facts");
  write_facts_jsonl(file("facts.jsonl"), loaded.facts);
  rec.counts["facts"] = static_cast<std::int64_t>(loaded.facts.size());
  rec.counts["issues"] = static_cast<std::int64_t>(loaded.issues.size());
  if (cfg_.dialogues_path) {
    const auto clips =
        load_dialogue_clips(*cfg_.dialogues_path, cfg_.clip_range, stage_seed(cfg_.seed, "ingest"));
    write_clips_jsonl(file("clips.jsonl"), clips);
    rec.counts["clips"] = static_cast<std::int64_t>(clips.size());
  }
  finish(rec);
  return rec;
}

StageRecord Campaign::build_attacks() {
  StageRecord rec{"build-attacks", now_utc(), {}, {}, {}, {}};
  auto facts = load_facts();
  std::vector<DialogueClip> clips;
  if (fs::exists(file("clips.jsonl"))) clips = read_clips_jsonl(file("clips.jsonl"));
  const auto cells = parse_cells(cfg_.cells);
  const bool needs_rewriter = std::any_of(cells.begin(), cells.end(), [](const Cell& c) {
    return is_dialogue(c.context) || c.query == QueryKind::Cloze || c.query == QueryKind::Reference;
  });
  const EndpointConfig* rewriter = nullptr;
  if (!cfg_.rewriter.empty()) {
    rewriter = &cfg_.endpoint(cfg_.rewriter);
  } else if (needs_rewriter) {
    throw ConfigError("cells " + cfg_.cells + " need a rewriter endpoint (roles.rewriter)");
  }
  if (facts.empty()) rec.warnings.push_back("no facts; attack set is empty");
  ProfileProvider profiles = [this](const std::string& subject) {
    return knowledge().fetch_profile(subject, cfg_.attacks.profile_fetch_words);
  };
  AttackBuilder builder(cfg_.attacks, facts, std::move(clips), profiles, gateway_.get(), rewriter,
                        stage_seed(cfg_.seed, "build-attacks"));
  const auto attacks = builder.build_all(cells);
  write_attacks_jsonl(file("attacks.jsonl"), attacks);
  std::int64_t skipped = 0;
  std::map<std::string, std::int64_t> reasons;
  for (const auto& a : attacks) {
    if (!a.skip_reason) continue;
    ++skipped;
    ++reasons[a.skip_reason->substr(0, a.skip_reason->find(':'))];
  }
  rec.counts["attacks"] = static_cast<std::int64_t>(attacks.size());
  rec.counts["skipped"] = skipped;
  rec.counts["cells"] = static_cast<std::int64_t>(cells.size());
  for (const auto& [reason, n] : reasons) rec.warnings.push_back(fmt::format("{} skipped: {}", n, reason));
  finish(rec);
  return rec;
}

StageRecord Campaign::evaluate(bool resume) {
  StageRecord rec{"evaluate", now_utc(), {}, {}, {}, {}};
  const auto facts = load_facts();
  const auto attacks = read_attacks_jsonl(require("attacks.jsonl"));
  std::map<std::string, const FactEdit*> by_id;
  for (const auto& f : facts) by_id[f.id] = &f;
  const FactLookup lookup = [&](const std::string& id) -> const FactEdit& {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw InvariantViolation("attack refers to unknown fact " + id);
    return *it->second;
  };
  EvalConfig ec;
  ec.run_id = cfg_.run_id;
  ec.workers = cfg_.eval_workers;
  ec.hard_down_after = cfg_.hard_down_after;
  ec.mitigation.mode = cfg_.mitigation;
  ec.mitigation.fallback_to_self = cfg_.fallback_to_self;
  if (!cfg_.extractor.empty()) ec.mitigation.extractor = cfg_.endpoint(cfg_.extractor);
  EvalEngine engine(*gateway_, cfg_.endpoint(cfg_.subject), ec);
  const auto checkpoint = records_file(cfg_.mitigation);
  const auto records = engine.run(attacks, lookup, checkpoint, resume);

  const auto cells = cells_in(records);
  const auto grid = aggregate(records);
  const auto suffix = cfg_.mitigation == MitigationMode::None ? "" : "." + mode_suffix(cfg_.mitigation);
  detail::write_file(file("grid" + suffix + ".csv"), grid_to_csv(grid, cells));
  detail::write_file(file("grid" + suffix + ".md"), grid_to_markdown(grid, cells));
  std::int64_t skipped = 0;
  for (const auto& r : records) skipped += r.skipped;
  rec.counts["records"] = static_cast<std::int64_t>(records.size());
  rec.counts["skipped"] = skipped;
  rec.counts["requests"] = static_cast<std::int64_t>(gateway_->log().size());
  finish(rec);
  return rec;
}

StageRecord Campaign::popularity() {
  StageRecord rec{"popularity", now_utc(), {}, {}, {}, {}};
  const auto facts = load_facts();
  std::vector<std::string> skipped;
  const auto scores = score_facts(knowledge(), facts, cfg_.direction, cfg_.popularity_workers, &skipped);
  detail::write_file(file("scores.csv"), scores_to_csv(scores));
  rec.counts["scored"] = static_cast<std::int64_t>(scores.size());
  rec.counts["skipped"] = static_cast<std::int64_t>(skipped.size());
  rec.counts["network_calls"] = static_cast<std::int64_t>(knowledge().network_calls());
  if (!skipped.empty()) {
    rec.warnings.push_back(fmt::format("no popularity component for {} facts", skipped.size()));
  }
  finish(rec);
  return rec;
}

StageRecord Campaign::probe_memory() {
  StageRecord rec{"probe-memory", now_utc(), {}, {}, {}, {}};
  const auto facts = load_facts();
  const auto& ep = cfg_.endpoint(cfg_.memory.empty() ? cfg_.subject : cfg_.memory);
  const auto seed = stage_seed(cfg_.seed, "probe-memory");
  // Demonstrations come from the train split; small files with no train
  // records fall back to the probed facts themselves.
  std::vector<FactEdit> demo_pool;
  if (cfg_.probe_mode == ProbeMode::Icl) {
    if (fs::exists(cfg_.dataset_path)) {
      demo_pool = load_dataset(cfg_.dataset, cfg_.dataset_path, {Split::Train}).facts;
    }
    if (demo_pool.empty()) {
      rec.warnings.push_back("train split is empty; ICL demonstrations drawn from the probed facts");
      demo_pool = facts;
    }
    rec.counts["demo_pool"] = static_cast<std::int64_t>(demo_pool.size());
  }
  std::vector<std::optional<MemoryProbe>> slots(facts.size());
  std::atomic<std::int64_t> failed{0};
  parallel_for(facts.size(), cfg_.probe_workers, [&](std::size_t i) {
    const auto& f = facts[i];
    try {
      const auto demos = cfg_.probe_mode == ProbeMode::Icl
                             ? select_demos(demo_pool, f, cfg_.icl_demos, derive_seed(seed, "demos:" + f.id))
                             : std::vector<FactEdit>{};
      slots[i] = memory_probe(*gateway_, ep, f, cfg_.probe_mode, demos);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::RequestFailed && e.kind() != ErrorKind::Endpoint) throw;
      spdlog::warn("memory probe {} failed: {}", f.id, e.what());
      ++failed;
    }
  });
  std::vector<MemoryProbe> probes;
  for (auto& s : slots) {
    if (s) probes.push_back(std::move(*s));
  }
  detail::write_file(file("probes.csv"), probes_to_csv(probes));
  rec.counts["probes"] = static_cast<std::int64_t>(probes.size());
  rec.counts["failed"] = failed;
  if (failed) rec.warnings.push_back(fmt::format("{} memory probes failed", failed.load()));
  finish(rec);
  return rec;
}

StageRecord Campaign::probe_dialogue() {
  StageRecord rec{"probe-dialogue", now_utc(), {}, {}, {}, {}};
  auto facts = load_facts();
  if (facts.size() > cfg_.dialogue_limit) facts.resize(cfg_.dialogue_limit);
  const auto& sim = cfg_.endpoint(cfg_.simulator);
  const auto& subject = cfg_.endpoint(cfg_.subject);
  std::vector<DialogueTranscript> transcripts(facts.size());
  parallel_for(facts.size(), cfg_.dialogue_workers, [&](std::size_t i) {
    transcripts[i] = run_probe(*gateway_, sim, subject, facts[i], cfg_.dialogue_max_user_turns);
  });
  write_transcripts_jsonl(file("transcripts.jsonl"), transcripts);
  std::map<std::string, FactEdit> by_id;
  for (const auto& f : facts) by_id[f.id] = f;
  detail::write_file(file("sheet.csv"), annotation_sheet_csv(transcripts, by_id));
  std::int64_t errors = 0;
  for (const auto& t : transcripts) {
    errors += !t.error.empty();
    ++rec.counts[std::string("verdict_") + to_string(t.verdict)];
  }
  rec.counts["transcripts"] = static_cast<std::int64_t>(transcripts.size());
  rec.counts["errors"] = errors;
  finish(rec);
  return rec;
}

StageRecord Campaign::report() {
  StageRecord rec{"report", now_utc(), {}, {}, {}, {}};
  ReportInputs in;
  in.run_id = cfg_.run_id;
  in.facts = load_facts();
  in.records = read_records_jsonl(require("records.jsonl"));
  for (auto m : {MitigationMode::Disentangle, MitigationMode::DisentangleExternal,
                 MitigationMode::PronounResolve}) {
    if (fs::exists(records_file(m))) in.mitigated[to_string(m)] = read_records_jsonl(records_file(m));
  }
  if (fs::exists(file("scores.csv"))) in.scores = scores_from_csv(detail::read_file(file("scores.csv")));
  if (fs::exists(file("probes.csv"))) in.probes = probes_from_csv(detail::read_file(file("probes.csv")));
  if (fs::exists(file("transcripts.jsonl"))) in.transcripts = read_transcripts_jsonl(file("transcripts.jsonl"));
  if (fs::exists(file("sheet.csv"))) in.sheet_csv = detail::read_file(file("sheet.csv"));
  in.n_buckets = cfg_.n_buckets;
  in.strategy = cfg_.bucket_strategy;

  std::string md = render_report(in);
  const auto manifest = file("manifest.json");
  if (fs::exists(manifest)) {
    md += fmt::format("Manifest: manifest.json (sha256 {})\n",
                      sha256_hex(detail::read_file(manifest)).substr(0, 16));
  }
  detail::write_file(file("report.md"), md);
  if (in.scores) {
    const auto cells = cells_in(in.records);
    const std::vector<MemoryProbe> none;
    const auto rows = bucket_series(*in.scores, in.probes ? *in.probes : none, in.records,
                                    in.n_buckets, in.strategy);
    detail::write_file(file("buckets.csv"), bucket_series_csv(rows, cells));
    rec.counts["bucket_rows"] = static_cast<std::int64_t>(rows.size());
    if (in.probes) {
      std::string csv = "relation,n,frequency,connection,cooccurrence,negative_outlier\n";
      for (const auto& rc : spearman_by_relation(in.facts, *in.scores, *in.probes)) {
        csv += text::csv_escape(rc.relation) + "," + std::to_string(rc.n);
        for (auto m : {Measure::Frequency, Measure::Connection, Measure::Cooccurrence}) {
          const auto v = rc.rho.at(m);
          csv += "," + (v ? fmt::format("{}", *v) : std::string{});
        }
        csv += rc.negative_outlier() ? ",1\n" : ",0\n";
      }
      detail::write_file(file("spearman.csv"), csv);
    }
  }
  rec.counts["records"] = static_cast<std::int64_t>(in.records.size());
  finish(rec);
  return rec;
}

}  // namespace editprobe
