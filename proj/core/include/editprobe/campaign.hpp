#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "editprobe/attacks.hpp"
#include "editprobe/corpus.hpp"
#include "editprobe/gateway.hpp"
#include "editprobe/knowledge_sources.hpp"
#include "editprobe/mitigation.hpp"
#include "editprobe/popularity.hpp"

namespace editprobe {

class MockModelServer;
class MockKnowledgeServer;

/// Version string recorded in manifests.
const char* code_version();

struct RunConfig {
  std::string run_id = "run";
  std::filesystem::path run_dir = "runs/run";
  std::uint64_t seed = 0;

  Dataset dataset = Dataset::CounterFact;
  std::filesystem::path dataset_path;
  Split split = Split::Test;
  std::optional<std::size_t> limit;
  std::optional<std::filesystem::path> dialogues_path;
  ClipLengthRange clip_range;

  std::vector<EndpointConfig> endpoints;
  std::string subject;
  std::string rewriter;
  std::string simulator;
  /// Unedited model for the memory probe; the subject when empty.
  std::string memory;

  std::string cells = "all";
  AttackConfig attacks;
  int eval_workers = 8;
  int hard_down_after = 5;

  MitigationMode mitigation = MitigationMode::None;
  std::string extractor;
  bool fallback_to_self = false;

  KnowledgeConfig knowledge;
  CooccurrenceDirection direction = CooccurrenceDirection::Bidirectional;
  int popularity_workers = 4;
  int n_buckets = 5;
  BucketStrategy bucket_strategy = BucketStrategy::Quantile;

  ProbeMode probe_mode = ProbeMode::Icl;
  std::size_t icl_demos = 8;
  int probe_workers = 4;

  int dialogue_max_user_turns = 5;
  std::size_t dialogue_limit = 50;
  int dialogue_workers = 4;

  bool mock = false;
  std::optional<std::filesystem::path> mock_model_script;
  std::optional<std::filesystem::path> mock_knowledge_fixture;

  /// Relative paths resolve against `base_dir`. Throws ConfigError.
  static RunConfig from_json(const std::string& text, const std::filesystem::path& base_dir = ".");
  static RunConfig from_file(const std::filesystem::path& path);

  /// Effective configuration as JSON (API keys are never included).
  std::string to_json() const;
  void validate() const;

  const EndpointConfig& endpoint(const std::string& name) const;
  bool has_endpoint(const std::string& name) const;
};

/// Seed for one stage, forked from the root seed by stage name.
std::uint64_t stage_seed(std::uint64_t root, const std::string& stage);

struct StageRecord {
  std::string stage;
  std::string started_at;
  std::string finished_at;
  std::string config;  // JSON snapshot
  std::map<std::string, std::int64_t> counts;
  std::vector<std::string> warnings;
};

/// manifest.json of a run directory. Stage entries are appended and never
/// rewritten.
struct RunManifest {
  std::string run_id;
  std::string code_version;
  std::string created_at;
  /// Fixed scoring and prompt-construction rules the run was produced under.
  std::map<std::string, std::string> policies;
  std::vector<StageRecord> stages;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

/// Runs pipeline stages against one run directory. In mock mode, local mock
/// model and knowledge servers stand in for every remote endpoint.
class Campaign {
 public:
  explicit Campaign(RunConfig cfg);
  ~Campaign();
  Campaign(const Campaign&) = delete;
  Campaign& operator=(const Campaign&) = delete;

  StageRecord ingest();
  StageRecord build_attacks();
  StageRecord evaluate(bool resume);
  StageRecord popularity();
  StageRecord probe_memory();
  StageRecord probe_dialogue();
  StageRecord report();

  const RunConfig& config() const { return cfg_; }
  std::filesystem::path file(const std::string& name) const { return cfg_.run_dir / name; }
  /// records.jsonl for mode None, records.<mode>.jsonl otherwise.
  std::filesystem::path records_file(MitigationMode mode) const;
  ModelGateway& gateway() { return *gateway_; }

 private:
  std::filesystem::path require(const std::string& name) const;
  std::vector<FactEdit> load_facts() const;
  KnowledgeClient& knowledge();
  void finish(StageRecord& rec);

  RunConfig cfg_;
  std::unique_ptr<MockModelServer> mock_model_;
  std::unique_ptr<MockKnowledgeServer> mock_knowledge_;
  std::unique_ptr<ModelGateway> gateway_;
  std::unique_ptr<KnowledgeClient> knowledge_;
};

}  // namespace editprobe
