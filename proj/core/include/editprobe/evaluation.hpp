#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "editprobe/attacks.hpp"
#include "editprobe/error.hpp"
#include "editprobe/gateway.hpp"
#include "editprobe/mitigation.hpp"

namespace editprobe {

struct EvalRecord {
  std::string run_id;
  std::string fact_id;
  ContextKind context_kind = ContextKind::None;
  QueryKind query_kind = QueryKind::Direct;
  int variant = 0;
  std::string raw_output;
  std::string first_sentence;
  bool success = false;
  bool reversion = false;
  bool skipped = false;
  std::string skip_reason;
  /// Run-log sequence number of the measured request (0 when skipped).
  std::uint64_t request_seq = 0;
  /// Round-1 answer of a doubt cell.
  std::string first_round_output;
  std::string extraction;
  bool mitigation_applied = false;
  bool truncated = false;

  bool operator==(const EvalRecord&) const = default;

  Cell cell() const { return {context_kind, query_kind}; }
  std::string sample_id() const;
};

/// Metrics of one raw output against a fact.
EvalRecord score_output(const FactEdit& fact, const AttackPrompt& attack, std::string raw_output);

struct CellStats {
  std::int64_t n = 0;
  std::int64_t n_skipped = 0;
  std::int64_t successes = 0;
  std::int64_t reversions = 0;

  /// Percentages over non-skipped records; nullopt for an empty cell.
  std::optional<double> acc() const;
  std::optional<double> rev() const;

  bool operator==(const CellStats&) const = default;
};

struct EvalGrid {
  std::map<Cell, CellStats> cells;

  bool operator==(const EvalGrid&) const = default;
};

EvalGrid aggregate(const std::vector<EvalRecord>& records);

/// One decimal place, "--" when absent.
std::string format_percent(std::optional<double> v);

/// Rows follow `order`; cells of the grid missing from `order` are appended.
std::string grid_to_csv(const EvalGrid& grid, const std::vector<Cell>& order);
std::string grid_to_markdown(const EvalGrid& grid, const std::vector<Cell>& order);

/// Baseline vs mitigated accuracy and reversion with a difference column.
std::string comparison_to_markdown(const EvalGrid& baseline, const EvalGrid& mitigated,
                                   const std::vector<Cell>& order);

std::string record_to_json_line(const EvalRecord& r);
EvalRecord record_from_json_line(const std::string& line);
void write_records_jsonl(const std::filesystem::path& path, const std::vector<EvalRecord>& r);
/// A final line cut short by an interrupted writer is ignored with a warning.
std::vector<EvalRecord> read_records_jsonl(const std::filesystem::path& path);

/// The subject endpoint failed `hard_down_after` samples in a row.
class EndpointDown : public Error {
 public:
  explicit EndpointDown(const std::string& what) : Error(ErrorKind::Endpoint, what) {}
};

struct EvalConfig {
  std::string run_id = "run";
  int workers = 8;
  int hard_down_after = 5;
  MitigationConfig mitigation;
};

using FactLookup = std::function<const FactEdit&(const std::string& fact_id)>;

class EvalEngine {
 public:
  EvalEngine(ModelGateway& gateway, EndpointConfig subject, EvalConfig cfg);
  EvalEngine(const EvalEngine&) = delete;
  EvalEngine& operator=(const EvalEngine&) = delete;

  /// One attack through the subject (two rounds for doubt kinds). Throws
  /// RequestFailed when the endpoint stays unreachable.
  EvalRecord evaluate(const AttackPrompt& attack, const FactEdit& fact);

  /// All prompts must share one cell. Failed requests become skipped records.
  std::vector<EvalRecord> run_cell(const std::vector<AttackPrompt>& prompts,
                                   const FactLookup& facts);

  /// Evaluates every prompt, appending finished records to `checkpoint` as it
  /// goes. With `resume`, samples already in the checkpoint are not re-sent.
  /// Throws EndpointDown after `hard_down_after` consecutive failures; the
  /// checkpoint then holds only completed samples. Result order follows
  /// `prompts`.
  std::vector<EvalRecord> run(const std::vector<AttackPrompt>& prompts, const FactLookup& facts,
                              const std::optional<std::filesystem::path>& checkpoint = {},
                              bool resume = false);

  const EndpointConfig& subject() const { return subject_; }

 private:
  ModelGateway& gateway_;
  EndpointConfig subject_;
  EvalConfig cfg_;
  Mitigator mitigator_;
};

}  // namespace editprobe
