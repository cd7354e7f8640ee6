#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "editprobe/attacks.hpp"
#include "editprobe/corpus.hpp"
#include "editprobe/dialogue_prober.hpp"
#include "editprobe/evaluation.hpp"
#include "editprobe/popularity.hpp"

namespace editprobe {

/// Spearman between per-fact ICL correctness and each popularity measure,
/// within one relation. Absent when undefined (constant side or n < 2).
struct RelationCorrelation {
  std::string relation;
  std::size_t n = 0;
  std::map<Measure, std::optional<double>> rho;

  /// Some measure correlates negatively with ICL correctness. Such relations
  /// are flagged in reports but kept in every aggregate.
  bool negative_outlier() const;
};

std::vector<RelationCorrelation> spearman_by_relation(const std::vector<FactEdit>& facts,
                                                      const std::vector<PopularityScores>& scores,
                                                      const std::vector<MemoryProbe>& probes);

/// One popularity bucket with the grid restricted to its member facts.
struct BucketRow {
  Measure measure = Measure::Frequency;
  Bucket bucket;
  std::optional<double> icl_acc;
  std::map<Cell, CellStats> cells;
};

std::vector<BucketRow> bucket_series(const std::vector<PopularityScores>& scores,
                                     const std::vector<MemoryProbe>& probes,
                                     const std::vector<EvalRecord>& records, int n_buckets,
                                     BucketStrategy strategy);

/// measure,bucket,lower,upper,n,icl_acc then one "<cell> acc" column per cell.
std::string bucket_series_csv(const std::vector<BucketRow>& rows, const std::vector<Cell>& cells);

struct ReportInputs {
  std::string run_id;
  std::vector<FactEdit> facts;
  std::vector<EvalRecord> records;
  /// Mitigated runs keyed by mode name.
  std::map<std::string, std::vector<EvalRecord>> mitigated;
  std::optional<std::vector<PopularityScores>> scores;
  std::optional<std::vector<MemoryProbe>> probes;
  std::optional<std::vector<DialogueTranscript>> transcripts;
  /// Annotation sheet text, possibly with human columns filled.
  std::optional<std::string> sheet_csv;
  int n_buckets = 5;
  BucketStrategy strategy = BucketStrategy::Quantile;
};

/// Cells present in `records`, in standard grid order, then any others.
std::vector<Cell> cells_in(const std::vector<EvalRecord>& records);

/// Markdown report. Sections whose inputs are missing say so instead of
/// being dropped.
std::string render_report(const ReportInputs& in);

}  // namespace editprobe
