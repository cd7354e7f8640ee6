#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "editprobe/corpus.hpp"
#include "editprobe/gateway.hpp"
#include "editprobe/knowledge_sources.hpp"

namespace editprobe {

struct PopularityScores {
  std::string fact_id;
  std::optional<std::int64_t> frequency;
  std::optional<std::int64_t> connection;
  std::optional<std::int64_t> cooccurrence;
  CooccurrenceDirection direction_used = CooccurrenceDirection::Bidirectional;

  bool operator==(const PopularityScores&) const = default;
};

enum class Measure { Frequency, Connection, Cooccurrence };

const char* to_string(Measure m);
Measure measure_from_string(const std::string& s);
std::optional<std::int64_t> measure_value(const PopularityScores& s, Measure m);

/// Pageviews of the subject, edge count of the subject QID, and two-hop paths
/// between subject and original-object QIDs. Components that cannot be
/// resolved stay absent; if all three are absent throws
/// Unavailable("ScoreUnavailable").
PopularityScores score_fact(KnowledgeClient& client, const FactEdit& fact,
                            CooccurrenceDirection direction = CooccurrenceDirection::Bidirectional);

/// score_fact over all facts with `workers` threads, in input order. Facts
/// with no resolvable component are left out and reported through `skipped`.
std::vector<PopularityScores> score_facts(KnowledgeClient& client,
                                          const std::vector<FactEdit>& facts,
                                          CooccurrenceDirection direction, int workers,
                                          std::vector<std::string>* skipped = nullptr);

/// exp(-mean(logprobs)). Throws PreconditionError on an empty vector.
double perplexity_from_logprobs(std::span<const double> logprobs);

/// Perplexity of `answer` as a completion of `prompt`. A space is inserted
/// between them when neither side supplies one.
double perplexity(ModelGateway& gateway, const EndpointConfig& ep, const std::string& prompt,
                  const std::string& answer);

enum class ProbeMode { Direct, Icl };

struct MemoryProbe {
  std::string fact_id;
  std::optional<double> ppl_original;
  std::optional<double> ppl_target;
  std::optional<double> log_ppl_diff;
  std::optional<bool> icl_correct;
  std::string icl_output;

  bool operator==(const MemoryProbe&) const = default;
};

/// Instruction, one "<prompt> <answer>." line per demonstration, then the
/// direct prompt.
std::string icl_prompt(const FactEdit& fact, const std::vector<FactEdit>& demos);

/// Perplexities of o and o' after the direct prompt; in ICL mode also the
/// generated answer and whether it contains o. Unsupported scoring leaves the
/// perplexities absent.
MemoryProbe memory_probe(ModelGateway& gateway, const EndpointConfig& ep, const FactEdit& fact,
                         ProbeMode mode, const std::vector<FactEdit>& demos = {});

/// Up to `k` facts with the same relation and a different id and subject,
/// drawn without replacement under `seed` from `pool` sorted by id.
std::vector<FactEdit> select_demos(const std::vector<FactEdit>& pool, const FactEdit& fact,
                                   std::size_t k, std::uint64_t seed);

/// Average ranks (1-based), ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> xs);

/// Pearson correlation of average ranks. Throws PreconditionError on size
/// mismatch or fewer than two points, UndefinedError if either side is
/// constant.
double spearman(std::span<const double> xs, std::span<const double> ys);

enum class BucketStrategy { Quantile, LogWidth };

const char* to_string(BucketStrategy s);
BucketStrategy bucket_strategy_from_string(const std::string& s);

struct Bucket {
  int index = 0;
  double lower = 0;
  double upper = 0;
  std::vector<std::string> members;
};

struct Scored {
  std::string id;
  double value = 0;
};

/// Ordered, disjoint, exhaustive buckets. Quantile buckets never split equal
/// values; empty buckets are dropped, so fewer than `n_buckets` may come back.
std::vector<Bucket> bucketize(std::vector<Scored> items, int n_buckets, BucketStrategy strategy);

struct HistogramBin {
  /// floor(log_base(value)); nullopt for the zero bin.
  std::optional<int> exponent;
  std::int64_t count = 0;

  bool operator==(const HistogramBin&) const = default;
};

/// Zero bin first, then exponents ascending. Negative values are rejected.
std::vector<HistogramBin> histogram(std::span<const double> values, int log_base = 10);

std::string scores_to_csv(const std::vector<PopularityScores>& scores);
std::vector<PopularityScores> scores_from_csv(const std::string& csv);
std::string probes_to_csv(const std::vector<MemoryProbe>& probes);
std::vector<MemoryProbe> probes_from_csv(const std::string& csv);

}  // namespace editprobe
