#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace editprobe {

enum class Dataset { CounterFact, ZsRE, MQuAKE_T };

const char* to_string(Dataset d);
Dataset dataset_from_string(const std::string& s);

/// One editable fact (s, r, o -> o') together with the prompts that express it.
struct FactEdit {
  std::string id;
  std::string subject;
  std::string relation;
  std::string object_original;
  std::string object_target;
  std::string prompt_direct;
  std::vector<std::string> prompts_equivalent;
  std::optional<std::vector<std::string>> prompts_locality;
  std::optional<std::string> subject_qid;
  std::optional<std::string> object_qid;
  /// Cloze-style relation template ("The mother tongue of {} is") when known.
  std::optional<std::string> relation_template;
  Dataset dataset = Dataset::CounterFact;
  /// Position of the source record in its file; drives split membership.
  std::size_t record_index = 0;

  bool operator==(const FactEdit&) const = default;
};

/// Throws InvariantViolation when o == o' after normalization, the direct
/// prompt is empty, or (CounterFact) the subject is missing from the prompt.
void validate(const FactEdit& fact);

inline constexpr std::size_t kTestSplitSize = 2000;

/// Records [0, test_end) are the test split; the rest is train/validation.
struct SplitDescriptor {
  std::size_t total_records = 0;
  std::size_t test_end = 0;

  bool in_test(std::size_t record_index) const { return record_index < test_end; }
};

enum class Split { All, Test, Train };

struct LoadIssue {
  std::size_t record_index;
  std::string message;
  bool fatal_for_record = true;
};

struct LoadResult {
  std::vector<FactEdit> facts;
  std::vector<LoadIssue> issues;
  std::vector<std::string> warnings;
  SplitDescriptor split;
};

struct LoadOptions {
  Split split = Split::All;
};

/// ROME-style counterfact.json (array or JSON-lines). Field map:
///   case_id -> id "cf:<case_id>", requested_rewrite.subject -> subject,
///   requested_rewrite.prompt -> relation_template / prompt_direct,
///   requested_rewrite.relation_id -> relation, target_true -> o,
///   target_new -> o', paraphrase_prompts -> equivalents,
///   neighborhood_prompts -> locality.
LoadResult load_counterfact(const std::filesystem::path& path, const LoadOptions& opts = {});

/// MEND-style zsRE eval file. Field map: src|question -> prompt_direct,
/// rephrase -> equivalent, answers[0]|answer -> o, alt|alternative -> o',
/// subject -> subject, relation (absent -> "zsre:qa"), loc -> locality.
LoadResult load_zsre(const std::filesystem::path& path, const LoadOptions& opts = {});

/// MQuAKE-T. Each entry of requested_rewrite becomes one fact with the
/// 2021-04 answer (target_true) as o and the 2023-04 answer (target_new) as o'.
LoadResult load_mquake_t(const std::filesystem::path& path, const LoadOptions& opts = {});

LoadResult load_dataset(Dataset d, const std::filesystem::path& path, const LoadOptions& opts = {});

enum class Speaker { User, Ai };

struct DialogueTurn {
  Speaker role;
  std::string text;

  bool operator==(const DialogueTurn&) const = default;
};

struct DialogueClip {
  std::string source;
  std::vector<DialogueTurn> turns;

  bool operator==(const DialogueClip&) const = default;
};

/// Throws InvariantViolation unless turns alternate starting with the user
/// and there are at least two of them.
void validate(const DialogueClip& clip);

struct ClipLengthRange {
  int min_turns = 2;
  int max_turns = 4;
};

/// Reads MultiWOZ 2.0/2.1 (`{"id": {"log": [{"text": ...}]}}`) or 2.2
/// (`[{"dialogue_id", "turns": [{"speaker", "utterance"}]}]`) and cuts one clip
/// of contiguous turns per dialogue. Clip length is uniform in the range
/// (capped by dialogue length) and clips start on a user turn. Dialogues are
/// visited in id order and each uses its own derived seed, so the result
/// depends only on (file, range, seed).
std::vector<DialogueClip> load_dialogue_clips(const std::filesystem::path& path,
                                              ClipLengthRange range, std::uint64_t rng_seed);

/// Canonical FactEdit JSON-lines cache format.
std::string fact_to_json_line(const FactEdit& fact);
FactEdit fact_from_json_line(const std::string& line);
void write_facts_jsonl(const std::filesystem::path& path, const std::vector<FactEdit>& facts);
std::vector<FactEdit> read_facts_jsonl(const std::filesystem::path& path);

void write_clips_jsonl(const std::filesystem::path& path, const std::vector<DialogueClip>& clips);
std::vector<DialogueClip> read_clips_jsonl(const std::filesystem::path& path);

}  // namespace editprobe
