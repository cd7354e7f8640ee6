#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "editprobe/corpus.hpp"
#include "editprobe/gateway.hpp"

namespace editprobe {

enum class ProbeRole { UserSim, Subject };

struct ProbeTurn {
  ProbeRole role = ProbeRole::UserSim;
  std::string text;
  int turn_index = 0;

  bool operator==(const ProbeTurn&) const = default;
};

enum class Verdict { EditFailed, ConfusionReported, NoConfusionReported, Unparsed };
enum class AutoFlag { ReversionInDialogue, TargetNegation, TargetNeverAsserted };

const char* to_string(Verdict v);
const char* to_string(AutoFlag f);
Verdict verdict_from_string(const std::string& s);
AutoFlag auto_flag_from_string(const std::string& s);

struct DialogueTranscript {
  std::string fact_id;
  std::vector<ProbeTurn> turns;
  Verdict verdict = Verdict::Unparsed;
  std::set<AutoFlag> auto_flags;
  /// Set when an endpoint failed mid-dialogue.
  std::string error;

  bool operator==(const DialogueTranscript&) const = default;

  int user_turns() const;
};

/// Exact-substring verdict of one simulator message; Unparsed when it carries
/// no sentinel.
Verdict parse_verdict(const std::string& simulator_message);

/// The user-simulator instruction with the fact substituted.
std::string simulator_instruction(const FactEdit& fact);

inline constexpr std::string_view kProbeKickoff = "Start the test now. Ask your first question.";

/// Alternates simulator and subject until the simulator emits a sentinel or
/// `max_user_turns` simulator messages have been sent. Endpoint failures end
/// the dialogue with verdict Unparsed and `error` set.
DialogueTranscript run_probe(ModelGateway& gateway, const EndpointConfig& simulator,
                             const EndpointConfig& subject, const FactEdit& fact,
                             int max_user_turns = 5);

/// Negation words checked within `kNegationWindow` tokens of o'.
inline constexpr int kNegationWindow = 5;
bool is_negation_token(std::string_view normalized_token);

std::set<AutoFlag> detect_auto_flags(const DialogueTranscript& t, const FactEdit& fact);

/// Human-judgment columns, three for confusion and three for hallucination.
inline constexpr std::array<std::string_view, 6> kAnnotationCriteria = {
    "confusion_reversion_to_original",  "confusion_negation_of_target",
    "confusion_negation_of_own_output", "hallucination_fake_fictional_entities",
    "hallucination_untrue_target_content", "hallucination_untrue_other_content"};

/// Header, one row per transcript with auto flags prefilled and human columns
/// blank, then (for non-empty input) a summary row.
std::string annotation_sheet_csv(const std::vector<DialogueTranscript>& transcripts,
                                 const std::map<std::string, FactEdit>& facts);

struct AnnotationSummary {
  std::size_t rows = 0;
  std::map<std::string, double> auto_percent;
  /// Percentage of annotated rows marked 1, per criterion; absent if no row is
  /// annotated for it.
  std::map<std::string, std::optional<double>> human_percent;
  std::optional<double> any_confusion;
  std::optional<double> any_hallucination;
};

/// Reads a (possibly annotated) sheet back and computes the percentages.
AnnotationSummary summarize_annotations(const std::string& csv);

std::string transcript_to_json_line(const DialogueTranscript& t);
DialogueTranscript transcript_from_json_line(const std::string& line);
void write_transcripts_jsonl(const std::filesystem::path& path,
                             const std::vector<DialogueTranscript>& ts);
std::vector<DialogueTranscript> read_transcripts_jsonl(const std::filesystem::path& path);

}  // namespace editprobe
