#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "editprobe/corpus.hpp"
#include "editprobe/gateway.hpp"
#include "editprobe/knowledge_sources.hpp"

namespace editprobe {

enum class ContextKind { None, Related, NoisyContext, SimulatedDialogue, NoisyDialogue };
enum class QueryKind { Direct, Equivalent, Cloze, Reference, DoubtOnly, DoubtSuggest };

const char* to_string(ContextKind k);
const char* to_string(QueryKind k);
ContextKind context_kind_from_string(const std::string& s);
QueryKind query_kind_from_string(const std::string& s);

inline bool is_dialogue(ContextKind k) {
  return k == ContextKind::SimulatedDialogue || k == ContextKind::NoisyDialogue;
}
inline bool is_doubt(QueryKind k) {
  return k == QueryKind::DoubtOnly || k == QueryKind::DoubtSuggest;
}

struct Cell {
  ContextKind context = ContextKind::None;
  QueryKind query = QueryKind::Direct;

  auto operator<=>(const Cell&) const = default;
};

/// "Context/Query", e.g. "Related/Cloze".
std::string to_string(const Cell& c);
Cell cell_from_string(const std::string& s);

/// The standard grid: no-context Direct, Equivalent and Cloze; each of the
/// four contexts with Direct, Cloze and Reference; both doubt kinds.
std::vector<Cell> standard_grid();

/// Comma-separated cell list, or "all" for the standard grid.
std::vector<Cell> parse_cells(const std::string& spec);

struct AttackPrompt {
  std::string fact_id;
  ContextKind context_kind = ContextKind::None;
  QueryKind query_kind = QueryKind::Direct;
  /// Index among the fact's equivalent prompts; 0 otherwise.
  int variant = 0;
  /// Context portion of a prose attack ("" for None and dialogue kinds).
  std::string context;
  /// The query as it appears at the end of the attack.
  std::string query;
  /// Flat text for prose attacks; empty for dialogue attacks.
  std::string text;
  /// Role-tagged turns for dialogue attacks, ending with the query.
  std::vector<DialogueTurn> turns;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> provenance;
  /// Set when a sub-builder was unavailable; the prompt then has no text.
  std::optional<std::string> skip_reason;

  bool operator==(const AttackPrompt&) const = default;

  Cell cell() const { return {context_kind, query_kind}; }
  /// "<fact_id>|<context>|<query>|<variant>"
  std::string sample_id() const;
};

/// Messages for the subject endpoint: one user message for prose attacks, one
/// message per turn for dialogue attacks.
std::vector<Message> to_messages(const AttackPrompt& a);

struct ClozeQuery {
  std::string text_with_blank;
  std::string blank_marker = "____";
  std::string original_sentence;
};

/// Sentences of `text` that do not mention `answer`. A sentence is dropped when
/// its normalized tokens contain the normalized tokens of `answer` as a run, or
/// failing that, when its normalized form contains normalize(answer).
std::string remove_answer_sentences(const std::string& text, const std::string& answer);

/// Profile text minus sentences mentioning o, cut to `max_words`. Throws
/// Unavailable("ContextUnavailable") if nothing remains or o survives removal.
std::string build_related_context(const FactEdit& fact, const ProfileText& profile,
                                  std::size_t max_words = 300);

/// Index of the noise fact for `fact`: uniform under `seed`, moving to the
/// next entry while the subject equals fact.subject. Throws
/// Unavailable("ContextUnavailable") if every candidate shares the subject.
std::size_t choose_noise_fact(const std::vector<FactEdit>& facts, const FactEdit& fact,
                              std::uint64_t seed);

inline constexpr std::string_view kNoiseSeparator = "\n\n";

/// other_profile (stripped of o, cut to `max_words`) + blank line + related.
std::string build_noisy_context(const FactEdit& fact, const std::string& related,
                                const ProfileText& other_profile, std::size_t max_words = 300);

/// Rounds (user + AI exchanges) of a simulated dialogue: 3, 4, 5 with
/// weights 1:2:2.
int sample_dialogue_rounds(std::uint64_t seed);

/// Parses "User:"/"AI:" (also "Human:"/"Assistant:") prefixed lines.
/// Unprefixed lines continue the previous utterance.
std::vector<DialogueTurn> parse_dialogue(const std::string& text);

/// Throws InvariantViolation unless roles alternate starting with the user.
void check_alternation(const std::vector<DialogueTurn>& turns);

struct RewriterContext {
  ModelGateway* gateway = nullptr;
  const EndpointConfig* endpoint = nullptr;
  int candidates = 5;
  int retries = 2;
};

struct SimulatedDialogue {
  std::vector<DialogueTurn> turns;
  int rounds = 0;
  std::string transcript;
};

/// Asks the rewriter for a `rounds`-round dialogue grounded in `grounding`.
/// Rejects outputs with the wrong structure or mentioning o; after `retries`
/// extra attempts throws Unavailable("DialogueUnavailable").
SimulatedDialogue build_simulated_dialogue(const FactEdit& fact, const std::string& grounding,
                                           const RewriterContext& rw, std::uint64_t seed);

/// Inserts the clip (sentences mentioning o removed) at an exchange boundary
/// chosen uniformly under `seed`, then merges adjacent same-role turns.
std::vector<DialogueTurn> build_noisy_dialogue(const FactEdit& fact,
                                               const std::vector<DialogueTurn>& sim,
                                               const DialogueClip& clip, std::uint64_t seed);

/// Numbered items ("1. ...") of a rewriter answer.
std::vector<std::string> parse_numbered_list(const std::string& text);

/// Candidate -> cloze text, or nullopt if "[o]" does not occur exactly once,
/// the blank marker already occurs, or o survives outside the brackets.
std::optional<std::string> cloze_from_candidate(const std::string& candidate,
                                                const std::string& object);

struct ClozeBuild {
  ClozeQuery cloze;
  std::string transcript;
};

ClozeBuild build_cloze(const FactEdit& fact, const RewriterContext& rw, std::uint64_t seed);

struct PronounChoice {
  std::string pronoun;  // nominative form
  bool fallback = false;
  std::string raw;
};

/// Nominative pronoun for a rewriter answer; nullopt when it is not in the list.
std::optional<std::string> parse_pronoun(const std::string& answer);

PronounChoice choose_pronoun(const std::string& subject, const RewriterContext& rw,
                             std::uint64_t seed);

/// Replaces the first occurrence of `subject` in `prompt` with the pronoun:
/// nominative at sentence start (capitalized), possessive before "'s",
/// objective elsewhere. Throws Unavailable("ReferenceUnavailable") when the
/// subject does not occur.
std::string apply_pronoun(const std::string& prompt, const std::string& subject,
                          const std::string& pronoun);

/// d1 / d2 follow-up for the direct prompt.
std::string doubt_followup(const FactEdit& fact, QueryKind kind);

/// Second-round input: round-1 prompt, round-1 output verbatim, follow-up.
/// A single space joins prompt and output only when neither side has
/// whitespace at the junction.
std::string doubt_round_two(const std::string& prompt, const std::string& first_output,
                            const std::string& followup);

struct AttackConfig {
  std::size_t context_words = 300;
  /// Profile words fetched before o-removal, so the cut context stays near
  /// `context_words`.
  std::size_t profile_fetch_words = 600;
  int rewriter_candidates = 5;
  int rewriter_retries = 2;
  int workers = 4;
};

using ProfileProvider = std::function<ProfileText(const std::string& subject)>;

/// Builds every requested cell for a set of facts. Per-fact artifacts (related
/// context, dialogue, cloze, pronoun) are built once and shared across cells.
class AttackBuilder {
 public:
  AttackBuilder(AttackConfig cfg, std::vector<FactEdit> facts, std::vector<DialogueClip> clips,
                ProfileProvider profiles, ModelGateway* gateway,
                const EndpointConfig* rewriter, std::uint64_t seed);

  /// Every (fact, cell) in fact order, then cell order. Unavailable
  /// sub-builders yield prompts with skip_reason set.
  std::vector<AttackPrompt> build_all(const std::vector<Cell>& cells);

  std::vector<AttackPrompt> build_fact(const FactEdit& fact, const std::vector<Cell>& cells);

 private:
  AttackConfig cfg_;
  std::vector<FactEdit> facts_;
  std::vector<DialogueClip> clips_;
  ProfileProvider profiles_;
  ModelGateway* gateway_;
  const EndpointConfig* rewriter_;
  std::uint64_t seed_;
};

std::string attack_to_json_line(const AttackPrompt& a);
AttackPrompt attack_from_json_line(const std::string& line);
void write_attacks_jsonl(const std::filesystem::path& path, const std::vector<AttackPrompt>& a);
std::vector<AttackPrompt> read_attacks_jsonl(const std::filesystem::path& path);

}  // namespace editprobe
