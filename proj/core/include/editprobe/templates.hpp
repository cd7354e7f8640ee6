#pragma once

#include <array>
#include <string>
#include <string_view>

namespace editprobe::templates {

/// One-shot rewrite prompt for cloze construction. Placeholders:
/// {direct_prompt}, {object}.
extern const std::string_view kClozeRewrite;

/// Pronoun selection prompt. Placeholders: {subject}, {pron}.
extern const std::string_view kPronounChoice;

/// Doubt follow-ups. d1 uses {prompt}; d2 uses {prompt} and {original_answer}.
extern const std::string_view kDoubtOnly;
extern const std::string_view kDoubtSuggest;

/// Knowledge extraction prompt used by the two-step mitigations. Placeholder:
/// {prompt}.
extern const std::string_view kKnowledgeExtraction;

/// User-simulator instruction with the example fact abstracted into
/// {subject}, {original_fact}, {target_fact}.
extern const std::string_view kUserSimulator;

/// Dialogue synthesis prompt for the rewriter. Placeholders: {subject},
/// {rounds}, {profile}.
extern const std::string_view kDialogueSynthesis;

/// Instruction prefixed to ICL memory probes.
extern const std::string_view kIclInstruction;

inline constexpr std::string_view kBlankMarker = "____";
inline constexpr std::string_view kClozePrefix = "Fill the blank. ";

/// Pronouns a reference rewrite may use. The prompt lists "she" twice; the
/// set itself has ten members.
inline constexpr std::array<std::string_view, 10> kPronouns = {
    "he", "she", "it", "they", "him", "them", "his", "her", "its", "their"};

/// Sentinels emitted by the user simulator.
inline constexpr std::string_view kEditFailed = "The edit failed";
inline constexpr std::string_view kResultConfusion = "Result: Confusion.";
inline constexpr std::string_view kResultNoConfusion = "Result: No Confusion";

}  // namespace editprobe::templates
