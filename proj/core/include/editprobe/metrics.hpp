#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace editprobe {

/// Lowercases (full Unicode, root locale) and strips whitespace, punctuation
/// (P*), symbols (S*), control (Cc) and format (Cf) characters. Letters, marks
/// and digits are kept. Invalid UTF-8 decodes to U+FFFD, which is a symbol and
/// therefore dropped.
std::string normalize(std::string_view text);

/// `normalize` applied to each whitespace token, empty results dropped.
std::vector<std::string> normalized_tokens(std::string_view text);

/// True if `needle` occurs as a contiguous run inside `haystack`.
bool contains_token_run(const std::vector<std::string>& haystack,
                        const std::vector<std::string>& needle);

/// Prefix of `text` up to the first '.', '?', '!' (kept) or '\n' (dropped).
/// Leading whitespace is skipped first, so a reply starting with a blank line
/// still yields its first sentence.
std::string first_sentence(std::string_view text);

/// Marker list applied before reversion matching. Version string is recorded
/// in run manifests.
inline constexpr std::string_view kNegationMarkerVersion = "neg-markers/v1";
inline constexpr std::array<std::string_view, 5> kNegationMarkers = {
    "instead of", "not", "no longer", "rather than", "n't"};

/// Cuts `text` at the earliest case-insensitive negation marker; the marker and
/// everything after it are dropped. Word markers need a word boundary on both
/// sides ("nothing", "cannot" do not match "not"); "n't" only needs one after it.
std::string truncate_negations(std::string_view text);

/// normalize(target) is a substring of normalize(first_sentence(raw_output)).
/// An answer that normalizes to "" never matches.
bool check_success(std::string_view raw_output, std::string_view target);

/// normalize(original) is a substring of
/// normalize(truncate_negations(first_sentence(raw_output))).
bool check_reversion(std::string_view raw_output, std::string_view original);

}  // namespace editprobe
