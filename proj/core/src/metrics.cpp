#include "editprobe/metrics.hpp"

#include <spdlog/spdlog.h>
#include <unicode/locid.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "editprobe/text.hpp"

namespace editprobe {
namespace {

bool dropped_category(UChar32 c) {
  if (u_isUWhiteSpace(c)) return true;
  switch (u_charType(c)) {
    case U_DASH_PUNCTUATION:
    case U_START_PUNCTUATION:
    case U_END_PUNCTUATION:
    case U_CONNECTOR_PUNCTUATION:
    case U_OTHER_PUNCTUATION:
    case U_INITIAL_PUNCTUATION:
    case U_FINAL_PUNCTUATION:
    case U_MATH_SYMBOL:
    case U_CURRENCY_SYMBOL:
    case U_MODIFIER_SYMBOL:
    case U_OTHER_SYMBOL:
    case U_CONTROL_CHAR:
    case U_FORMAT_CHAR:
    case U_SPACE_SEPARATOR:
    case U_LINE_SEPARATOR:
    case U_PARAGRAPH_SEPARATOR:
      return true;
    default:
      return false;
  }
}

// Code point ending right before byte offset `pos`, or U_SENTINEL at start.
UChar32 code_point_before(std::string_view s, std::size_t pos) {
  if (pos == 0) return U_SENTINEL;
  const auto* bytes = reinterpret_cast<const uint8_t*>(s.data());
  int32_t i = static_cast<int32_t>(pos);
  UChar32 c = 0;
  U8_PREV(bytes, 0, i, c);
  return c;
}

UChar32 code_point_at(std::string_view s, std::size_t pos) {
  if (pos >= s.size()) return U_SENTINEL;
  const auto* bytes = reinterpret_cast<const uint8_t*>(s.data());
  int32_t i = static_cast<int32_t>(pos);
  UChar32 c = 0;
  U8_NEXT(bytes, i, static_cast<int32_t>(s.size()), c);
  return c;
}

bool is_word_char(UChar32 c) { return c >= 0 && (u_isalnum(c) || c == '_'); }

}  // namespace

std::string normalize(std::string_view text) {
  if (text.empty()) return {};
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  u.toLower(icu::Locale::getRoot());
  icu::UnicodeString kept;
  for (int32_t i = 0; i < u.length();) {
    const UChar32 c = u.char32At(i);
    i += U16_LENGTH(c);
    if (!dropped_category(c)) kept.append(c);
  }
  std::string out;
  kept.toUTF8String(out);
  return out;
}

std::vector<std::string> normalized_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& tok : text::whitespace_tokens(text)) {
    auto n = normalize(tok);
    if (!n.empty()) out.push_back(std::move(n));
  }
  return out;
}

bool contains_token_run(const std::vector<std::string>& haystack,
                        const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool ok = true;
    for (std::size_t k = 0; k < needle.size() && ok; ++k) ok = haystack[i + k] == needle[k];
    if (ok) return true;
  }
  return false;
}

std::string first_sentence(std::string_view text) {
  text = text::trim_left(text);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') return std::string(text.substr(0, i));
    if (c == '.' || c == '?' || c == '!') return std::string(text.substr(0, i + 1));
  }
  return std::string(text);
}

std::string truncate_negations(std::string_view text) {
  const std::string lowered = text::ascii_lower(text);
  std::size_t cut = std::string::npos;
  for (const auto marker : kNegationMarkers) {
    const bool needs_left_boundary = marker != "n't";
    std::size_t pos = lowered.find(marker);
    while (pos != std::string::npos && pos < cut) {
      const bool left_ok = !needs_left_boundary || !is_word_char(code_point_before(lowered, pos));
      const bool right_ok = !is_word_char(code_point_at(lowered, pos + marker.size()));
      if (left_ok && right_ok) {
        cut = pos;
        break;
      }
      pos = lowered.find(marker, pos + 1);
    }
  }
  if (cut == std::string::npos) return std::string(text);
  return std::string(text.substr(0, cut));
}

bool check_success(std::string_view raw_output, std::string_view target) {
  const auto needle = normalize(target);
  if (needle.empty()) {
    spdlog::warn("check_success: target answer normalizes to an empty string");
    return false;
  }
  return normalize(first_sentence(raw_output)).find(needle) != std::string::npos;
}

bool check_reversion(std::string_view raw_output, std::string_view original) {
  const auto needle = normalize(original);
  if (needle.empty()) {
    spdlog::warn("check_reversion: original answer normalizes to an empty string");
    return false;
  }
  return normalize(truncate_negations(first_sentence(raw_output))).find(needle) !=
         std::string::npos;
}

}  // namespace editprobe
