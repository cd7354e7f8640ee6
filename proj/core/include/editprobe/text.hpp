#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace editprobe::text {

std::string_view trim(std::string_view s);
std::string_view trim_left(std::string_view s);

/// ASCII-only lowercase; bytes >= 0x80 are left untouched.
std::string ascii_lower(std::string_view s);

bool is_ascii_space(char c);

/// Whitespace-separated tokens (ASCII whitespace).
std::vector<std::string> whitespace_tokens(std::string_view s);

std::size_t word_count(std::string_view s);

/// Sentence segmentation used for context cleanup: a sentence ends at '.', '?'
/// or '!' followed by whitespace or end of text. Each returned piece keeps its
/// terminator and the whitespace that follows it, so concatenating all pieces
/// reproduces the input exactly.
std::vector<std::string> split_sentences(std::string_view s);

std::string replace_all(std::string_view s, std::string_view from, std::string_view to);

/// Substitutes every `{name}` placeholder from `vars`. Unknown placeholders are
/// left as-is; no escaping is applied to substituted values.
std::string render(std::string_view tmpl,
                   const std::vector<std::pair<std::string, std::string>>& vars);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Collapses runs of ASCII whitespace into single spaces and trims.
std::string squash_whitespace(std::string_view s);

/// RFC 4180 field quoting: fields containing a comma, quote or newline are
/// wrapped in quotes with inner quotes doubled.
std::string csv_escape(std::string_view field);

/// Splits one CSV record (no embedded newlines) honoring quoted fields.
std::vector<std::string> parse_csv_line(std::string_view line);

}  // namespace editprobe::text
