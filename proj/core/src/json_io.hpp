#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "editprobe/error.hpp"
#include "json.hpp"

namespace editprobe::detail {

using nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << content;
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

/// A JSON array document or JSON-lines; returns one element per record.
/// Records that fail to parse in JSON-lines mode come back as `nullptr` so
/// callers can report them by index.
inline std::vector<json> read_records(const std::filesystem::path& path) {
  const std::string body = read_file(path);
  std::size_t first = body.find_first_not_of(" \t\r\n");
  std::vector<json> out;
  if (first == std::string::npos) return out;
  if (body[first] == '[') {
    json doc = json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.is_array()) throw IoError("malformed JSON array in " + path.string());
    for (auto& r : doc) out.push_back(std::move(r));
    return out;
  }
  std::istringstream lines(body);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec = json::parse(line, nullptr, false);
    out.push_back(rec.is_discarded() ? json(nullptr) : std::move(rec));
  }
  return out;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> out;
  std::istringstream lines(read_file(path));
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

inline std::string str_or(const json& j, const char* key, const std::string& fallback = {}) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return fallback;
  return it->get<std::string>();
}

}  // namespace editprobe::detail
