#include "editprobe/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <map>
#include <set>

#include "editprobe/error.hpp"
#include "editprobe/metrics.hpp"
#include "editprobe/rng.hpp"
#include "editprobe/text.hpp"
#include "json_io.hpp"

namespace editprobe {

using detail::json;
using detail::str_or;

const char* to_string(Dataset d) {
  switch (d) {
    case Dataset::CounterFact: return "CounterFact";
    case Dataset::ZsRE: return "ZsRE";
    case Dataset::MQuAKE_T: return "MQuAKE_T";
  }
  return "?";
}

Dataset dataset_from_string(const std::string& s) {
  const auto l = text::ascii_lower(s);
  if (l == "counterfact" || l == "cf") return Dataset::CounterFact;
  if (l == "zsre") return Dataset::ZsRE;
  if (l == "mquake_t" || l == "mquake-t" || l == "mquaket") return Dataset::MQuAKE_T;
  throw ConfigError("unknown dataset: " + s);
}

void validate(const FactEdit& fact) {
  if (fact.id.empty()) throw InvariantViolation("fact has an empty id");
  if (text::trim(fact.prompt_direct).empty()) {
    throw InvariantViolation("fact " + fact.id + ": empty direct prompt");
  }
  if (normalize(fact.object_original) == normalize(fact.object_target)) {
    throw InvariantViolation("fact " + fact.id + ": original and target objects coincide ('" +
                             fact.object_target + "')");
  }
  if (fact.dataset == Dataset::CounterFact && fact.prompt_direct.find(fact.subject) == std::string::npos) {
    throw InvariantViolation("fact " + fact.id + ": subject '" + fact.subject +
                             "' does not occur in the direct prompt");
  }
}

namespace {

std::vector<std::string> string_list(const json& j, const char* key) {
  std::vector<std::string> out;
  auto it = j.find(key);
  if (it == j.end()) return out;
  if (it->is_string()) {
    out.push_back(it->get<std::string>());
  } else if (it->is_array()) {
    for (const auto& v : *it) {
      if (v.is_string()) out.push_back(v.get<std::string>());
    }
  }
  return out;
}

// target_true / target_new appear either as {"str": ..., "id": ...} or a bare string.
std::pair<std::string, std::optional<std::string>> answer_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) return {};
  if (it->is_string()) return {it->get<std::string>(), std::nullopt};
  if (it->is_object()) {
    std::optional<std::string> id;
    if (auto idit = it->find("id"); idit != it->end() && idit->is_string()) id = idit->get<std::string>();
    return {str_or(*it, "str"), id};
  }
  return {};
}

std::string instantiate(const std::string& tmpl, const std::string& subject) {
  return text::replace_all(tmpl, "{}", subject);
}

struct Loader {
  LoadResult result;
  std::set<std::string> seen_ids;
  Split split;

  void reject(std::size_t index, const std::string& message) {
    spdlog::warn("record {}: {}", index, message);
    result.issues.push_back({index, message, true});
  }

  void accept(FactEdit fact) {
    try {
      validate(fact);
    } catch (const InvariantViolation& e) {
      reject(fact.record_index, e.what());
      return;
    }
    if (!seen_ids.insert(fact.id).second) {
      reject(fact.record_index, "duplicate id " + fact.id);
      return;
    }
    result.facts.push_back(std::move(fact));
  }

  void finish(std::size_t total_records, const std::filesystem::path& path) {
    result.split.total_records = total_records;
    result.split.test_end = std::min(kTestSplitSize, total_records);
    if (total_records == 0) {
      result.warnings.push_back("no records in " + path.string());
      spdlog::warn("no records in {}", path.string());
    }
    if (split != Split::All) {
      const auto& sd = result.split;
      std::erase_if(result.facts, [&](const FactEdit& f) {
        return (split == Split::Test) != sd.in_test(f.record_index);
      });
    }
  }
};

std::vector<json> read_or_throw(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("dataset file not found: " + path.string());
  return detail::read_records(path);
}

std::string record_id(const json& rec, std::size_t index, const char* prefix) {
  for (const char* key : {"case_id", "id"}) {
    auto it = rec.find(key);
    if (it == rec.end()) continue;
    if (it->is_number_integer()) return std::string(prefix) + std::to_string(it->get<long long>());
    if (it->is_string()) return std::string(prefix) + it->get<std::string>();
  }
  return std::string(prefix) + std::to_string(index);
}

}  // namespace

LoadResult load_counterfact(const std::filesystem::path& path, const LoadOptions& opts) {
  const auto records = read_or_throw(path);
  Loader loader{.result = {}, .seen_ids = {}, .split = opts.split};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (!rec.is_object()) {
      loader.reject(i, "malformed record");
      continue;
    }
    auto rw = rec.find("requested_rewrite");
    if (rw == rec.end() || !rw->is_object()) {
      loader.reject(i, "missing requested_rewrite");
      continue;
    }
    FactEdit f;
    f.dataset = Dataset::CounterFact;
    f.record_index = i;
    f.id = record_id(rec, i, "cf:");
    f.subject = str_or(*rw, "subject");
    const auto tmpl = str_or(*rw, "prompt");
    if (f.subject.empty() || tmpl.empty()) {
      loader.reject(i, "requested_rewrite lacks subject or prompt");
      continue;
    }
    f.relation_template = tmpl;
    f.relation = str_or(*rw, "relation_id", tmpl);
    f.prompt_direct = instantiate(tmpl, f.subject);
    auto [orig, orig_id] = answer_field(*rw, "target_true");
    auto [target, target_id] = answer_field(*rw, "target_new");
    if (orig.empty() || target.empty()) {
      loader.reject(i, "requested_rewrite lacks target_true or target_new");
      continue;
    }
    f.object_original = orig;
    f.object_target = target;
    f.object_qid = orig_id;
    f.prompts_equivalent = string_list(rec, "paraphrase_prompts");
    auto loc = string_list(rec, "neighborhood_prompts");
    if (!loc.empty()) f.prompts_locality = std::move(loc);
    if (auto q = str_or(rec, "subject_qid"); !q.empty()) f.subject_qid = q;
    loader.accept(std::move(f));
  }
  loader.finish(records.size(), path);
  return std::move(loader.result);
}

LoadResult load_zsre(const std::filesystem::path& path, const LoadOptions& opts) {
  const auto records = read_or_throw(path);
  Loader loader{.result = {}, .seen_ids = {}, .split = opts.split};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (!rec.is_object()) {
      loader.reject(i, "malformed record");
      continue;
    }
    FactEdit f;
    f.dataset = Dataset::ZsRE;
    f.record_index = i;
    f.id = record_id(rec, i, "zsre:");
    f.prompt_direct = str_or(rec, "src", str_or(rec, "question"));
    if (text::trim(f.prompt_direct).empty()) {
      loader.reject(i, "empty question");
      continue;
    }
    f.subject = str_or(rec, "subject");
    auto answers = string_list(rec, "answers");
    if (answers.empty()) answers = string_list(rec, "answer");
    if (answers.empty()) {
      loader.reject(i, "missing answer");
      continue;
    }
    f.object_original = answers.front();
    f.object_target = str_or(rec, "alt", str_or(rec, "alternative"));
    if (f.object_target.empty()) {
      loader.reject(i, "missing alternative answer");
      continue;
    }
    f.relation = str_or(rec, "relation", "zsre:qa");
    f.prompts_equivalent = string_list(rec, "rephrase");
    auto loc = string_list(rec, "loc");
    if (!loc.empty()) f.prompts_locality = std::move(loc);
    loader.accept(std::move(f));
  }
  loader.finish(records.size(), path);
  return std::move(loader.result);
}

LoadResult load_mquake_t(const std::filesystem::path& path, const LoadOptions& opts) {
  const auto records = read_or_throw(path);
  Loader loader{.result = {}, .seen_ids = {}, .split = opts.split};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (!rec.is_object()) {
      loader.reject(i, "malformed record");
      continue;
    }
    auto rw = rec.find("requested_rewrite");
    if (rw == rec.end()) {
      loader.reject(i, "missing requested_rewrite");
      continue;
    }
    std::vector<json> rewrites;
    if (rw->is_array()) {
      rewrites.assign(rw->begin(), rw->end());
    } else if (rw->is_object()) {
      rewrites.push_back(*rw);
    }
    const auto base_id = record_id(rec, i, "mquake:");
    for (std::size_t k = 0; k < rewrites.size(); ++k) {
      const auto& r = rewrites[k];
      FactEdit f;
      f.dataset = Dataset::MQuAKE_T;
      f.record_index = i;
      f.id = rewrites.size() == 1 ? base_id : base_id + ":" + std::to_string(k);
      f.subject = str_or(r, "subject");
      const auto tmpl = str_or(r, "prompt");
      if (f.subject.empty() || tmpl.empty()) {
        loader.reject(i, "rewrite " + std::to_string(k) + " lacks subject or prompt");
        continue;
      }
      f.relation_template = tmpl;
      f.relation = str_or(r, "relation_id", tmpl);
      f.prompt_direct = instantiate(tmpl, f.subject);
      auto [orig, orig_id] = answer_field(r, "target_true");
      auto [target, target_id] = answer_field(r, "target_new");
      if (orig.empty()) {
        loader.reject(i, "rewrite " + std::to_string(k) + " lacks the 2021-04 answer");
        continue;
      }
      if (target.empty()) {
        loader.reject(i, "rewrite " + std::to_string(k) + " lacks the 2023-04 answer");
        continue;
      }
      f.object_original = orig;
      f.object_target = target;
      f.object_qid = orig_id;
      if (auto q = str_or(r, "question"); !q.empty()) f.prompts_equivalent.push_back(q);
      loader.accept(std::move(f));
    }
  }
  loader.finish(records.size(), path);
  return std::move(loader.result);
}

LoadResult load_dataset(Dataset d, const std::filesystem::path& path, const LoadOptions& opts) {
  switch (d) {
    case Dataset::CounterFact: return load_counterfact(path, opts);
    case Dataset::ZsRE: return load_zsre(path, opts);
    case Dataset::MQuAKE_T: return load_mquake_t(path, opts);
  }
  throw ConfigError("unknown dataset");
}

void validate(const DialogueClip& clip) {
  if (clip.turns.size() < 2) throw InvariantViolation("dialogue clip needs at least two turns");
  for (std::size_t i = 0; i < clip.turns.size(); ++i) {
    const auto expected = i % 2 == 0 ? Speaker::User : Speaker::Ai;
    if (clip.turns[i].role != expected) {
      throw InvariantViolation("dialogue clip " + clip.source + " does not alternate at turn " +
                               std::to_string(i));
    }
  }
}

namespace {

std::vector<std::pair<std::string, std::vector<DialogueTurn>>> parse_multiwoz(const json& doc) {
  std::vector<std::pair<std::string, std::vector<DialogueTurn>>> out;
  auto add = [&](std::string id, std::vector<DialogueTurn> turns) {
    // Keep the longest alternating prefix that starts with the user.
    std::vector<DialogueTurn> clean;
    for (auto& t : turns) {
      const auto expected = clean.size() % 2 == 0 ? Speaker::User : Speaker::Ai;
      if (t.role != expected || text::trim(t.text).empty()) break;
      clean.push_back(std::move(t));
    }
    out.emplace_back(std::move(id), std::move(clean));
  };
  if (doc.is_object()) {
    // 2.0 / 2.1: {"<id>.json": {"log": [{"text": ...}, ...]}} with implicit alternation.
    for (const auto& [id, dlg] : doc.items()) {
      auto log = dlg.find("log");
      if (log == dlg.end() || !log->is_array()) continue;
      std::vector<DialogueTurn> turns;
      for (std::size_t i = 0; i < log->size(); ++i) {
        turns.push_back({i % 2 == 0 ? Speaker::User : Speaker::Ai, str_or((*log)[i], "text")});
      }
      add(id, std::move(turns));
    }
  } else if (doc.is_array()) {
    // 2.2: [{"dialogue_id": ..., "turns": [{"speaker": "USER"|"SYSTEM", "utterance": ...}]}]
    for (std::size_t d = 0; d < doc.size(); ++d) {
      const auto& dlg = doc[d];
      if (!dlg.is_object()) continue;
      auto id = str_or(dlg, "dialogue_id", "dialogue-" + std::to_string(d));
      auto ts = dlg.find("turns");
      if (ts == dlg.end() || !ts->is_array()) continue;
      std::vector<DialogueTurn> turns;
      for (const auto& t : *ts) {
        const auto speaker = text::ascii_lower(str_or(t, "speaker"));
        turns.push_back({speaker == "user" ? Speaker::User : Speaker::Ai, str_or(t, "utterance")});
      }
      add(std::move(id), std::move(turns));
    }
  } else {
    throw IoError("unrecognized dialogue corpus layout");
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

}  // namespace

std::vector<DialogueClip> load_dialogue_clips(const std::filesystem::path& path,
                                              ClipLengthRange range, std::uint64_t rng_seed) {
  if (range.min_turns < 2 || range.max_turns < range.min_turns) {
    throw PreconditionError("clip length range must satisfy 2 <= min <= max");
  }
  json doc = json::parse(detail::read_file(path), nullptr, false);
  if (doc.is_discarded()) throw IoError("malformed dialogue corpus " + path.string());
  std::vector<DialogueClip> clips;
  for (auto& [id, turns] : parse_multiwoz(doc)) {
    const auto n = static_cast<int>(turns.size());
    if (n < range.min_turns) {
      spdlog::debug("dialogue {} has {} usable turns; skipped", id, n);
      continue;
    }
    SeededRng rng(derive_seed(rng_seed, "clip:" + id));
    const int len = static_cast<int>(rng.uniform_int(range.min_turns, std::min(range.max_turns, n)));
    // Starts must be user turns (even offsets) that leave room for the clip.
    const int last_start = (n - len) / 2;
    const int start = 2 * static_cast<int>(rng.uniform_int(0, last_start));
    DialogueClip clip{id, std::vector<DialogueTurn>(turns.begin() + start, turns.begin() + start + len)};
    validate(clip);
    clips.push_back(std::move(clip));
  }
  return clips;
}

namespace {

json fact_to_json(const FactEdit& f) {
  json j = {
      {"id", f.id},
      {"subject", f.subject},
      {"relation", f.relation},
      {"object_original", f.object_original},
      {"object_target", f.object_target},
      {"prompt_direct", f.prompt_direct},
      {"prompts_equivalent", f.prompts_equivalent},
      {"dataset", to_string(f.dataset)},
      {"record_index", f.record_index},
  };
  if (f.prompts_locality) j["prompts_locality"] = *f.prompts_locality;
  if (f.subject_qid) j["subject_qid"] = *f.subject_qid;
  if (f.object_qid) j["object_qid"] = *f.object_qid;
  if (f.relation_template) j["relation_template"] = *f.relation_template;
  return j;
}

template <typename T>
std::optional<T> opt_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

const char* speaker_name(Speaker s) { return s == Speaker::User ? "user" : "ai"; }

}  // namespace

std::string fact_to_json_line(const FactEdit& fact) {
  return fact_to_json(fact).dump(-1, ' ', false, json::error_handler_t::replace);
}

FactEdit fact_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  FactEdit f;
  f.id = j.at("id").get<std::string>();
  f.subject = j.at("subject").get<std::string>();
  f.relation = j.at("relation").get<std::string>();
  f.object_original = j.at("object_original").get<std::string>();
  f.object_target = j.at("object_target").get<std::string>();
  f.prompt_direct = j.at("prompt_direct").get<std::string>();
  f.prompts_equivalent = j.value("prompts_equivalent", std::vector<std::string>{});
  f.prompts_locality = opt_field<std::vector<std::string>>(j, "prompts_locality");
  f.subject_qid = opt_field<std::string>(j, "subject_qid");
  f.object_qid = opt_field<std::string>(j, "object_qid");
  f.relation_template = opt_field<std::string>(j, "relation_template");
  f.dataset = dataset_from_string(j.at("dataset").get<std::string>());
  f.record_index = j.value("record_index", std::size_t{0});
  return f;
}

void write_facts_jsonl(const std::filesystem::path& path, const std::vector<FactEdit>& facts) {
  std::string out;
  for (const auto& f : facts) {
    out += fact_to_json_line(f);
    out += '\n';
  }
  detail::write_file(path, out);
}

std::vector<FactEdit> read_facts_jsonl(const std::filesystem::path& path) {
  std::vector<FactEdit> out;
  for (const auto& line : detail::read_lines(path)) out.push_back(fact_from_json_line(line));
  return out;
}

void write_clips_jsonl(const std::filesystem::path& path, const std::vector<DialogueClip>& clips) {
  std::string out;
  for (const auto& c : clips) {
    json turns = json::array();
    for (const auto& t : c.turns) turns.push_back({{"role", speaker_name(t.role)}, {"text", t.text}});
    out += json{{"source", c.source}, {"turns", turns}}.dump(-1, ' ', false, json::error_handler_t::replace);
    out += '\n';
  }
  detail::write_file(path, out);
}

std::vector<DialogueClip> read_clips_jsonl(const std::filesystem::path& path) {
  std::vector<DialogueClip> out;
  for (const auto& line : detail::read_lines(path)) {
    const json j = json::parse(line);
    DialogueClip c;
    c.source = j.at("source").get<std::string>();
    for (const auto& t : j.at("turns")) {
      c.turns.push_back({t.at("role").get<std::string>() == "user" ? Speaker::User : Speaker::Ai,
                         t.at("text").get<std::string>()});
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace editprobe
