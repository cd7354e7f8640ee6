#include "editprobe/dialogue_prober.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>

#include "editprobe/error.hpp"
#include "editprobe/metrics.hpp"
#include "editprobe/templates.hpp"
#include "editprobe/text.hpp"
#include "json_io.hpp"

namespace editprobe {

using detail::json;

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::EditFailed: return "EditFailed";
    case Verdict::ConfusionReported: return "ConfusionReported";
    case Verdict::NoConfusionReported: return "NoConfusionReported";
    case Verdict::Unparsed: return "Unparsed";
  }
  return "Unparsed";
}

const char* to_string(AutoFlag f) {
  switch (f) {
    case AutoFlag::ReversionInDialogue: return "ReversionInDialogue";
    case AutoFlag::TargetNegation: return "TargetNegation";
    case AutoFlag::TargetNeverAsserted: return "TargetNeverAsserted";
  }
  return "";
}

Verdict verdict_from_string(const std::string& s) {
  for (auto v : {Verdict::EditFailed, Verdict::ConfusionReported, Verdict::NoConfusionReported,
                 Verdict::Unparsed}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown verdict: " + s);
}

AutoFlag auto_flag_from_string(const std::string& s) {
  for (auto f : {AutoFlag::ReversionInDialogue, AutoFlag::TargetNegation,
                 AutoFlag::TargetNeverAsserted}) {
    if (s == to_string(f)) return f;
  }
  throw ConfigError("unknown auto flag: " + s);
}

int DialogueTranscript::user_turns() const {
  return static_cast<int>(std::count_if(turns.begin(), turns.end(), [](const ProbeTurn& t) {
    return t.role == ProbeRole::UserSim;
  }));
}

Verdict parse_verdict(const std::string& msg) {
  if (msg.find(templates::kEditFailed) != std::string::npos) return Verdict::EditFailed;
  if (msg.find(templates::kResultConfusion) != std::string::npos) return Verdict::ConfusionReported;
  if (msg.find(templates::kResultNoConfusion) != std::string::npos) {
    return Verdict::NoConfusionReported;
  }
  return Verdict::Unparsed;
}

std::string simulator_instruction(const FactEdit& fact) {
  const auto prompt = std::string(text::trim(fact.prompt_direct));
  return text::render(templates::kUserSimulator,
                      {{"subject", fact.subject},
                       {"original_fact", prompt + " " + fact.object_original},
                       {"target_fact", prompt + " " + fact.object_target}});
}

DialogueTranscript run_probe(ModelGateway& gateway, const EndpointConfig& simulator,
                             const EndpointConfig& subject, const FactEdit& fact,
                             int max_user_turns) {
  if (max_user_turns < 1) throw PreconditionError("run_probe: max_user_turns must be >= 1");
  max_user_turns = std::min(max_user_turns, 5);
  DialogueTranscript t;
  t.fact_id = fact.id;
  std::vector<Message> sim_history = {{"system", simulator_instruction(fact)},
                                      {"user", std::string(kProbeKickoff)}};
  std::vector<Message> subject_history;
  int index = 0;
  try {
    for (int k = 0; k < max_user_turns; ++k) {
      GenerationParams sp;
      sp.sample_id = fact.id + "|probe|sim" + std::to_string(k);
      auto question = gateway.generate(simulator, sim_history, sp).text;
      t.turns.push_back({ProbeRole::UserSim, question, index++});
      sim_history.push_back({"assistant", question});
      if (const auto v = parse_verdict(question); v != Verdict::Unparsed) {
        t.verdict = v;
        break;
      }
      subject_history.push_back({"user", question});
      GenerationParams ap;
      ap.sample_id = fact.id + "|probe|subject" + std::to_string(k);
      auto answer = gateway.generate(subject, subject_history, ap).text;
      t.turns.push_back({ProbeRole::Subject, answer, index++});
      subject_history.push_back({"assistant", answer});
      sim_history.push_back({"user", answer});
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::RequestFailed && e.kind() != ErrorKind::Endpoint) throw;
    t.error = e.what();
    t.verdict = Verdict::Unparsed;
    spdlog::warn("probe {} stopped: {}", fact.id, e.what());
  }
  t.auto_flags = detect_auto_flags(t, fact);
  return t;
}

bool is_negation_token(std::string_view tok) {
  static constexpr std::array<std::string_view, 18> kWords = {
      "not",    "no",     "never",  "isnt",  "wasnt",  "arent",   "werent", "doesnt", "dont",
      "didnt",  "cannot", "cant",   "wont",  "neither", "nor",    "instead", "rather", "longer"};
  return std::find(kWords.begin(), kWords.end(), tok) != kWords.end();
}

std::set<AutoFlag> detect_auto_flags(const DialogueTranscript& t, const FactEdit& fact) {
  const auto norm_o = normalize(fact.object_original);
  const auto norm_t = normalize(fact.object_target);
  const auto target_tokens = normalized_tokens(fact.object_target);
  std::set<AutoFlag> flags;
  bool target_seen = false;
  bool any_target = false;
  for (const auto& turn : t.turns) {
    if (turn.role != ProbeRole::Subject) continue;
    const auto norm = normalize(turn.text);
    const bool has_o = !norm_o.empty() && norm.find(norm_o) != std::string::npos;
    const bool has_t = !norm_t.empty() && norm.find(norm_t) != std::string::npos;
    if (has_o && target_seen) flags.insert(AutoFlag::ReversionInDialogue);
    if (has_t) {
      target_seen = true;
      any_target = true;
    }
    if (target_tokens.empty()) continue;
    const auto toks = normalized_tokens(turn.text);
    const auto m = target_tokens.size();
    for (std::size_t p = 0; p + m <= toks.size(); ++p) {
      if (!std::equal(target_tokens.begin(), target_tokens.end(), toks.begin() + static_cast<std::ptrdiff_t>(p))) {
        continue;
      }
      const auto lo = p >= kNegationWindow ? p - kNegationWindow : 0;
      const auto hi = std::min(toks.size(), p + m + kNegationWindow);
      for (std::size_t q = lo; q < hi; ++q) {
        if ((q < p || q >= p + m) && is_negation_token(toks[q])) {
          flags.insert(AutoFlag::TargetNegation);
          break;
        }
      }
    }
  }
  if (!any_target) flags.insert(AutoFlag::TargetNeverAsserted);
  return flags;
}

std::string annotation_sheet_csv(const std::vector<DialogueTranscript>& transcripts,
                                 const std::map<std::string, FactEdit>& facts) {
  std::vector<std::string> header = {"fact_id",        "subject",       "original", "target",
                                     "verdict",        "user_turns",    "error",
                                     "auto_reversion", "auto_target_negation",
                                     "auto_target_never_asserted"};
  for (auto c : kAnnotationCriteria) header.emplace_back(c);
  header.emplace_back("notes");
  std::string out = text::join(header, ",") + "\n";

  std::array<std::size_t, 3> auto_counts{};
  for (const auto& t : transcripts) {
    const auto it = facts.find(t.fact_id);
    const bool rev = t.auto_flags.contains(AutoFlag::ReversionInDialogue);
    const bool neg = t.auto_flags.contains(AutoFlag::TargetNegation);
    const bool never = t.auto_flags.contains(AutoFlag::TargetNeverAsserted);
    auto_counts[0] += rev;
    auto_counts[1] += neg;
    auto_counts[2] += never;
    std::vector<std::string> row = {
        text::csv_escape(t.fact_id),
        text::csv_escape(it == facts.end() ? "" : it->second.subject),
        text::csv_escape(it == facts.end() ? "" : it->second.object_original),
        text::csv_escape(it == facts.end() ? "" : it->second.object_target),
        to_string(t.verdict),
        std::to_string(t.user_turns()),
        text::csv_escape(text::replace_all(t.error, "\n", " ")),
        rev ? "1" : "0",
        neg ? "1" : "0",
        never ? "1" : "0"};
    for (std::size_t i = 0; i < kAnnotationCriteria.size(); ++i) row.emplace_back();
    row.emplace_back();
    out += text::join(row, ",") + "\n";
  }
  if (!transcripts.empty()) {
    const double n = static_cast<double>(transcripts.size());
    std::vector<std::string> row = {"summary", "", "", "", "", "", ""};
    for (auto c : auto_counts) row.push_back(fmt::format("{:.1f}", 100.0 * c / n));
    for (std::size_t i = 0; i <= kAnnotationCriteria.size(); ++i) row.emplace_back();
    out += text::join(row, ",") + "\n";
  }
  return out;
}

AnnotationSummary summarize_annotations(const std::string& csv) {
  AnnotationSummary s;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t start = 0;
  while (start < csv.size()) {
    const auto nl = csv.find('\n', start);
    const auto line = csv.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
    start = nl == std::string::npos ? csv.size() : nl + 1;
    if (text::trim(line).empty()) continue;
    auto fields = text::parse_csv_line(line);
    if (header.empty()) {
      header = std::move(fields);
      continue;
    }
    if (!fields.empty() && fields[0] == "summary") continue;
    rows.push_back(std::move(fields));
  }
  auto col = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };
  s.rows = rows.size();
  const double n = static_cast<double>(rows.size());
  for (const char* name : {"auto_reversion", "auto_target_negation", "auto_target_never_asserted"}) {
    const auto c = col(name);
    std::size_t hits = 0;
    for (const auto& r : rows) hits += c && *c < r.size() && r[*c] == "1";
    s.auto_percent[name] = rows.empty() ? 0.0 : 100.0 * static_cast<double>(hits) / n;
  }
  std::size_t confusion_rows = 0, confusion_hits = 0, halluc_rows = 0, halluc_hits = 0;
  for (std::size_t k = 0; k < kAnnotationCriteria.size(); ++k) {
    const auto c = col(kAnnotationCriteria[k]);
    std::size_t filled = 0, hits = 0;
    for (const auto& r : rows) {
      if (!c || *c >= r.size()) continue;
      const auto v = text::trim(r[*c]);
      if (v.empty()) continue;
      ++filled;
      hits += v == "1";
    }
    s.human_percent[std::string(kAnnotationCriteria[k])] =
        filled ? std::optional<double>(100.0 * static_cast<double>(hits) / static_cast<double>(filled))
               : std::nullopt;
  }
  // A row counts toward "any" once all three criteria of the group are filled.
  for (const auto& r : rows) {
    for (std::size_t group = 0; group < 2; ++group) {
      bool complete = true, any = false;
      for (std::size_t k = 3 * group; k < 3 * group + 3; ++k) {
        const auto c = col(kAnnotationCriteria[k]);
        const auto v = c && *c < r.size() ? text::trim(r[*c]) : std::string_view{};
        if (v.empty()) complete = false;
        any = any || v == "1";
      }
      if (!complete) continue;
      (group == 0 ? confusion_rows : halluc_rows)++;
      (group == 0 ? confusion_hits : halluc_hits) += any;
    }
  }
  if (confusion_rows) s.any_confusion = 100.0 * confusion_hits / static_cast<double>(confusion_rows);
  if (halluc_rows) s.any_hallucination = 100.0 * halluc_hits / static_cast<double>(halluc_rows);
  return s;
}

std::string transcript_to_json_line(const DialogueTranscript& t) {
  json turns = json::array();
  for (const auto& turn : t.turns) {
    turns.push_back({{"role", turn.role == ProbeRole::UserSim ? "user_sim" : "subject"},
                     {"text", turn.text},
                     {"turn_index", turn.turn_index}});
  }
  json flags = json::array();
  for (auto f : t.auto_flags) flags.push_back(to_string(f));
  json j = {{"fact_id", t.fact_id},
            {"turns", turns},
            {"verdict", to_string(t.verdict)},
            {"auto_flags", flags},
            {"error", t.error}};
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

DialogueTranscript transcript_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  DialogueTranscript t;
  t.fact_id = j.at("fact_id").get<std::string>();
  for (const auto& turn : j.at("turns")) {
    t.turns.push_back({turn.at("role").get<std::string>() == "user_sim" ? ProbeRole::UserSim
                                                                        : ProbeRole::Subject,
                       turn.at("text").get<std::string>(), turn.value("turn_index", 0)});
  }
  t.verdict = verdict_from_string(j.value("verdict", std::string{"Unparsed"}));
  for (const auto& f : j.value("auto_flags", json::array())) {
    t.auto_flags.insert(auto_flag_from_string(f.get<std::string>()));
  }
  t.error = j.value("error", std::string{});
  return t;
}

void write_transcripts_jsonl(const std::filesystem::path& path,
                             const std::vector<DialogueTranscript>& ts) {
  std::string out;
  for (const auto& t : ts) out += transcript_to_json_line(t) + "\n";
  detail::write_file(path, out);
}

std::vector<DialogueTranscript> read_transcripts_jsonl(const std::filesystem::path& path) {
  std::vector<DialogueTranscript> out;
  for (const auto& line : detail::read_lines(path)) {
    if (text::trim(line).empty()) continue;
    out.push_back(transcript_from_json_line(line));
  }
  return out;
}

}  // namespace editprobe
