#include "editprobe/attacks.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "editprobe/error.hpp"
#include "editprobe/hash.hpp"
#include "editprobe/metrics.hpp"
#include "editprobe/rng.hpp"
#include "editprobe/templates.hpp"
#include "editprobe/text.hpp"
#include "json_io.hpp"

namespace editprobe {

using detail::json;

const char* to_string(ContextKind k) {
  switch (k) {
    case ContextKind::None: return "None";
    case ContextKind::Related: return "Related";
    case ContextKind::NoisyContext: return "NoisyContext";
    case ContextKind::SimulatedDialogue: return "SimulatedDialogue";
    case ContextKind::NoisyDialogue: return "NoisyDialogue";
  }
  return "None";
}

const char* to_string(QueryKind k) {
  switch (k) {
    case QueryKind::Direct: return "Direct";
    case QueryKind::Equivalent: return "Equivalent";
    case QueryKind::Cloze: return "Cloze";
    case QueryKind::Reference: return "Reference";
    case QueryKind::DoubtOnly: return "DoubtOnly";
    case QueryKind::DoubtSuggest: return "DoubtSuggest";
  }
  return "Direct";
}

ContextKind context_kind_from_string(const std::string& s) {
  for (auto k : {ContextKind::None, ContextKind::Related, ContextKind::NoisyContext,
                 ContextKind::SimulatedDialogue, ContextKind::NoisyDialogue}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown context kind: " + s);
}

QueryKind query_kind_from_string(const std::string& s) {
  for (auto k : {QueryKind::Direct, QueryKind::Equivalent, QueryKind::Cloze, QueryKind::Reference,
                 QueryKind::DoubtOnly, QueryKind::DoubtSuggest}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown query kind: " + s);
}

std::string to_string(const Cell& c) {
  return std::string(to_string(c.context)) + "/" + to_string(c.query);
}

Cell cell_from_string(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) throw ConfigError("cell must look like Context/Query: " + s);
  return {context_kind_from_string(std::string(text::trim(s.substr(0, slash)))),
          query_kind_from_string(std::string(text::trim(s.substr(slash + 1))))};
}

std::vector<Cell> standard_grid() {
  std::vector<Cell> cells = {{ContextKind::None, QueryKind::Direct},
                             {ContextKind::None, QueryKind::Equivalent},
                             {ContextKind::None, QueryKind::Cloze}};
  for (auto c : {ContextKind::Related, ContextKind::NoisyContext, ContextKind::SimulatedDialogue,
                 ContextKind::NoisyDialogue}) {
    for (auto q : {QueryKind::Direct, QueryKind::Cloze, QueryKind::Reference}) {
      cells.push_back({c, q});
    }
  }
  cells.push_back({ContextKind::None, QueryKind::DoubtOnly});
  cells.push_back({ContextKind::None, QueryKind::DoubtSuggest});
  return cells;
}

std::vector<Cell> parse_cells(const std::string& spec) {
  const auto trimmed = std::string(text::trim(spec));
  if (trimmed.empty() || trimmed == "all") return standard_grid();
  std::vector<Cell> cells;
  std::size_t start = 0;
  while (start <= trimmed.size()) {
    const auto comma = trimmed.find(',', start);
    const auto item = text::trim(std::string_view(trimmed).substr(
        start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!item.empty()) {
      const auto c = cell_from_string(std::string(item));
      if (c.query == QueryKind::Reference && c.context == ContextKind::None) {
        throw ConfigError("None/Reference is not a valid cell: a reference query needs a context");
      }
      if (std::find(cells.begin(), cells.end(), c) == cells.end()) cells.push_back(c);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::string AttackPrompt::sample_id() const {
  return fact_id + "|" + to_string(context_kind) + "|" + to_string(query_kind) + "|" +
         std::to_string(variant);
}

std::vector<Message> to_messages(const AttackPrompt& a) {
  if (a.turns.empty()) return {{"user", a.text}};
  std::vector<Message> out;
  out.reserve(a.turns.size());
  for (const auto& t : a.turns) {
    out.push_back({t.role == Speaker::User ? "user" : "assistant", t.text});
  }
  return out;
}

namespace {

bool mentions(const std::string& sentence, const std::vector<std::string>& answer_tokens) {
  return contains_token_run(normalized_tokens(sentence), answer_tokens);
}

Unavailable unavailable(const char* component, const std::string& what) {
  return Unavailable(component, std::string(component) + ": " + what);
}

}  // namespace

std::string remove_answer_sentences(const std::string& input, const std::string& answer) {
  const auto norm_answer = normalize(answer);
  if (norm_answer.empty()) return input;
  const auto answer_tokens = normalized_tokens(answer);
  const auto sentences = text::split_sentences(input);

  auto keep = [&](bool substring_rule) {
    std::string out;
    for (const auto& s : sentences) {
      const bool hit = substring_rule ? normalize(s).find(norm_answer) != std::string::npos
                                      : mentions(s, answer_tokens);
      if (hit) {
        spdlog::debug("dropping sentence mentioning '{}': {}", answer, text::trim(s));
        continue;
      }
      if (text::word_count(s) < 3) spdlog::debug("short segment kept: '{}'", text::trim(s));
      out += s;
    }
    return out;
  };

  auto out = keep(false);
  if (normalize(out).find(norm_answer) != std::string::npos) out = keep(true);
  return std::string(text::trim(out));
}

std::string build_related_context(const FactEdit& fact, const ProfileText& profile,
                                  std::size_t max_words) {
  const auto stripped = remove_answer_sentences(profile.text, fact.object_original);
  const auto context = truncate_to_sentences(stripped, max_words);
  if (text::trim(context).empty()) {
    throw unavailable("ContextUnavailable",
                      "every profile sentence of '" + fact.subject + "' mentions the answer");
  }
  const auto norm_o = normalize(fact.object_original);
  if (!norm_o.empty() && normalize(context).find(norm_o) != std::string::npos) {
    throw unavailable("ContextUnavailable", "answer survives sentence removal for " + fact.id);
  }
  return context;
}

std::size_t choose_noise_fact(const std::vector<FactEdit>& facts, const FactEdit& fact,
                              std::uint64_t seed) {
  if (facts.empty()) throw unavailable("ContextUnavailable", "no facts to draw noise from");
  SeededRng rng(seed);
  const auto n = facts.size();
  const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
  for (std::size_t k = 0; k < n; ++k) {
    const auto idx = (start + k) % n;
    if (facts[idx].subject != fact.subject) return idx;
  }
  throw unavailable("ContextUnavailable", "no noise subject differs from '" + fact.subject + "'");
}

std::string build_noisy_context(const FactEdit& fact, const std::string& related,
                                const ProfileText& other_profile, std::size_t max_words) {
  if (other_profile.subject == fact.subject) {
    throw PreconditionError("noise profile must be about another subject than " + fact.subject);
  }
  const auto noise = truncate_to_sentences(
      remove_answer_sentences(other_profile.text, fact.object_original), max_words);
  if (noise.empty()) return related;
  return noise + std::string(kNoiseSeparator) + related;
}

int sample_dialogue_rounds(std::uint64_t seed) {
  static constexpr std::array<double, 3> kWeights = {1.0, 2.0, 2.0};
  SeededRng rng(seed);
  return 3 + static_cast<int>(rng.weighted_index(kWeights));
}

std::vector<DialogueTurn> parse_dialogue(const std::string& input) {
  static const std::array<std::pair<std::string_view, Speaker>, 4> kPrefixes = {{
      {"user:", Speaker::User},
      {"human:", Speaker::User},
      {"ai:", Speaker::Ai},
      {"assistant:", Speaker::Ai},
  }};
  std::vector<DialogueTurn> turns;
  std::size_t start = 0;
  while (start <= input.size()) {
    const auto nl = input.find('\n', start);
    auto line = text::trim(std::string_view(input).substr(
        start, nl == std::string::npos ? std::string::npos : nl - start));
    while (!line.empty() && line.front() == '*') line.remove_prefix(1);
    if (!line.empty()) {
      const auto lower = text::ascii_lower(line.substr(0, std::min<std::size_t>(line.size(), 12)));
      bool matched = false;
      for (const auto& [prefix, speaker] : kPrefixes) {
        if (lower.starts_with(prefix)) {
          auto rest = line.substr(prefix.size());
          while (!rest.empty() && rest.front() == '*') rest.remove_prefix(1);
          turns.push_back({speaker, std::string(text::trim(rest))});
          matched = true;
          break;
        }
      }
      if (!matched && !turns.empty()) {
        auto& last = turns.back().text;
        if (!last.empty()) last += ' ';
        last += line;
      }
    }
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  return turns;
}

void check_alternation(const std::vector<DialogueTurn>& turns) {
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto expected = i % 2 == 0 ? Speaker::User : Speaker::Ai;
    if (turns[i].role != expected) {
      throw InvariantViolation("dialogue roles do not alternate at turn " + std::to_string(i));
    }
  }
}

SimulatedDialogue build_simulated_dialogue(const FactEdit& fact, const std::string& grounding,
                                           const RewriterContext& rw, std::uint64_t seed) {
  if (!rw.gateway || !rw.endpoint) {
    throw unavailable("DialogueUnavailable", "no rewriter endpoint configured");
  }
  SimulatedDialogue out;
  out.rounds = sample_dialogue_rounds(derive_seed(seed, "rounds"));
  const auto prompt = text::render(templates::kDialogueSynthesis,
                                   {{"subject", fact.subject},
                                    {"rounds", std::to_string(out.rounds)},
                                    {"profile", grounding}});
  const auto norm_o = normalize(fact.object_original);
  std::string why;
  for (int attempt = 0; attempt <= rw.retries; ++attempt) {
    GenerationParams params;
    params.seed = derive_seed(seed, "attempt:" + std::to_string(attempt));
    params.sample_id = fact.id + "|dialogue|" + std::to_string(attempt);
    params.max_tokens = 160 * out.rounds;
    std::string reply;
    try {
      reply = rw.gateway->generate(*rw.endpoint, {{"user", prompt}}, params).text;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::RequestFailed && e.kind() != ErrorKind::Endpoint) throw;
      throw unavailable("DialogueUnavailable", e.what());
    }
    out.transcript += "### attempt " + std::to_string(attempt) + "\n" + reply + "\n";
    auto turns = parse_dialogue(reply);
    if (turns.size() != static_cast<std::size_t>(2 * out.rounds)) {
      why = "expected " + std::to_string(2 * out.rounds) + " utterances, got " +
            std::to_string(turns.size());
      continue;
    }
    try {
      check_alternation(turns);
    } catch (const InvariantViolation&) {
      why = "roles do not alternate";
      continue;
    }
    const bool empty_turn = std::any_of(turns.begin(), turns.end(),
                                        [](const DialogueTurn& t) { return t.text.empty(); });
    const bool leaks = std::any_of(turns.begin(), turns.end(), [&](const DialogueTurn& t) {
      return normalize(t.text).find(norm_o) != std::string::npos;
    });
    if (empty_turn || leaks) {
      why = leaks ? "dialogue mentions the original answer" : "empty utterance";
      continue;
    }
    out.turns = std::move(turns);
    return out;
  }
  throw unavailable("DialogueUnavailable", fact.id + ": " + why);
}

std::vector<DialogueTurn> build_noisy_dialogue(const FactEdit& fact,
                                               const std::vector<DialogueTurn>& sim,
                                               const DialogueClip& clip, std::uint64_t seed) {
  check_alternation(sim);
  validate(clip);
  std::vector<DialogueTurn> noise;
  for (const auto& t : clip.turns) {
    auto cleaned = remove_answer_sentences(t.text, fact.object_original);
    if (cleaned.empty()) continue;
    if (noise.empty() && t.role != Speaker::User) continue;
    noise.push_back({t.role, std::move(cleaned)});
  }

  SeededRng rng(seed);
  const auto boundaries = static_cast<std::int64_t>(sim.size() / 2);
  const auto at = static_cast<std::size_t>(2 * rng.uniform_int(0, boundaries));

  std::vector<DialogueTurn> merged;
  auto push = [&](const DialogueTurn& t) {
    if (!merged.empty() && merged.back().role == t.role) {
      merged.back().text += ' ' + t.text;
    } else {
      merged.push_back(t);
    }
  };
  for (std::size_t i = 0; i < at; ++i) push(sim[i]);
  for (const auto& t : noise) push(t);
  for (std::size_t i = at; i < sim.size(); ++i) push(sim[i]);
  return merged;
}

std::vector<std::string> parse_numbered_list(const std::string& input) {
  std::vector<std::string> items;
  std::size_t start = 0;
  while (start <= input.size()) {
    const auto nl = input.find('\n', start);
    const auto line = text::trim(std::string_view(input).substr(
        start, nl == std::string::npos ? std::string::npos : nl - start));
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i + 1 < line.size() && (line[i] == '.' || line[i] == ')') &&
        text::is_ascii_space(line[i + 1])) {
      items.emplace_back(text::trim(line.substr(i + 1)));
    } else if (!line.empty() && !items.empty()) {
      items.back() += ' ';
      items.back() += line;
    }
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  return items;
}

std::optional<std::string> cloze_from_candidate(const std::string& candidate,
                                                const std::string& object) {
  auto c = std::string(text::trim(candidate));
  if (c.size() >= 2 && c.front() == '"' && c.back() == '"') c = c.substr(1, c.size() - 2);
  const auto bracket = "[" + object + "]";
  const auto first = c.find(bracket);
  if (first == std::string::npos) return std::nullopt;
  if (c.find(bracket, first + bracket.size()) != std::string::npos) return std::nullopt;
  if (c.find(templates::kBlankMarker) != std::string::npos) return std::nullopt;
  auto out = c.substr(0, first) + std::string(templates::kBlankMarker) +
             c.substr(first + bracket.size());
  const auto norm_o = normalize(object);
  if (norm_o.empty() || normalize(out).find(norm_o) != std::string::npos) return std::nullopt;
  return out;
}

ClozeBuild build_cloze(const FactEdit& fact, const RewriterContext& rw, std::uint64_t seed) {
  if (!rw.gateway || !rw.endpoint) {
    throw unavailable("ClozeUnavailable", "no rewriter endpoint configured");
  }
  const auto prompt = text::render(
      templates::kClozeRewrite,
      {{"direct_prompt", fact.prompt_direct}, {"object", fact.object_original}});
  ClozeBuild out;
  for (int attempt = 0; attempt <= rw.retries; ++attempt) {
    GenerationParams params;
    params.seed = derive_seed(seed, "attempt:" + std::to_string(attempt));
    params.sample_id = fact.id + "|cloze|" + std::to_string(attempt);
    params.max_tokens = 400;
    std::string reply;
    try {
      reply = rw.gateway->generate(*rw.endpoint, {{"user", prompt}}, params).text;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::RequestFailed && e.kind() != ErrorKind::Endpoint) throw;
      throw unavailable("ClozeUnavailable", e.what());
    }
    out.transcript += "### attempt " + std::to_string(attempt) + "\n" + reply + "\n";
    auto candidates = parse_numbered_list(reply);
    if (candidates.empty()) candidates.push_back(reply);
    if (candidates.size() > static_cast<std::size_t>(rw.candidates)) {
      candidates.resize(static_cast<std::size_t>(rw.candidates));
    }
    for (const auto& cand : candidates) {
      if (auto cloze = cloze_from_candidate(cand, fact.object_original)) {
        out.cloze.text_with_blank = std::move(*cloze);
        out.cloze.blank_marker = std::string(templates::kBlankMarker);
        out.cloze.original_sentence = cand;
        return out;
      }
    }
  }
  throw unavailable("ClozeUnavailable", fact.id + ": no rewrite keeps [" + fact.object_original +
                                            "] exactly once");
}

std::optional<std::string> parse_pronoun(const std::string& answer) {
  static const std::map<std::string, std::string, std::less<>> kNominative = {
      {"he", "he"},   {"she", "she"}, {"it", "it"},   {"they", "they"}, {"him", "he"},
      {"them", "they"}, {"his", "he"}, {"her", "she"}, {"its", "it"},   {"their", "they"}};
  const auto tokens = text::whitespace_tokens(answer);
  if (tokens.empty()) return std::nullopt;
  std::string word;
  for (char c : tokens.front()) {
    if (std::isalpha(static_cast<unsigned char>(c))) word += c;
  }
  word = text::ascii_lower(word);
  auto it = kNominative.find(word);
  if (it == kNominative.end()) return std::nullopt;
  return it->second;
}

PronounChoice choose_pronoun(const std::string& subject, const RewriterContext& rw,
                             std::uint64_t seed) {
  PronounChoice out;
  if (!rw.gateway || !rw.endpoint) {
    throw unavailable("ReferenceUnavailable", "no rewriter endpoint configured");
  }
  const auto prompt = text::render(templates::kPronounChoice, {{"subject", subject}});
  GenerationParams params;
  params.seed = derive_seed(seed, "attempt:0");
  params.sample_id = subject + "|pronoun";
  params.max_tokens = 8;
  try {
    out.raw = rw.gateway->generate(*rw.endpoint, {{"user", prompt}}, params).text;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::RequestFailed && e.kind() != ErrorKind::Endpoint) throw;
    throw unavailable("ReferenceUnavailable", e.what());
  }
  if (auto p = parse_pronoun(out.raw)) {
    out.pronoun = *p;
  } else {
    spdlog::info("pronoun answer '{}' for '{}' not in the list; using 'it'", out.raw, subject);
    out.pronoun = "it";
    out.fallback = true;
  }
  return out;
}

std::string apply_pronoun(const std::string& prompt, const std::string& subject,
                          const std::string& pronoun) {
  static const std::map<std::string, std::pair<std::string, std::string>, std::less<>> kForms = {
      {"he", {"him", "his"}}, {"she", {"her", "her"}}, {"it", {"it", "its"}},
      {"they", {"them", "their"}}};
  const auto forms = kForms.find(pronoun);
  if (forms == kForms.end()) throw PreconditionError("not a nominative pronoun: " + pronoun);
  const auto pos = subject.empty() ? std::string::npos : prompt.find(subject);
  if (pos == std::string::npos) {
    throw unavailable("ReferenceUnavailable", "'" + subject + "' does not occur in the prompt");
  }

  std::size_t before = pos;
  while (before > 0 && text::is_ascii_space(prompt[before - 1])) --before;
  const bool sentence_start =
      before == 0 || prompt[before - 1] == '.' || prompt[before - 1] == '?' ||
      prompt[before - 1] == '!' || prompt[before - 1] == '"' || prompt[before - 1] == ':';

  std::size_t end = pos + subject.size();
  std::string word;
  if (prompt.compare(end, 2, "'s") == 0) {
    word = forms->second.second;
    end += 2;
  } else if (prompt.compare(end, 4, "\xE2\x80\x99s") == 0) {
    word = forms->second.second;
    end += 4;
  } else {
    word = sentence_start ? pronoun : forms->second.first;
  }
  if (sentence_start) word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
  return prompt.substr(0, pos) + word + prompt.substr(end);
}

std::string doubt_followup(const FactEdit& fact, QueryKind kind) {
  switch (kind) {
    case QueryKind::DoubtOnly:
      return text::render(templates::kDoubtOnly, {{"prompt", fact.prompt_direct}});
    case QueryKind::DoubtSuggest:
      return text::render(templates::kDoubtSuggest, {{"prompt", fact.prompt_direct},
                                                     {"original_answer", fact.object_original}});
    default:
      throw PreconditionError(std::string("not a doubt kind: ") + to_string(kind));
  }
}

std::string doubt_round_two(const std::string& prompt, const std::string& first_output,
                            const std::string& followup) {
  const bool need_space = !prompt.empty() && !first_output.empty() &&
                          !text::is_ascii_space(prompt.back()) &&
                          !text::is_ascii_space(first_output.front());
  return prompt + (need_space ? " " : "") + first_output + followup;
}

AttackBuilder::AttackBuilder(AttackConfig cfg, std::vector<FactEdit> facts,
                             std::vector<DialogueClip> clips, ProfileProvider profiles,
                             ModelGateway* gateway, const EndpointConfig* rewriter,
                             std::uint64_t seed)
    : cfg_(cfg),
      facts_(std::move(facts)),
      clips_(std::move(clips)),
      profiles_(std::move(profiles)),
      gateway_(gateway),
      rewriter_(rewriter),
      seed_(seed) {}

namespace {

// A sub-builder result or the reason it is unavailable. Built at most once.
template <class T>
class Lazy {
 public:
  template <class F>
  const T& get(F&& build) {
    if (!done_) {
      done_ = true;
      try {
        value_.emplace(build());
      } catch (const Unavailable& e) {
        component_ = e.component();
        reason_ = e.what();
      }
    }
    if (!value_) throw Unavailable(component_, reason_);
    return *value_;
  }

 private:
  bool done_ = false;
  std::optional<T> value_;
  std::string component_;
  std::string reason_;
};

}  // namespace

std::vector<AttackPrompt> AttackBuilder::build_fact(const FactEdit& fact,
                                                    const std::vector<Cell>& cells) {
  const auto fact_seed = derive_seed(seed_, "fact:" + fact.id);
  const RewriterContext rw{gateway_, rewriter_, cfg_.rewriter_candidates, cfg_.rewriter_retries};

  auto fetch = [&](const std::string& subject) {
    try {
      return profiles_(subject);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NotFound || e.kind() == ErrorKind::Transient ||
          e.kind() == ErrorKind::Precondition) {
        throw unavailable("ContextUnavailable", e.what());
      }
      throw;
    }
  };

  Lazy<std::string> related;
  Lazy<std::pair<std::string, std::string>> noisy;  // (text, noise subject)
  Lazy<SimulatedDialogue> sim;
  Lazy<std::pair<std::vector<DialogueTurn>, std::string>> noisy_dialogue;  // (turns, clip id)
  Lazy<ClozeBuild> cloze;
  Lazy<PronounChoice> pronoun;

  auto get_related = [&]() -> const std::string& {
    return related.get(
        [&] { return build_related_context(fact, fetch(fact.subject), cfg_.context_words); });
  };
  auto get_noisy = [&]() -> const std::pair<std::string, std::string>& {
    return noisy.get([&] {
      const auto& rel = get_related();
      const auto idx = choose_noise_fact(facts_, fact, derive_seed(fact_seed, "noise"));
      const auto other = fetch(facts_[idx].subject);
      return std::make_pair(build_noisy_context(fact, rel, other, cfg_.context_words),
                            facts_[idx].subject);
    });
  };
  auto get_sim = [&]() -> const SimulatedDialogue& {
    return sim.get(
        [&] { return build_simulated_dialogue(fact, get_related(), rw, derive_seed(fact_seed, "dialogue")); });
  };
  auto get_noisy_dialogue = [&]() -> const std::pair<std::vector<DialogueTurn>, std::string>& {
    return noisy_dialogue.get([&] {
      const auto& s = get_sim();
      if (clips_.empty()) throw unavailable("DialogueUnavailable", "no dialogue clips loaded");
      SeededRng pick(derive_seed(fact_seed, "clip"));
      const auto& clip = clips_[static_cast<std::size_t>(
          pick.uniform_int(0, static_cast<std::int64_t>(clips_.size()) - 1))];
      return std::make_pair(
          build_noisy_dialogue(fact, s.turns, clip, derive_seed(fact_seed, "insert")),
          clip.source);
    });
  };
  auto get_cloze = [&]() -> const ClozeBuild& {
    return cloze.get([&] { return build_cloze(fact, rw, derive_seed(fact_seed, "cloze")); });
  };
  auto get_pronoun = [&]() -> const PronounChoice& {
    return pronoun.get(
        [&] { return choose_pronoun(fact.subject, rw, derive_seed(fact_seed, "pronoun")); });
  };

  std::vector<AttackPrompt> out;
  for (const auto& cell : cells) {
    if (cell.query == QueryKind::Reference && cell.context == ContextKind::None) {
      throw PreconditionError("a reference query needs a context");
    }
    const int variants = cell.query == QueryKind::Equivalent
                             ? std::max<int>(1, static_cast<int>(fact.prompts_equivalent.size()))
                             : 1;
    for (int v = 0; v < variants; ++v) {
      AttackPrompt a;
      a.fact_id = fact.id;
      a.context_kind = cell.context;
      a.query_kind = cell.query;
      a.variant = v;
      a.seed = fact_seed;
      try {
        switch (cell.query) {
          case QueryKind::Direct:
          case QueryKind::DoubtOnly:
          case QueryKind::DoubtSuggest:
            a.query = fact.prompt_direct;
            break;
          case QueryKind::Equivalent:
            if (fact.prompts_equivalent.empty()) {
              throw unavailable("EquivalentUnavailable", fact.id + " has no equivalent prompts");
            }
            a.query = fact.prompts_equivalent[static_cast<std::size_t>(v)];
            break;
          case QueryKind::Cloze: {
            const auto& c = get_cloze();
            a.query = std::string(templates::kClozePrefix) + c.cloze.text_with_blank;
            a.provenance["cloze_source"] = c.cloze.original_sentence;
            a.provenance["cloze_transcript"] = c.transcript;
            break;
          }
          case QueryKind::Reference: {
            const auto& p = get_pronoun();
            a.query = apply_pronoun(fact.prompt_direct, fact.subject, p.pronoun);
            a.provenance["pronoun"] = p.pronoun;
            a.provenance["pronoun_raw"] = p.raw;
            if (p.fallback) a.provenance["pronoun_fallback"] = "true";
            break;
          }
        }
        switch (cell.context) {
          case ContextKind::None:
            a.text = a.query;
            break;
          case ContextKind::Related:
            a.context = get_related();
            a.text = a.context + "\n" + a.query;
            break;
          case ContextKind::NoisyContext: {
            const auto& [noisy_text, noise_subject] = get_noisy();
            a.context = noisy_text;
            a.text = a.context + "\n" + a.query;
            a.provenance["noise_subject"] = noise_subject;
            break;
          }
          case ContextKind::SimulatedDialogue:
          case ContextKind::NoisyDialogue: {
            const auto& s = get_sim();
            a.provenance["dialogue_rounds"] = std::to_string(s.rounds);
            a.provenance["dialogue_transcript"] = s.transcript;
            a.provenance["dialogue_transcript_id"] = sha256_hex(s.transcript).substr(0, 16);
            if (cell.context == ContextKind::SimulatedDialogue) {
              a.turns = s.turns;
            } else {
              const auto& [turns, clip_id] = get_noisy_dialogue();
              a.turns = turns;
              a.provenance["clip_id"] = clip_id;
            }
            if (!a.turns.empty() && a.turns.back().role == Speaker::User) {
              a.turns.back().text += ' ' + a.query;
            } else {
              a.turns.push_back({Speaker::User, a.query});
            }
            break;
          }
        }
      } catch (const Unavailable& e) {
        a.context.clear();
        a.text.clear();
        a.turns.clear();
        a.skip_reason = e.what();
      }
      out.push_back(std::move(a));
    }
  }
  return out;
}

std::vector<AttackPrompt> AttackBuilder::build_all(const std::vector<Cell>& cells) {
  std::vector<std::vector<AttackPrompt>> per_fact(facts_.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr error;
  auto worker = [&] {
    while (true) {
      const auto i = next.fetch_add(1);
      if (i >= facts_.size()) return;
      {
        std::lock_guard lock(err_mu);
        if (error) return;
      }
      try {
        per_fact[i] = build_fact(facts_[i], cells);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const auto n = std::max(1, std::min<int>(cfg_.workers, static_cast<int>(facts_.size())));
  std::vector<std::jthread> pool;
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  pool.clear();
  if (error) std::rethrow_exception(error);

  std::vector<AttackPrompt> out;
  for (auto& v : per_fact) {
    for (auto& a : v) out.push_back(std::move(a));
  }
  return out;
}

std::string attack_to_json_line(const AttackPrompt& a) {
  json j;
  j["fact_id"] = a.fact_id;
  j["context_kind"] = to_string(a.context_kind);
  j["query_kind"] = to_string(a.query_kind);
  j["variant"] = a.variant;
  j["context"] = a.context;
  j["query"] = a.query;
  j["text"] = a.text;
  json turns = json::array();
  for (const auto& t : a.turns) {
    turns.push_back({{"role", t.role == Speaker::User ? "user" : "ai"}, {"text", t.text}});
  }
  j["turns"] = std::move(turns);
  j["seed"] = a.seed;
  j["provenance"] = a.provenance;
  j["skip_reason"] = a.skip_reason ? json(*a.skip_reason) : json(nullptr);
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

AttackPrompt attack_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  AttackPrompt a;
  a.fact_id = j.at("fact_id").get<std::string>();
  a.context_kind = context_kind_from_string(j.at("context_kind").get<std::string>());
  a.query_kind = query_kind_from_string(j.at("query_kind").get<std::string>());
  a.variant = j.value("variant", 0);
  a.context = j.value("context", std::string{});
  a.query = j.value("query", std::string{});
  a.text = j.value("text", std::string{});
  for (const auto& t : j.value("turns", json::array())) {
    a.turns.push_back({t.at("role").get<std::string>() == "user" ? Speaker::User : Speaker::Ai,
                       t.at("text").get<std::string>()});
  }
  a.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("provenance")) {
    a.provenance = j["provenance"].get<std::map<std::string, std::string>>();
  }
  if (j.contains("skip_reason") && j["skip_reason"].is_string()) {
    a.skip_reason = j["skip_reason"].get<std::string>();
  }
  return a;
}

void write_attacks_jsonl(const std::filesystem::path& path, const std::vector<AttackPrompt>& a) {
  std::string out;
  for (const auto& x : a) out += attack_to_json_line(x) + "\n";
  detail::write_file(path, out);
}

std::vector<AttackPrompt> read_attacks_jsonl(const std::filesystem::path& path) {
  std::vector<AttackPrompt> out;
  for (const auto& line : detail::read_lines(path)) {
    if (text::trim(line).empty()) continue;
    out.push_back(attack_from_json_line(line));
  }
  return out;
}

}  // namespace editprobe
