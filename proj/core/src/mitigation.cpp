#include "editprobe/mitigation.hpp"

#include <spdlog/spdlog.h>

#include "editprobe/error.hpp"
#include "editprobe/templates.hpp"
#include "editprobe/text.hpp"

namespace editprobe {

const char* to_string(MitigationMode m) {
  switch (m) {
    case MitigationMode::None: return "None";
    case MitigationMode::Disentangle: return "Disentangle";
    case MitigationMode::DisentangleExternal: return "DisentangleExternal";
    case MitigationMode::PronounResolve: return "PronounResolve";
  }
  return "None";
}

MitigationMode mitigation_mode_from_string(const std::string& s) {
  for (auto m : {MitigationMode::None, MitigationMode::Disentangle,
                 MitigationMode::DisentangleExternal, MitigationMode::PronounResolve}) {
    if (text::ascii_lower(s) == text::ascii_lower(to_string(m))) return m;
  }
  throw ConfigError("unknown mitigation mode: " + s);
}

void MitigationConfig::validate() const {
  if (mode == MitigationMode::DisentangleExternal && !extractor) {
    throw ConfigError("DisentangleExternal needs an extractor endpoint");
  }
  if (extractor) extractor->validate();
}

namespace {

bool is_terminator(char c) { return c == '.' || c == '?' || c == '!' || c == '\n'; }

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || u >= 0x80;
}

}  // namespace

std::string last_sentence(std::string_view s) {
  while (!s.empty() && text::is_ascii_space(s.back())) s.remove_suffix(1);
  if (s.empty()) return {};
  std::size_t end = s.size();
  std::size_t i = end - 1;
  // The closing terminator(s) belong to the last sentence.
  while (i > 0 && is_terminator(s[i]) && s[i] != '\n') --i;
  while (i > 0 && !is_terminator(s[i - 1])) --i;
  if (i == 0 && is_terminator(s[0]) && end > 1) i = 1;
  return std::string(text::trim(s.substr(i)));
}

bool pronoun_trigger(std::string_view input, std::string_view subject) {
  const auto sentence = last_sentence(input);
  const auto lower = text::ascii_lower(sentence);
  if (!subject.empty() && lower.find(text::ascii_lower(subject)) != std::string::npos) return false;
  std::size_t i = 0;
  while (i < lower.size()) {
    while (i < lower.size() && !std::isalpha(static_cast<unsigned char>(lower[i]))) ++i;
    std::size_t j = i;
    while (j < lower.size() && std::isalpha(static_cast<unsigned char>(lower[j]))) ++j;
    if (j > i) {
      const bool left_ok = i == 0 || !is_word_char(lower[i - 1]);
      const bool right_ok = j == lower.size() || !is_word_char(lower[j]);
      const auto word = std::string_view(lower).substr(i, j - i);
      if (left_ok && right_ok) {
        for (auto p : templates::kPronouns) {
          if (word == p) return true;
        }
      }
    }
    i = j;
  }
  return false;
}

std::string clean_extraction(std::string_view raw) {
  auto s = text::trim(raw);
  const auto nl = s.find('\n');
  auto line = std::string(text::trim(s.substr(0, nl)));
  auto strip = [](std::string& x) {
    while (!x.empty() && (x.front() == '"' || x.front() == '\'')) x.erase(0, 1);
    while (!x.empty() && (x.back() == '"' || x.back() == '\'')) x.pop_back();
  };
  strip(line);
  return std::string(text::trim(line));
}

Mitigator::Mitigator(MitigationConfig cfg, ModelGateway& gateway, const EndpointConfig& subject)
    : cfg_(std::move(cfg)), gateway_(gateway), subject_(subject) {
  cfg_.validate();
}

std::string Mitigator::extract(const EndpointConfig& ep, const std::string& attack_text,
                               const GenerationParams& params) {
  GenerationParams p = params;
  p.sample_id = params.sample_id + "|extract";
  p.max_tokens = 48;
  const auto prompt = text::render(templates::kKnowledgeExtraction, {{"prompt", attack_text}});
  return clean_extraction(gateway_.generate(ep, {{"user", prompt}}, p).text);
}

GenerationResult Mitigator::second_step(std::vector<Message> messages,
                                        const std::string& extraction,
                                        const GenerationParams& params) {
  messages.back().text += "\n" + extraction;
  return gateway_.generate(subject_, std::move(messages), params);
}

GenerationResult Mitigator::generate(const FactEdit& fact, const std::vector<Message>& messages,
                                     const GenerationParams& params, MitigationTrace& trace) {
  if (messages.empty()) throw PreconditionError("mitigation: messages must not be empty");
  const auto attack_text = flatten_messages(messages);
  switch (cfg_.mode) {
    case MitigationMode::None:
      return gateway_.generate(subject_, messages, params);

    case MitigationMode::Disentangle:
    case MitigationMode::DisentangleExternal: {
      trace.applied = true;
      std::string extraction;
      if (cfg_.mode == MitigationMode::DisentangleExternal) {
        try {
          extraction = extract(*cfg_.extractor, attack_text, params);
        } catch (const Error& e) {
          if (!cfg_.fallback_to_self ||
              (e.kind() != ErrorKind::RequestFailed && e.kind() != ErrorKind::Endpoint)) {
            throw;
          }
          trace.events.push_back(std::string("extractor failed, using subject: ") + e.what());
          extraction = extract(subject_, attack_text, params);
        }
      } else {
        extraction = extract(subject_, attack_text, params);
      }
      trace.extraction = extraction;
      if (extraction.empty()) {
        trace.events.push_back("empty extraction");
        spdlog::info("sample {}: empty extraction, answering from the attack alone",
                     params.sample_id);
        return gateway_.generate(subject_, messages, params);
      }
      return second_step(messages, extraction, params);
    }

    case MitigationMode::PronounResolve: {
      if (!pronoun_trigger(messages.back().text, fact.subject)) {
        return gateway_.generate(subject_, messages, params);
      }
      trace.applied = true;
      const auto extraction = extract(subject_, attack_text, params);
      trace.extraction = extraction;
      if (text::ascii_lower(extraction).find(text::ascii_lower(fact.subject)) == std::string::npos) {
        trace.events.push_back("rewrite lacks the subject");
        spdlog::info("sample {}: pronoun rewrite '{}' lacks '{}', using the original text",
                     params.sample_id, extraction, fact.subject);
        return gateway_.generate(subject_, messages, params);
      }
      return second_step(messages, extraction, params);
    }
  }
  return gateway_.generate(subject_, messages, params);
}

}  // namespace editprobe
