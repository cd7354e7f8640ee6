#pragma once

#include <optional>
#include <string>
#include <vector>

#include "editprobe/corpus.hpp"
#include "editprobe/gateway.hpp"

namespace editprobe {

enum class MitigationMode { None, Disentangle, DisentangleExternal, PronounResolve };

const char* to_string(MitigationMode m);
MitigationMode mitigation_mode_from_string(const std::string& s);

struct MitigationConfig {
  MitigationMode mode = MitigationMode::None;
  std::optional<EndpointConfig> extractor;
  /// DisentangleExternal only: extract with the subject itself when the
  /// external endpoint fails.
  bool fallback_to_self = false;

  /// Throws ConfigError if DisentangleExternal has no extractor.
  void validate() const;
};

/// Last sentence of `text`, using the first_sentence terminators scanned from
/// the end; a terminator closing the text belongs to the last sentence.
std::string last_sentence(std::string_view text);

/// True iff the last sentence contains a whole-word pronoun from the fixed
/// list and does not contain `subject` (ASCII case-insensitive).
bool pronoun_trigger(std::string_view text, std::string_view subject);

/// First non-empty line of an extraction with surrounding quotes removed.
std::string clean_extraction(std::string_view raw);

struct MitigationTrace {
  bool applied = false;
  std::string extraction;
  std::vector<std::string> events;
};

/// Wraps the measured subject generation. Mode None sends exactly the request
/// the unmitigated path would send.
class Mitigator {
 public:
  Mitigator(MitigationConfig cfg, ModelGateway& gateway, const EndpointConfig& subject);

  GenerationResult generate(const FactEdit& fact, const std::vector<Message>& messages,
                            const GenerationParams& params, MitigationTrace& trace);

  const MitigationConfig& config() const { return cfg_; }

 private:
  std::string extract(const EndpointConfig& ep, const std::string& attack_text,
                      const GenerationParams& params);
  GenerationResult second_step(std::vector<Message> messages, const std::string& extraction,
                               const GenerationParams& params);

  MitigationConfig cfg_;
  ModelGateway& gateway_;
  const EndpointConfig& subject_;
};

}  // namespace editprobe
