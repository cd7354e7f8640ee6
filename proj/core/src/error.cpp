#include "editprobe/error.hpp"

namespace editprobe {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Precondition: return "Precondition";
    case ErrorKind::NotFound: return "NotFound";
    case ErrorKind::Transient: return "Transient";
    case ErrorKind::RequestFailed: return "RequestFailed";
    case ErrorKind::Endpoint: return "Endpoint";
    case ErrorKind::UnsupportedCapability: return "UnsupportedCapability";
    case ErrorKind::Unavailable: return "Unavailable";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::Undefined: return "Undefined";
    case ErrorKind::Config: return "Config";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace editprobe
