#pragma once

#include <stdexcept>
#include <string>

namespace editprobe {

/// Failure categories shared across the harness. The CLI maps these onto
/// process exit codes.
enum class ErrorKind {
  Precondition,
  NotFound,
  Transient,
  RequestFailed,
  Endpoint,
  UnsupportedCapability,
  Unavailable,
  InvariantViolation,
  Undefined,
  Config,
  Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what)
      : Error(ErrorKind::Precondition, what) {}
};

class NotFoundError : public Error {
 public:
  explicit NotFoundError(const std::string& what)
      : Error(ErrorKind::NotFound, what) {}
};

/// A network call failed in a way that may succeed on retry.
class TransientError : public Error {
 public:
  TransientError(const std::string& what, int status, int attempts)
      : Error(ErrorKind::Transient, what), status_(status), attempts_(attempts) {}

  int status() const noexcept { return status_; }
  int attempts() const noexcept { return attempts_; }

 private:
  int status_;
  int attempts_;
};

/// Generation failed after exhausting the retry budget.
class RequestFailed : public Error {
 public:
  RequestFailed(const std::string& what, std::string sample_id, int attempts)
      : Error(ErrorKind::RequestFailed, what),
        sample_id_(std::move(sample_id)),
        attempts_(attempts) {}

  const std::string& sample_id() const noexcept { return sample_id_; }
  int attempts() const noexcept { return attempts_; }

 private:
  std::string sample_id_;
  int attempts_;
};

/// Non-retryable error reported by an inference endpoint, message verbatim.
class EndpointError : public Error {
 public:
  EndpointError(const std::string& what, int status)
      : Error(ErrorKind::Endpoint, what), status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

class UnsupportedCapability : public Error {
 public:
  explicit UnsupportedCapability(const std::string& what)
      : Error(ErrorKind::UnsupportedCapability, what) {}
};

/// A builder could not produce its artifact (context, cloze, dialogue, ...).
/// The affected cell is recorded as skipped.
class Unavailable : public Error {
 public:
  Unavailable(std::string what_kind, const std::string& what)
      : Error(ErrorKind::Unavailable, what), component_(std::move(what_kind)) {}

  /// e.g. "ContextUnavailable", "ClozeUnavailable".
  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

class InvariantViolation : public Error {
 public:
  explicit InvariantViolation(const std::string& what)
      : Error(ErrorKind::InvariantViolation, what) {}
};

/// Statistic is mathematically undefined for the given input.
class UndefinedError : public Error {
 public:
  explicit UndefinedError(const std::string& what)
      : Error(ErrorKind::Undefined, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

}  // namespace editprobe
