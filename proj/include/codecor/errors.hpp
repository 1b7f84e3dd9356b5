#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace codecor {

/// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's documented precondition.
class PreconditionViolation : public Error {
 public:
  using Error::Error;
};

// --- gateway -----------------------------------------------------------------

class GatewayError : public Error {
 public:
  using Error::Error;
};

/// Transport failure (connection, timeout, 5xx) that survived all retries.
class NetworkError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

/// 401/403 from the endpoint. Never retried.
class AuthError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

/// Any other 4xx. Never retried.
class RequestRejected : public GatewayError {
 public:
  RequestRejected(int status, const std::string& what)
      : GatewayError(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class MalformedResponse : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

/// The scripted backend had no next entry matching the outgoing request.
class TranscriptExhausted : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

// --- agents / pruning --------------------------------------------------------

/// Every completion was unparseable after the configured parse retries.
class GenerationEmpty : public Error {
 public:
  using Error::Error;
};

class MalformedScore : public Error {
 public:
  using Error::Error;
};

// --- sandbox -----------------------------------------------------------------

class SandboxError : public Error {
 public:
  using Error::Error;
};

/// Interpreter or runner script missing, or the child could not be spawned.
class SandboxUnavailable : public SandboxError {
 public:
  using SandboxError::SandboxError;
};

/// The runner emitted output that does not follow the line protocol.
class ProtocolError : public SandboxError {
 public:
  using SandboxError::SandboxError;
};

// --- orchestrator ------------------------------------------------------------

class PipelineStarved : public Error {
 public:
  using Error::Error;
};

class EmptyRankedSet : public Error {
 public:
  using Error::Error;
};

// --- eval harness / cli ------------------------------------------------------

class MalformedRecord : public Error {
 public:
  MalformedRecord(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace codecor
