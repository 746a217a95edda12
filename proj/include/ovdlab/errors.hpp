#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ovdlab {

// Malformed serialized input. byte_offset points into the offending text.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : std::runtime_error(what + " (at byte " + std::to_string(byte_offset) + ")"), byte_offset_(byte_offset) {}
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

// Well-formed input that breaks a data-model invariant.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(const std::string& field, const std::string& rule)
      : std::runtime_error(field + ": " + rule), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A call broke an API contract (e.g. wrong routing for a visual sequence).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Remote service failures. Transport failures may be retried.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(const std::string& what, bool retryable) : std::runtime_error(what), retryable_(retryable) {}
  bool retryable() const { return retryable_; }

 private:
  bool retryable_;
};

class TransportError : public ServiceError {
 public:
  explicit TransportError(const std::string& what) : ServiceError(what, true) {}
};

class JudgeProtocolError : public ServiceError {
 public:
  JudgeProtocolError(const std::string& what, std::string raw_reply)
      : ServiceError(what, false), raw_reply_(std::move(raw_reply)) {}
  const std::string& raw_reply() const { return raw_reply_; }

 private:
  std::string raw_reply_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingAbort : public std::runtime_error {
 public:
  TrainingAbort(const std::string& what, long step) : std::runtime_error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace ovdlab
