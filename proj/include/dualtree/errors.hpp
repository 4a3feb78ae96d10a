#pragma once

#include <stdexcept>
#include <string>

namespace dualtree {

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class GatewayError : public Error {
 public:
  using Error::Error;
};

class EmptyResponseError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

// Carries the raw model output so callers can retry or skip.
class StructuredParseError : public Error {
 public:
  StructuredParseError(const std::string& what, std::string raw)
      : Error(what), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

class InvalidKError : public Error {
 public:
  using Error::Error;
};

class RetrievalError : public Error {
 public:
  using Error::Error;
};

class UndefinedRatioError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage aborted; what() is prefixed with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace dualtree
