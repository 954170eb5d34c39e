#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace evmocap {

/// Base class of all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed EVT1 input. `offset()` is the byte offset of the offending data.
class ParseError : public Error {
 public:
  enum class Kind { BadMagic, TruncatedHeader, TruncatedRecord, InvalidPolarity, NonMonotonic, OutOfBounds, Io };

  ParseError(Kind kind, std::uint64_t offset, const std::string& what)
      : Error(what + " at byte offset " + std::to_string(offset)), kind_(kind), offset_(offset) {}

  Kind kind() const { return kind_; }
  std::uint64_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::uint64_t offset_;
};

/// Events handed to a writer or batcher out of time order.
class OrderingError : public Error {
 public:
  using Error::Error;
};

/// Event outside the sensor geometry.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// Point or pixel outside the camera model's valid domain.
class ProjectionError : public Error {
 public:
  using Error::Error;
};

class PnpError : public Error {
 public:
  enum class Kind { InsufficientCorrespondences, DegenerateConfiguration, NumericalFailure };

  PnpError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Invalid configuration; `rule()` names the violated rule.
class ConfigError : public Error {
 public:
  ConfigError(std::string rule, const std::string& what) : Error(what), rule_(std::move(rule)) {}
  const std::string& rule() const { return rule_; }

 private:
  std::string rule_;
};

class SceneError : public Error {
 public:
  using Error::Error;
};

}  // namespace evmocap
