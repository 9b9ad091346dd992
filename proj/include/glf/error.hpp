#pragma once

#include <stdexcept>
#include <string>

namespace glf {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map families of failures onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class InfeasiblePartitionError : public Error {
 public:
  using Error::Error;
};

enum class CheckpointErrorKind { Io, BadMagic, VersionMismatch, Truncated, ParamCountMismatch, BadHeader };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
  CheckpointErrorKind kind() const noexcept { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

enum class IngestErrorKind { Io, EmptyFile, UnknownColumn, UnparseableNumeric, BadRow, MissingGroup };

class IngestError : public Error {
 public:
  IngestError(IngestErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
  IngestErrorKind kind() const noexcept { return kind_; }

 private:
  IngestErrorKind kind_;
};

}  // namespace glf
