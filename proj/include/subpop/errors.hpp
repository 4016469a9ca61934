#pragma once

#include <stdexcept>
#include <string>

namespace subpop {

// Error taxonomy shared by the library and the CLI. The CLI maps these to
// exit codes: ArgumentError -> 1, DataError (and subclasses) -> 2,
// NumericalError -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid arguments, configuration, or contract violations by the caller.
class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what) : Error(what) {}
};

// Malformed or inconsistent input data (files, corpora, rep sets).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what) {}
};

// Two collections that must be row-aligned are not.
class AlignmentError : public DataError {
 public:
  explicit AlignmentError(const std::string& what) : DataError(what) {}
};

// Fewer rows/examples than the operation can meaningfully use.
class InsufficientDataError : public DataError {
 public:
  explicit InsufficientDataError(const std::string& what) : DataError(what) {}
};

// A file failed to parse; message carries the line number.
class ParseError : public DataError {
 public:
  explicit ParseError(const std::string& what) : DataError(what) {}
};

// An iterative numerical routine failed to converge or produced non-finite
// values. Never silently returned as garbage.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(what) {}
};

}  // namespace subpop
