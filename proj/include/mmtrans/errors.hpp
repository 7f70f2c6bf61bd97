#ifndef MMTRANS_ERRORS_HPP_
#define MMTRANS_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmtrans {

/// Lexical error, carries the byte offset where lexing failed.
class LexError : public std::runtime_error {
 public:
  LexError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Contract-level structural parse error, carries the offending span.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t begin, std::size_t end)
      : std::runtime_error(what + " at bytes [" + std::to_string(begin) +
                           ", " + std::to_string(end) + ")"),
        begin_(begin),
        end_(end) {}
  std::size_t begin() const { return begin_; }
  std::size_t end() const { return end_; }

 private:
  std::size_t begin_;
  std::size_t end_;
};

class SbtFormatError : public std::runtime_error {
 public:
  explicit SbtFormatError(const std::string& what)
      : std::runtime_error(what) {}
};

class SplitError : public std::runtime_error {
 public:
  explicit SplitError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Dataset schema violation, carries the 1-based line number when known.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(const std::string& what, long line = 0)
      : std::runtime_error(line > 0 ? what + " (line " + std::to_string(line) + ")"
                                    : what),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

class EmptyCorpus : public std::runtime_error {
 public:
  explicit EmptyCorpus(const std::string& what) : std::runtime_error(what) {}
};

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

class NotScalar : public std::runtime_error {
 public:
  explicit NotScalar(const std::string& what) : std::runtime_error(what) {}
};

class EvalError : public std::runtime_error {
 public:
  explicit EvalError(const std::string& what) : std::runtime_error(what) {}
};

class DataModelMismatch : public std::runtime_error {
 public:
  explicit DataModelMismatch(const std::string& what)
      : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A named entity (e.g. a method) was not found where one was required.
class LookupError : public std::runtime_error {
 public:
  explicit LookupError(const std::string& what) : std::runtime_error(what) {}
};

/// Metric asked to score against an empty reference.
class EmptyReference : public std::runtime_error {
 public:
  explicit EmptyReference(const std::string& what)
      : std::runtime_error(what) {}
};

/// Metric asked to score an empty candidate/reference pair.
class EmptyInput : public std::runtime_error {
 public:
  explicit EmptyInput(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mmtrans

#endif  // MMTRANS_ERRORS_HPP_
