#ifndef BEVPROMPT_ERRORS_HPP
#define BEVPROMPT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace bevprompt {

// Broad failure classes. The CLI maps these onto exit codes.
enum class ErrorKind {
  Schema,   // malformed input, bad configuration, unknown labels
  Numeric,  // dimension mismatch, non-finite values, degenerate geometry
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class EvaluationError : public Error {
 public:
  explicit EvaluationError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class BehindCameraError : public Error {
 public:
  explicit BehindCameraError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class OffImageError : public Error {
 public:
  explicit OffImageError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Schema, what) {}
};

class LabelError : public Error {
 public:
  explicit LabelError(const std::string& what) : Error(ErrorKind::Schema, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Schema, what) {}
};

class EmptyPromptError : public Error {
 public:
  explicit EmptyPromptError(const std::string& what) : Error(ErrorKind::Schema, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

}  // namespace bevprompt

#endif  // BEVPROMPT_ERRORS_HPP
