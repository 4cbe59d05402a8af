#pragma once

#include <stdexcept>
#include <string>

namespace vlime {

// Failure categories. The CLI maps them onto process exit codes.
enum class ErrorKind {
  kInvalidArgument,  // bad parameters or configuration
  kData,             // unreadable/malformed input files, manifests
  kEmbedder,         // black-box model or bridge failure
  kNumerical,        // singular systems, non-finite values
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what)
      : Error(ErrorKind::kInvalidArgument, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class EmbedderError : public Error {
 public:
  explicit EmbedderError(const std::string& what)
      : Error(ErrorKind::kEmbedder, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ErrorKind::kNumerical, what) {}
};

}  // namespace vlime
