#pragma once

#include <stdexcept>
#include <string>

namespace ctp {

// Exit-code aligned failure classes. The CLI maps these 1:1 onto process
// exit codes, library callers can catch ctp::Error generically.
enum class ErrorKind {
  Usage = 2,       // bad argument or configuration
  Validation = 3,  // data failed an invariant check
  Internal = 4,    // an internal invariant was breached
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& what) : Error(ErrorKind::Internal, what) {}
};

}  // namespace ctp
