#pragma once

#include <stdexcept>
#include <string>

namespace clir {

// Error classes map one-to-one onto CLI exit codes.
enum class ErrorKind { usage = 1, input_format = 2, contract = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

// Bad or unreadable input files.
struct FormatError : Error {
  explicit FormatError(const std::string& what)
      : Error(ErrorKind::input_format, what) {}
};

// Violated preconditions and numeric failures.
struct ContractError : Error {
  explicit ContractError(const std::string& what)
      : Error(ErrorKind::contract, what) {}
};

struct UsageError : Error {
  explicit UsageError(const std::string& what)
      : Error(ErrorKind::usage, what) {}
};

}  // namespace clir
