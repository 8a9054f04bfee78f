#pragma once

#include <exception>
#include <stdexcept>
#include <string>

namespace headpose {

/// Exit-code contract shared by the library and the CLI.
enum class ErrorKind : int {
  kUsage = 2,
  kData = 3,
  kNumeric = 4,
  kCheckpoint = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

/// NaN/Inf in the engine, diverging training, failed gradient checks.
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

struct CheckpointError : Error {
  explicit CheckpointError(const std::string& what) : Error(ErrorKind::kCheckpoint, what) {}
};

/// The subclass matching `kind`, e.g. to re-raise with added context.
inline std::exception_ptr make_error(ErrorKind kind, const std::string& what) {
  switch (kind) {
    case ErrorKind::kUsage:
      return std::make_exception_ptr(UsageError(what));
    case ErrorKind::kData:
      return std::make_exception_ptr(DataError(what));
    case ErrorKind::kNumeric:
      return std::make_exception_ptr(NumericError(what));
    case ErrorKind::kCheckpoint:
      return std::make_exception_ptr(CheckpointError(what));
  }
  return std::make_exception_ptr(Error(kind, what));
}

}  // namespace headpose
