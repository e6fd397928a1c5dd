#pragma once

#include <stdexcept>
#include <string>

namespace pcl {

// Exit-code taxonomy shared by the library and the CLI:
//   0 ok / 2 usage / 3 config / 4 runtime / 5 external tool.
enum class ErrorCategory : int {
  kUsage = 2,
  kConfig = 3,
  kRuntime = 4,
  kExternalTool = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const { return category_; }
  int exit_code() const { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

// Bad command line or flag combination.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message)
      : Error(ErrorCategory::kUsage, message) {}
};

// Invalid configuration value (fails validation before any work starts).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message)
      : Error(ErrorCategory::kConfig, message) {}
};

// A caller violated a documented precondition (shape mismatch, k > n, ...).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& message)
      : Error(ErrorCategory::kRuntime, message) {}
};

// Malformed input data (token out of vocab range, oversized prompt, ...).
class InputError : public Error {
 public:
  explicit InputError(const std::string& message)
      : Error(ErrorCategory::kRuntime, message) {}
};

// Corrupt or unreadable on-disk artifact.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message)
      : Error(ErrorCategory::kRuntime, message) {}
};

// Failure in an external process (analyzer, compiler, interpreter).
class ExternalToolError : public Error {
 public:
  explicit ExternalToolError(const std::string& message)
      : Error(ErrorCategory::kExternalTool, message) {}
};

}  // namespace pcl
