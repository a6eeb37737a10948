#pragma once

// Error types shared by every ragcap module.
//
// Each error carries a category that the CLI maps onto its exit code:
//   input    -> 2 (bad files, bad flags, malformed data)
//   provider -> 3 (transport or protocol failures of the model provider)
//   internal -> 4 (broken invariants inside the engine)

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace ragcap {

enum class ErrorKind { input, provider, internal };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& message) : Error(ErrorKind::input, message) {}
};

// A record-level parse failure. `record` is 1-based (a line number for
// jsonl, an array position for JSON arrays).
class ParseError : public InputError {
 public:
  ParseError(std::string path, std::size_t record, const std::string& what)
      : InputError(path + ":" + std::to_string(record) + ": " + what),
        path_(std::move(path)),
        record_(record) {}

  const std::string& path() const noexcept { return path_; }
  std::size_t record() const noexcept { return record_; }

 private:
  std::string path_;
  std::size_t record_;
};

class CorruptIndexError : public InputError {
 public:
  explicit CorruptIndexError(const std::string& detail)
      : InputError("corrupt index: " + detail) {}
};

class DimensionError : public InputError {
 public:
  DimensionError(std::size_t expected, std::size_t actual)
      : InputError("dimension mismatch: expected " + std::to_string(expected) + ", got " +
                   std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

class ProviderError : public Error {
 public:
  ProviderError(const std::string& message, bool retryable)
      : Error(ErrorKind::provider, message), retryable_(retryable) {}

  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

// Wraps a failure with the pipeline stage it happened in ("retrieve",
// "generate", "rerank"). The original category is preserved.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), stage + ": " + cause.what()), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

inline int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::input:
      return 2;
    case ErrorKind::provider:
      return 3;
    case ErrorKind::internal:
      return 4;
  }
  return 4;
}

}  // namespace ragcap
