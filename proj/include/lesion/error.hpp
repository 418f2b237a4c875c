#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lesion {

enum class ErrorKind {
  ShapeMismatch,
  InvalidConfig,
  InvalidLabel,
  NotScalar,
  EmptyDataset,
  EmptyClass,
  UnreadablePath,
  ClassTooSmall,
  MalformedHeader,
  TruncatedPayload,
  UnsupportedMaxval,
  UnsupportedFormat,
  IoError,
  FileNotFound,
  NonFiniteLoss,
  OutOfRangeClass,
  DegenerateLabels,
  Usage,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and the CLI's
// exit-code mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace lesion
