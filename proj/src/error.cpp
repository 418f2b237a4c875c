#include "lesion/error.hpp"

namespace lesion {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InvalidLabel: return "InvalidLabel";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::UnreadablePath: return "UnreadablePath";
    case ErrorKind::ClassTooSmall: return "ClassTooSmall";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::TruncatedPayload: return "TruncatedPayload";
    case ErrorKind::UnsupportedMaxval: return "UnsupportedMaxval";
    case ErrorKind::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::FileNotFound: return "FileNotFound";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::OutOfRangeClass: return "OutOfRangeClass";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::Usage: return "Usage";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace lesion
