#include "tofdetect/error.hpp"

namespace tofd {

std::string_view error_kind_name(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::ConstantVolume: return "ConstantVolume";
        case ErrorKind::GeometryMismatch: return "GeometryMismatch";
        case ErrorKind::EmptySeeds: return "EmptySeeds";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::ConfigInvalid: return "ConfigInvalid";
        case ErrorKind::EmptyAnnotation: return "EmptyAnnotation";
        case ErrorKind::DivergenceDetected: return "DivergenceDetected";
        case ErrorKind::TooFewCases: return "TooFewCases";
        case ErrorKind::NoPositives: return "NoPositives";
        case ErrorKind::SpecInvalid: return "SpecInvalid";
        case ErrorKind::FormatError: return "FormatError";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

namespace {
std::string format_message(const std::string& field, long long offset, const std::string& detail) {
    std::string msg = "field '" + field + "'";
    if (offset >= 0) msg += " at offset " + std::to_string(offset);
    msg += ": " + detail;
    return msg;
}
}  // namespace

FormatError::FormatError(std::string field, long long offset, const std::string& detail)
    : Error(ErrorKind::FormatError, format_message(field, offset, detail)),
      field_(std::move(field)),
      offset_(offset) {}

}  // namespace tofd
