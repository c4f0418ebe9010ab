#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tofd {

enum class ErrorKind {
    InvalidArgument,
    ConstantVolume,
    GeometryMismatch,
    EmptySeeds,
    ShapeMismatch,
    ConfigInvalid,
    EmptyAnnotation,
    DivergenceDetected,
    TooFewCases,
    NoPositives,
    SpecInvalid,
    FormatError,
    IoError,
};

std::string_view error_kind_name(ErrorKind kind) noexcept;

// Every failure the library reports carries a machine-readable class.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    std::string_view kind_name() const noexcept { return error_kind_name(kind_); }

private:
    ErrorKind kind_;
};

// Malformed file content. Names the first offending field and, when known,
// the byte offset where it was found.
class FormatError : public Error {
public:
    FormatError(std::string field, long long offset, const std::string& detail);

    const std::string& field() const noexcept { return field_; }
    long long offset() const noexcept { return offset_; }

private:
    std::string field_;
    long long offset_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace tofd
