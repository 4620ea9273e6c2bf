#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace targetgrasp {

enum class ErrorCode {
    InvalidArgument,
    NonPositiveDepth,
    EmptyScene,
    UnknownObject,
    NotVisible,
    MalformedSpec,
    MalformedBox,
    BackendUnavailable,
    CloudTooSmall,
    EmptyAfterFilter,
    NoCandidates,
    WrongPhase,
    CorpusNotFound,
    Io,
};

inline std::string_view toString(ErrorCode code)
{
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::EmptyScene: return "EmptyScene";
    case ErrorCode::UnknownObject: return "UnknownObject";
    case ErrorCode::NotVisible: return "NotVisible";
    case ErrorCode::MalformedSpec: return "MalformedSpec";
    case ErrorCode::MalformedBox: return "MalformedBox";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::CloudTooSmall: return "CloudTooSmall";
    case ErrorCode::EmptyAfterFilter: return "EmptyAfterFilter";
    case ErrorCode::NoCandidates: return "NoCandidates";
    case ErrorCode::WrongPhase: return "WrongPhase";
    case ErrorCode::CorpusNotFound: return "CorpusNotFound";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (pipeline, service, CLI) can map errors without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(toString(code)) + ": " + message), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message)
{
    throw Error(code, message);
}

} // namespace targetgrasp
