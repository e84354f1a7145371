#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace handclr {

/// Broad failure category; the CLI maps these onto process exit codes.
enum class ErrorKind {
    Usage,       // bad arguments or configuration
    Data,        // malformed or degenerate input data
    Dependency,  // missing or stale upstream artifact
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define HANDCLR_DEFINE_ERROR(Name, Kind)                                           \
    class Name : public Error {                                                    \
    public:                                                                        \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
    };

HANDCLR_DEFINE_ERROR(ConfigError, Usage)
HANDCLR_DEFINE_ERROR(CorruptCrop, Data)
HANDCLR_DEFINE_ERROR(DuplicateRecord, Data)
HANDCLR_DEFINE_ERROR(HandednessError, Data)
HANDCLR_DEFINE_ERROR(ShapeError, Data)
HANDCLR_DEFINE_ERROR(EmptyCorpus, Data)
HANDCLR_DEFINE_ERROR(NoEligibleCandidate, Data)
HANDCLR_DEFINE_ERROR(MissingGroundTruth, Data)
HANDCLR_DEFINE_ERROR(DegenerateFeature, Data)
HANDCLR_DEFINE_ERROR(BatchTooSmall, Data)
HANDCLR_DEFINE_ERROR(SingularProbe, Data)
HANDCLR_DEFINE_ERROR(MissingArtifact, Dependency)
HANDCLR_DEFINE_ERROR(StaleArtifact, Dependency)

#undef HANDCLR_DEFINE_ERROR

/// Malformed text record; carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error(ErrorKind::Data, "line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Non-finite training loss; carries the step index at which it happened.
class DivergenceError : public Error {
public:
    explicit DivergenceError(long step)
        : Error(ErrorKind::Data, "non-finite loss at step " + std::to_string(step)), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

}  // namespace handclr
