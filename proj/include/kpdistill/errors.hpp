#pragma once

#include <stdexcept>
#include <string>

namespace kpd {

// Error categories, mapped to CLI exit codes by the tool layer.
enum class ErrorKind {
    Config,           // bad configuration value or unknown key
    Shape,            // dimension / length mismatch
    EmptyInput,       // input that must be non-empty is empty
    Lookup,           // unknown item / keyphrase id
    BatchTooSmall,    // loss needs more rows than provided
    DegenerateData,   // dataset missing a class or zero variance where forbidden
    Numeric,          // non-finite value produced
    TooLarge,         // guard against exhaustive checks on big models
    EmptyIndex,       // retrieval index with no rows
    InvalidWorld,     // world fails its own invariants
    Staleness,        // index does not match the parameters it claims
    MissingArtifact,  // pipeline stage input file absent
    Io                // file read/write failure
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::Config: return "config";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::EmptyInput: return "empty-input";
        case ErrorKind::Lookup: return "lookup";
        case ErrorKind::BatchTooSmall: return "batch-too-small";
        case ErrorKind::DegenerateData: return "degenerate-data";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::TooLarge: return "too-large";
        case ErrorKind::EmptyIndex: return "empty-index";
        case ErrorKind::InvalidWorld: return "invalid-world";
        case ErrorKind::Staleness: return "staleness";
        case ErrorKind::MissingArtifact: return "missing-artifact";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

[[noreturn]] inline void throw_error(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
    if (!cond) throw_error(kind, msg);
}

}  // namespace kpd
