#pragma once

#include <stdexcept>
#include <string>

namespace rockseg {

// Error taxonomy shared by the library and the CLI. Each kind maps to a
// distinct process exit code so scripts can tell failure modes apart.
enum class ErrorKind {
    generic,
    layout,           // dataset directory / file naming problems
    validation,       // bad arguments, shape mismatches, invariant violations
    incompatibility,  // checkpoint/config hash mismatch
    divergence,       // non-finite loss during training
    io,               // missing file, unreadable path
    format,           // undecodable image or container bytes
    checksum,         // corrupt checkpoint
    coverage,         // stitched pixel received zero blend weight
    missing_weights,  // pretrained backbone requested, weights absent
    degenerate_input, // e.g. constant image fed to the thresholder
    empty_mask,       // box prompt requested from an all-zero mask
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::layout: return 2;
    case ErrorKind::validation: return 3;
    case ErrorKind::incompatibility: return 4;
    case ErrorKind::divergence: return 5;
    case ErrorKind::io: return 10;
    case ErrorKind::format: return 11;
    case ErrorKind::checksum: return 12;
    case ErrorKind::coverage: return 13;
    case ErrorKind::missing_weights: return 14;
    case ErrorKind::degenerate_input: return 15;
    case ErrorKind::empty_mask: return 16;
    case ErrorKind::generic: break;
    }
    return 1;
}

// Exit code used by the CLI when a directory command finished but some
// inputs could not be processed.
inline constexpr int exit_code_partial_failure = 6;

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
    if (!cond) raise(kind, msg);
}

} // namespace rockseg
