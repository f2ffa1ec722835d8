#pragma once

#include <stdexcept>
#include <string>

namespace metadepth {

/// Shape or channel-count disagreement between tensors. Message names the
/// offending axes.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// API misuse: backward on a non-scalar, reusing a consumed tape, stepping
/// without gradients, and the like.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Parameter vectors that cannot be combined element-wise (different names,
/// order, or shapes).
struct AlignmentError : std::runtime_error {
    explicit AlignmentError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dataset-level problems: empty dataset, missing files, bad manifest entries.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed on-disk format. Carries the byte offset where parsing stopped.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, long long offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    long long byte_offset;
};

/// Non-finite or exploding loss during training. Carries the meta-iteration
/// (or step) index at which the divergence was detected.
struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& msg, long long iter)
        : std::runtime_error(msg + " (iteration " + std::to_string(iter) + ")"),
          iteration(iter) {}
    long long iteration;
};

/// Raised when a metric or loss has no valid pixel to evaluate.
struct EmptyEvaluation : std::runtime_error {
    explicit EmptyEvaluation(const std::string& msg) : std::runtime_error(msg) {}
};

/// Evaluation-protocol violation (e.g. zero median in median scaling).
struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Scene generation problems (degenerate camera, unsatisfiable spec).
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite value found while debug verification mode is on.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace metadepth
