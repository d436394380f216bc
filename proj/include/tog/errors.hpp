#pragma once

#include <stdexcept>
#include <string>

namespace tog {

// Error taxonomy: the CLI maps these onto exit codes, so new error sites
// should pick the closest existing type rather than raw runtime_error.

// Shape / broadcast violations in tensor ops and model stages.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration values (stride/factor/bins/flag combinations).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Out-of-range ids and indices (vocab ids, bin indices, embedding rows).
struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or failed numerical invariants during training.
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed, truncated or shape-incompatible checkpoint files.
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

// Scene composition / placement failures during synthesis.
struct PlacementError : std::runtime_error {
    explicit PlacementError(const std::string& msg) : std::runtime_error(msg) {}
};

// Split construction failures (infeasible holdout, too few units).
struct SplitError : std::runtime_error {
    explicit SplitError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tuple sampling failures (no instruction-compatible grasp).
struct SamplingError : std::runtime_error {
    explicit SamplingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Evaluation preconditions (missing checkpoint, empty ground truth).
struct EvalError : std::runtime_error {
    explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failures, always carrying the offending path.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tog
