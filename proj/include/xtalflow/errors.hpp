#pragma once

#include <stdexcept>
#include <string>

namespace xtalflow {

// Base for all library errors so callers can catch one type at the CLI edge.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller violated a documented precondition (bad index, shape mismatch, ...).
struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// A type invariant would be violated (degenerate lattice, empty structure, ...).
struct InvariantError : Error {
    explicit InvariantError(const std::string& msg) : Error(msg) {}
};

// Two atoms closer than the hard-core limit of the pair potential.
struct OverlapError : Error {
    explicit OverlapError(const std::string& msg) : Error(msg) {}
};

// An atom has no periodic neighbor within the featurization radius.
struct EmptyNeighborhoodError : Error {
    explicit EmptyNeighborhoodError(const std::string& msg) : Error(msg) {}
};

struct TrainingDivergedError : Error {
    TrainingDivergedError(const std::string& msg, int epoch_index)
        : Error(msg + " (epoch " + std::to_string(epoch_index) + ")"), epoch(epoch_index) {}
    int epoch;
};

// Structures cannot be compared (different composition or atom count).
struct IncomparableError : Error {
    explicit IncomparableError(const std::string& msg) : Error(msg) {}
};

// Classifier training data contains a single class.
struct DegenerateLabelsError : Error {
    explicit DegenerateLabelsError(const std::string& msg) : Error(msg) {}
};

struct UnsupportedElementError : Error {
    explicit UnsupportedElementError(const std::string& msg) : Error(msg) {}
};

struct StorageError : Error {
    explicit StorageError(const std::string& msg) : Error(msg) {}
};

// Sampler could not produce a usable lattice after repair attempts.
struct GenerationError : Error {
    explicit GenerationError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace xtalflow
