#pragma once
#include <stdexcept>
#include <string>

namespace debias {

// Shape, dimension or label-range mismatch between values, models and datasets.
struct DimensionError : std::invalid_argument {
    explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

// Invalid or inconsistent configuration (bad hyperparameter, missing key, bad grid).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed data file (JSONL record, checkpoint, report).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure inside a training run (non-finite loss).
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace debias
