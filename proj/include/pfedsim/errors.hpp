#pragma once

#include <stdexcept>
#include <string>

namespace pfedsim {

// Error taxonomy used across the library. Everything derives from Error so
// callers can catch one type at the top level; the CLI maps any escape to a
// nonzero exit code.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or width disagreement between tensors, layers, logits or masks.
struct DimensionError : Error {
    using Error::Error;
};

// A hyperparameter outside its legal range (gamma, delta, T, lr, ...).
struct ParameterError : Error {
    using Error::Error;
};

// A class label or unit index outside its valid range.
struct IndexError : Error {
    using Error::Error;
};

// Train-mode forward with a batch too small for batch-norm statistics.
struct DegenerateBatchError : Error {
    using Error::Error;
};

// Non-finite loss or gradient; message names the offending loss term.
struct NumericError : Error {
    using Error::Error;
};

// A pruning request that would remove every unit of some layer.
struct PruningFloorError : Error {
    using Error::Error;
};

// An ArchDescriptor with duplicate, unsorted or out-of-range indices.
struct DescriptorError : Error {
    using Error::Error;
};

// Aggregation mode applied to inputs it cannot handle (e.g. FedAvg over
// heterogeneous architectures).
struct ModeViolationError : Error {
    using Error::Error;
};

// Config file problems: missing/unknown keys, invariant violations.
struct ConfigError : Error {
    using Error::Error;
};

// Dataset sizing/partitioning problems.
struct DataError : Error {
    using Error::Error;
};

// Filesystem failures when emitting reports; message carries the path.
struct IoError : Error {
    using Error::Error;
};

// Always-on internal invariant check (not for user input validation).
#define PFEDSIM_CHECK(cond, msg)                                  \
    do {                                                          \
        if (!(cond)) throw ::pfedsim::Error(std::string("internal invariant failed: ") + (msg)); \
    } while (0)

}  // namespace pfedsim
