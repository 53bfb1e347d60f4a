#pragma once

#include <stdexcept>
#include <string>

namespace dac {

// Bad user input: config values, layouts, sizes. CLI exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Divergence or other failure while a run is in progress. CLI exit code 2.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed files: IDX, checkpoints, result CSVs. CLI exit code 3.
class IngestionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace dac
