#pragma once

#include <stdexcept>
#include <string>

namespace spo {

// Invalid or incomplete configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values, divergence, or an undefined density. Exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training diverged. Carries the step at which it happened.
class TrainingError : public NumericError {
public:
    TrainingError(const std::string& what, long step)
        : NumericError(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

// Unreadable or malformed files. Exit code 4.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public IoError {
public:
    using IoError::IoError;
};

}  // namespace spo
