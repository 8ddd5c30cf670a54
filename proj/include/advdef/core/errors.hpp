#pragma once

#include <stdexcept>
#include <string>

namespace advdef {

// Invalid or inconsistent experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition: shape mismatch, unknown layer, bad range.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Missing dataset, unreadable checkpoint, unwritable output directory.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A required pipeline phase has not been completed yet (CLI exit code 3).
class MissingDependencyError : public std::runtime_error {
public:
    MissingDependencyError(std::string phase, const std::string& what)
        : std::runtime_error(what), phase_(std::move(phase)) {}
    const std::string& phase() const { return phase_; }

private:
    std::string phase_;
};

// Loss became NaN/inf during training.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace advdef
