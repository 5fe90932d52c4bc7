#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spanact {

// Precondition violated by a caller-supplied value.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// An operation that needs a fully resolved sequence saw a Masked token.
class UnresolvedSequence : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Engine state machine driven out of order (e.g. trigger handling without a trigger).
class ProtocolViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Bad or incomplete configuration (missing ablation arm, unknown key value, ...).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingFailure : public std::runtime_error {
public:
    TrainingFailure(std::size_t step, const std::string& what)
        : std::runtime_error("training failed at step " + std::to_string(step) + ": " + what),
          step_(step) {}

    [[nodiscard]] std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

} // namespace spanact
