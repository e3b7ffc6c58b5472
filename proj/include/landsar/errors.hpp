#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace landsar {

/// Malformed input file. Carries the 1-based line number when one applies.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line = 0);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Raised by the solver when a step cannot proceed (NaN state, CFL violation).
class StepError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnknownBarrier : public std::invalid_argument {
public:
    explicit UnknownBarrier(const std::string& id);
    const std::string& id() const noexcept { return id_; }

private:
    std::string id_;
};

/// A steering command that is not legal in the session's current phase.
class PhaseError : public std::logic_error {
public:
    PhaseError(const std::string& command, const std::string& phase);
    const std::string& phase() const noexcept { return phase_; }

private:
    std::string phase_;
};

}  // namespace landsar
