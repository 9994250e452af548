#pragma once

#include <stdexcept>
#include <string>

namespace kerrcomb {

// Error taxonomy mirrors the CLI exit-code contract:
//   ConfigError -> 1, DomainError -> 2, NumericalError -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A well-posed request whose answer is "this regime does not apply":
// no threshold in range, dark mode, trivial Fock space, unstable state.
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace kerrcomb
