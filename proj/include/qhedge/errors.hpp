#pragma once

#include <stdexcept>
#include <string>

namespace qhedge {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Adaptive quadrature did not stabilize within its panel budget.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual)
        : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}

    [[nodiscard]] double residual() const noexcept { return residual_; }

private:
    double residual_;
};

/// A standing model/measure assumption fails. `item` names the violated condition
/// of the admissibility set (1: rho^S strictly increasing, 2: bounded real support,
/// 3: frequencies in the moment domain, 4: bounded cumulant densities).
class AssumptionError : public Error {
public:
    AssumptionError(int item, const std::string& what)
        : Error("assumption item " + std::to_string(item) + ": " + what), item_(item) {}

    [[nodiscard]] int item() const noexcept { return item_; }

private:
    int item_;
};

/// Explicit time stepping would be unstable on the requested grid.
class CflError : public Error {
public:
    using Error::Error;
};

/// The diffusion coefficients are outside the regimes where the PDE route is proved.
class RegimeError : public Error {
public:
    using Error::Error;
};

/// Two objects that must share a model were built from different ones.
class MismatchError : public Error {
public:
    using Error::Error;
};

/// Malformed experiment configuration; `key` is the offending path.
class ConfigError : public Error {
public:
    ConfigError(const std::string& key, const std::string& what)
        : Error(key.empty() ? what : key + ": " + what), key_(key) {}

    [[nodiscard]] const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

}  // namespace qhedge
