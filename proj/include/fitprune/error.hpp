#pragma once

#include <stdexcept>
#include <string>

namespace fitprune {

/// Failure categories. Each maps onto a stable CLI exit code.
enum class ErrorKind {
    validation,         // malformed input, dimension or digest mismatch
    io,                 // unreadable or unwritable files
    infeasible_budget,  // no recipe can meet the FLOPs budget
    search_anomaly,     // FLOPs not monotone in alpha during bisection
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), m_kind(kind) {}

    ErrorKind kind() const noexcept {
        return m_kind;
    }

private:
    ErrorKind m_kind;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class InfeasibleBudgetError : public Error {
public:
    InfeasibleBudgetError(double budget, double minimum_flops)
        : Error(ErrorKind::infeasible_budget,
                "infeasible budget: " + std::to_string(budget) + " FLOPs requested, minimum achievable is " +
                    std::to_string(minimum_flops) + " FLOPs"),
          m_budget(budget),
          m_minimum_flops(minimum_flops) {}

    double budget() const noexcept {
        return m_budget;
    }
    double minimum_flops() const noexcept {
        return m_minimum_flops;
    }

private:
    double m_budget;
    double m_minimum_flops;
};

}  // namespace fitprune
