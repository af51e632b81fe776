#pragma once

#include <stdexcept>
#include <string>

namespace ratealloc {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class NumericalFailure : public Error {
public:
    using Error::Error;
};

class ConvergenceFailure : public Error {
public:
    using Error::Error;
};

class DecodeError : public Error {
public:
    using Error::Error;
};

class UnsupportedDomain : public Error {
public:
    using Error::Error;
};

/// The MSE budget cannot be met by any allocation. Carries the smallest
/// achievable (horizon-averaged) trace of the filtered covariance.
class InfeasibleBudget : public Error {
public:
    InfeasibleBudget(const std::string& what, double min_achievable)
        : Error(what), min_achievable_(min_achievable) {}

    double min_achievable() const noexcept { return min_achievable_; }

private:
    double min_achievable_;
};

}  // namespace ratealloc
