#pragma once

#include <stdexcept>
#include <string>

namespace chainreduce {

class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DimensionMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace chainreduce
