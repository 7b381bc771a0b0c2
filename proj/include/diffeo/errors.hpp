#pragma once

#include <stdexcept>
#include <string>

namespace diffeo {

// Invalid parameter combination or precondition violation.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or missing file, bad shape, protocol breach.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Probe manifest no longer matches its recorded hash.
class IntegrityError : public DataError {
public:
    using DataError::DataError;
};

// A statistic whose denominator vanished (e.g. a constant predictor).
class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace diffeo
