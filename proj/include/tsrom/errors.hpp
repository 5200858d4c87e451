#pragma once

#include <stdexcept>
#include <string>

namespace tsrom {

// Every library failure derives from Error so callers can catch once.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

// Re(lambda) <= 0 where a stationary OU prior is required.
class StationarityError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class DigestMismatchError : public Error {
public:
    using Error::Error;
};

// Raised by integrators and the training loop when the state stops being finite.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace tsrom
