#pragma once

#include <stdexcept>
#include <string>

namespace mfscm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file (CSV or manifest); message names file and line.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Panel violates a structural invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value; message names the offending key.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Argument outside the domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Numerically ill-posed problem (rank deficiency, singular normal equations).
class IllPosedError : public Error {
public:
    using Error::Error;
};

/// Not enough observations for the requested fit.
class SampleSizeError : public Error {
public:
    using Error::Error;
};

}  // namespace mfscm
