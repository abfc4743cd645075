#pragma once

#include <stdexcept>
#include <string>

namespace flags {

// Base for every error raised by the library. The CLI maps each family to an
// exit code (see tools/flags_main.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shapes that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Precondition violated by the caller (non-scalar backward, non-unit key, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or config/data mismatch.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Dataset, manifest or checkpoint content that fails an integrity check.
class IntegrityError : public Error {
public:
    using Error::Error;
};

// A class has too few members for pair mining.
class InsufficientClassSizeError : public IntegrityError {
public:
    using IntegrityError::IntegrityError;
};

// Probe split left a class out of the training portion.
class SplitError : public IntegrityError {
public:
    using IntegrityError::IntegrityError;
};

class NumericError : public Error {
public:
    using Error::Error;
};

// exp() argument above the overflow guard.
class OverflowError : public NumericError {
public:
    using NumericError::NumericError;
};

// Normalizing a vector whose norm is at or below epsilon.
class DegenerateVectorError : public NumericError {
public:
    using NumericError::NumericError;
};

// Cosine similarity requested against a zero-norm feature.
class DegenerateSimilarityError : public NumericError {
public:
    using NumericError::NumericError;
};

}  // namespace flags
