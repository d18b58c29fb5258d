// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace nrit {

// Base of every library error. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (non-scalar loss, overlapping sets, ...).
class ContractError : public Error {
  public:
    using Error::Error;
};

// NaN/Inf reached a place where only finite values are allowed.
class NumericError : public Error {
  public:
    using Error::Error;
};

// Invalid configuration: bad key, out-of-range hyperparameter, vacuous stage.
class ConfigError : public Error {
  public:
    using Error::Error;
};

class IndexError : public Error {
  public:
    using Error::Error;
};

class LengthError : public Error {
  public:
    using Error::Error;
};

class TokenError : public Error {
  public:
    using Error::Error;
};

class TemplateError : public Error {
  public:
    using Error::Error;
};

class GenerationError : public Error {
  public:
    using Error::Error;
};

class NonDeterminismError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

// A pipeline stage failed for a reason other than configuration or numerics.
class StageError : public Error {
  public:
    using Error::Error;
};

}  // namespace nrit
