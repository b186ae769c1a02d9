// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace sshnet {

/// Operand shapes do not agree with what an operation requires.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A tensor file or manifest is malformed. The message names the field.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loaded data violates a domain invariant (bad category index, dangling
/// sentence mapping, non-finite value, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments detected before doing any work.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Gradient checking could not be carried out (e.g. non-deterministic loss).
class CheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged or produced a non-finite gradient.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sshnet
