#pragma once

#include <stdexcept>
#include <string>

namespace caformer {

/// Operand shapes do not satisfy an operation's contract.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A TrackerConfig (or image geometry) is inconsistent.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// API misuse: empty inputs, out-of-range indices, non-scalar backward.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Paired inputs (modalities, keep chains) disagree with each other.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A kernel produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (CATM, manifests, JSON config).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace caformer
