#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "caformer/attention.hpp"

namespace caformer {

/// A scalar loss over named tensors that the checker may perturb in place.
struct GradProblem {
  std::vector<std::pair<std::string, TokenMatrix*>> tensors;
  /// Builds the loss on a fresh tape; must register every tensor in
  /// `tensors` as a leaf of the same name.
  std::function<Var(Tape&, LeafList&)> loss;
};

struct GradCheckOptions {
  double step = 1e-5;
  int directions = 2;  // random directions per tensor
  std::uint64_t seed = 0;
  /// Test hook: scales the analytic gradient of the first tensor by 1.01.
  bool corrupt_first = false;
};

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
  double gradient_norm = 0.0;
  /// Both the analytic and the finite-difference directional derivatives are
  /// below what central differences can resolve at this loss magnitude, in
  /// every direction. Such tensors are exempt from the relative test.
  bool zero_gradient = false;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;

  /// Largest relative error over tensors with a resolvable gradient.
  double worst() const;
  /// First tensor whose error is not below tolerance, or empty.
  std::string first_failure(double tolerance) const;
};

/// Central differences along random directions, compared with the tape's
/// directional derivative: |a − n| / max(|a|, |n|).
GradCheckReport check_gradients(GradProblem& problem, const GradCheckOptions& options = {});

enum class GradScope { kCme, kBlock, kAll };

/// The built-in problems exercised by the CLI and the acceptance suite.
/// `expected_tensors` receives how many learnable tensors the scope owns.
GradCheckReport run_gradcheck(GradScope scope, std::uint64_t seed, bool corrupt = false,
                              std::size_t* expected_tensors = nullptr);

}  // namespace caformer
