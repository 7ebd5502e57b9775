#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "acenet/tape.hpp"

namespace acenet {

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares reverse-mode gradients of `f` with respect to every entry of every
/// input against central differences. Returns the maximum relative error.
/// `eps` must lie in [1e-7, 1e-3].
double grad_check(const ScalarFunction& f, const std::vector<Tensor>& inputs, double eps = 1e-5);

struct ParameterCheckOptions {
  double eps = 1e-5;
  /// Entries checked per tensor; tensors this small are checked exhaustively.
  std::size_t entries_per_tensor = 3;
  std::uint64_t seed = 7;
  /// Raises the relative-error denominator floor to `gradient_floor` times the
  /// largest |gradient| over all parameters. Entries far below the gradient
  /// scale are otherwise dominated by the O(1e-16 |loss| / eps) round-off of the
  /// central difference. 0 keeps the plain 1e-8 floor.
  double gradient_floor = 0.0;
};

struct ParameterCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t entries_checked = 0;
  /// Probes discarded because a non-smooth op changed branch within +-eps.
  std::size_t entries_skipped = 0;
  /// Tensors where every entry sat on a branch change (none expected).
  std::vector<std::string> tensors_unchecked;
  double max_abs_gradient = 0.0;
};

/// Finite-difference check of a scalar loss against in-place perturbations of
/// model parameters. `loss` is re-evaluated on a fresh tape for each probe and
/// must be deterministic. Entries whose +-eps probes change the tape's branch
/// signature are skipped and replaced by the next candidate.
ParameterCheckResult grad_check_parameters(const std::function<Var(Tape&)>& loss,
                                           std::span<const NamedTensor> params,
                                           const ParameterCheckOptions& options = {});

}  // namespace acenet
