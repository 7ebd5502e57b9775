#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace acenet {

inline constexpr double kOpTolerance = 1e-6;
inline constexpr double kModelTolerance = 1e-4;
/// Model checks measure error relative to max(|a|, |n|, kGradientFloor * max|grad|).
inline constexpr double kGradientFloor = 1e-5;

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t entries = 0;
  std::string worst;  // worst entry, for model checks
  std::size_t skipped = 0;
  std::vector<std::string> unchecked;
  bool passed() const { return max_rel_error < tolerance && unchecked.empty(); }
};

/// Finite-difference checks of every differentiable op on small random inputs
/// sampled away from kinks and ties.
std::vector<GradCheckCase> op_gradient_checks(std::uint64_t seed = 1);

/// Every parameter tensor of the toy model (32x32, F=8, C=5, s=1, skull and
/// context heads on), all five loss terms, train mode with batch 2.
/// `entries_per_tensor` entries are probed per tensor, starting from the
/// largest-gradient entry; probes that straddle a relu/maxpool branch change
/// are replaced.
GradCheckCase model_gradient_check(std::size_t entries_per_tensor = 3, std::uint64_t seed = 1);

/// 16x16 single-slice eval-mode variant of the model check.
GradCheckCase small_model_gradient_check(std::size_t entries_per_tensor = 3, std::uint64_t seed = 2);

}  // namespace acenet
