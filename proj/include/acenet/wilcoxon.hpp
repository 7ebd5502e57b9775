#pragma once

#include <span>
#include <string>

namespace acenet {

enum class WilcoxonMethod { automatic, exact, normal_approximation };

std::string method_name(WilcoxonMethod m);

inline constexpr std::size_t kWilcoxonExactMaxN = 25;

struct PairedTestResult {
  double statistic = 0.0;  // W = min(W+, W-)
  std::size_t n_effective = 0;
  double p_two_sided = 1.0;
  WilcoxonMethod method = WilcoxonMethod::exact;
};

/// Two-sided Wilcoxon signed-rank test on paired scores. Zero differences
/// are dropped and tied magnitudes share mid-ranks. `automatic` picks the
/// exact null distribution for n <= 25 and the tie- and continuity-corrected
/// normal approximation above that.
PairedTestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                      WilcoxonMethod method = WilcoxonMethod::automatic);

}  // namespace acenet
