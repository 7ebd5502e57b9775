#include "acenet/wilcoxon.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "acenet/error.hpp"

namespace acenet {

std::string method_name(WilcoxonMethod m) {
  switch (m) {
    case WilcoxonMethod::automatic: return "automatic";
    case WilcoxonMethod::exact: return "exact";
    case WilcoxonMethod::normal_approximation: return "normal_approximation";
  }
  return "?";
}

PairedTestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, WilcoxonMethod method) {
  require(a.size() == b.size(), "wilcoxon_signed_rank: samples must be paired (equal lengths)");
  require(a.size() >= 2, "wilcoxon_signed_rank: need at least two pairs");

  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    require(std::isfinite(d), "wilcoxon_signed_rank: non-finite score");
    if (d != 0.0) diff.push_back(d);
  }
  PairedTestResult r;
  r.n_effective = diff.size();
  if (method == WilcoxonMethod::automatic)
    method = r.n_effective <= kWilcoxonExactMaxN ? WilcoxonMethod::exact : WilcoxonMethod::normal_approximation;
  r.method = method;
  if (diff.empty()) {
    r.p_two_sided = 1.0;
    return r;
  }
  const std::size_t n = diff.size();

  // Doubled mid-ranks keep tied ranks integral.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(diff[i]) < std::abs(diff[j]); });
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diff[order[j + 1]]) == std::abs(diff[order[i]])) ++j;
    const long mid2 = static_cast<long>(i + j + 2);  // 2 * (i+1 + j+1)/2
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = mid2;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  long w_plus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (diff[i] > 0) w_plus2 += rank2[i];
  }
  const long w_min2 = std::min(w_plus2, total2 - w_plus2);
  r.statistic = static_cast<double>(w_min2) / 2.0;

  if (method == WilcoxonMethod::exact) {
    // Null distribution of the doubled W+ over all 2^n sign assignments.
    std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
    count[0] = 1.0;
    long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (long s = reach; s >= 0; --s)
        if (count[s] != 0.0) count[s + rank2[i]] += count[s];
      reach += rank2[i];
    }
    double lower = 0.0;
    for (long s = 0; s <= w_min2; ++s) lower += count[s];
    r.p_two_sided = std::min(1.0, 2.0 * lower / std::ldexp(1.0, static_cast<int>(n)));
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0.0) {
      r.p_two_sided = 1.0;
      return r;
    }
    const double w_plus = static_cast<double>(w_plus2) / 2.0;
    const double z = std::max(0.0, std::abs(w_plus - mean) - 0.5) / std::sqrt(var);
    r.p_two_sided = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  return r;
}

}  // namespace acenet
