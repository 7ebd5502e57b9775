#include "acenet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "acenet/error.hpp"

namespace acenet {

namespace {

constexpr int kAttemptsPerStructure = 2000;

struct Shape3 {
  bool box = false;
  std::array<double, 3> center{};
  std::array<double, 3> semi{};

  bool contains(double d, double h, double w) const {
    const double x = (d - center[0]) / semi[0];
    const double y = (h - center[1]) / semi[1];
    const double z = (w - center[2]) / semi[2];
    if (box) return std::abs(x) <= 1.0 && std::abs(y) <= 1.0 && std::abs(z) <= 1.0;
    return x * x + y * y + z * z <= 1.0;
  }
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

LabeledCase synth_phantom(std::uint64_t seed, std::array<std::size_t, 3> dims, std::size_t n_structures,
                          double noise_sigma) {
  require(n_structures >= 1 && n_structures + 1 <= 256, "phantom needs 1..255 structures");
  for (auto d : dims) require(d >= 16, "phantom dims must be >= 16 per axis");
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "noise sigma must be finite and non-negative");

  std::mt19937_64 rng(seed);
  LabeledCase c;
  c.case_id = "phantom_" + std::to_string(seed);
  c.intensity = Volume(dims, DType::f32, 0.0);
  c.labels = Volume(dims, DType::u8, 0.0);
  c.brain_mask = Volume(dims, DType::u8, 0.0);

  std::array<double, 3> center{}, semi{};
  for (std::size_t i = 0; i < 3; ++i) {
    center[i] = (static_cast<double>(dims[i]) - 1.0) / 2.0 + uniform(rng, -0.5, 0.5);
    semi[i] = static_cast<double>(dims[i]) * uniform(rng, 0.29, 0.33);
  }
  // Skull shell between normalized radii 1.15 and 1.38 of the brain ellipsoid.
  constexpr double kSkullInner = 1.15, kSkullOuter = 1.38;

  std::size_t brain_voxels = 0;
  for (std::size_t d = 0; d < dims[0]; ++d)
    for (std::size_t h = 0; h < dims[1]; ++h)
      for (std::size_t w = 0; w < dims[2]; ++w) {
        const double x = (d - center[0]) / semi[0], y = (h - center[1]) / semi[1], z = (w - center[2]) / semi[2];
        const double rho = std::sqrt(x * x + y * y + z * z);
        const std::size_t i = c.intensity.index(d, h, w);
        if (rho <= 1.0) {
          c.brain_mask.data[i] = 1.0;
          c.intensity.data[i] = kPhantomTissueLevel;
          ++brain_voxels;
        } else if (rho >= kSkullInner && rho <= kSkullOuter) {
          c.intensity.data[i] = kPhantomSkullLevel;
        }
      }

  const auto min_voxels = static_cast<std::size_t>(std::ceil(0.001 * static_cast<double>(brain_voxels)));
  const double size_factor = 0.55 / std::cbrt(static_cast<double>(n_structures));

  for (std::size_t label = 1; label <= n_structures; ++label) {
    bool placed = false;
    for (int attempt = 0; attempt < kAttemptsPerStructure && !placed; ++attempt) {
      Shape3 s;
      s.box = label % 2 == 0;
      // Later attempts try smaller shapes; crowded or small volumes still fit.
      const double shrink = std::pow(0.5, attempt / 250.0);
      std::array<double, 3> dir{};
      double norm = 0.0;
      for (auto& v : dir) {
        v = std::normal_distribution<double>(0.0, 1.0)(rng);
        norm += v * v;
      }
      const double radius = std::cbrt(uniform(rng, 0.0, 1.0)) / std::max(std::sqrt(norm), 1e-12);
      for (std::size_t i = 0; i < 3; ++i) {
        // Through-plane extent of at least 2 voxels so each structure spans several slices.
        const double floor_semi = i == 0 ? 2.0 : (attempt < kAttemptsPerStructure / 2 ? 1.5 : 1.0);
        s.semi[i] = std::max(floor_semi, semi[i] * size_factor * shrink * uniform(rng, 0.6, 1.0));
        s.center[i] = center[i] + dir[i] * radius * std::max(0.0, semi[i] - s.semi[i]);
      }
      std::vector<std::size_t> voxels;
      bool ok = true;
      std::array<std::size_t, 3> lo{}, hi{};
      for (std::size_t i = 0; i < 3 && ok; ++i) {
        const double a = std::floor(s.center[i] - s.semi[i]) - 1.0, b = std::ceil(s.center[i] + s.semi[i]) + 1.0;
        if (a < 0.0 || b > static_cast<double>(dims[i]) - 1.0) ok = false;
        lo[i] = static_cast<std::size_t>(std::max(0.0, a));
        hi[i] = static_cast<std::size_t>(std::max(0.0, std::min(b, static_cast<double>(dims[i]) - 1.0)));
      }
      for (std::size_t d = lo[0]; ok && d <= hi[0]; ++d)
        for (std::size_t h = lo[1]; ok && h <= hi[1]; ++h)
          for (std::size_t w = lo[2]; ok && w <= hi[2]; ++w) {
            if (!s.contains(d, h, w)) continue;
            const std::size_t i = c.labels.index(d, h, w);
            if (c.brain_mask.data[i] == 0.0) ok = false;
            // One voxel of clearance from every earlier structure (face neighbours included).
            for (int dd = -1; ok && dd <= 1; ++dd)
              for (int dh = -1; ok && dh <= 1; ++dh)
                for (int dw = -1; ok && dw <= 1; ++dw) {
                  const std::size_t j = c.labels.index(d + dd, h + dh, w + dw);
                  if (c.labels.data[j] != 0.0) ok = false;
                }
            voxels.push_back(i);
          }
      if (!ok || voxels.size() < min_voxels) continue;
      for (auto i : voxels) c.labels.data[i] = static_cast<double>(label);
      placed = true;
    }
    if (!placed)
      throw GenerationError("could not place structure " + std::to_string(label) + " of " +
                            std::to_string(n_structures) + " after " + std::to_string(kAttemptsPerStructure) +
                            " attempts");
  }

  const double step = n_structures > 1 ? (kPhantomStructureHigh - kPhantomStructureLow) / (n_structures - 1) : 0.0;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < c.intensity.data.size(); ++i) {
    const double label = c.labels.data[i];
    if (label != 0.0) c.intensity.data[i] = kPhantomStructureLow + step * (label - 1.0);
    if (noise_sigma > 0.0) c.intensity.data[i] += noise_sigma * noise(rng);
  }
  return c;
}

}  // namespace acenet
