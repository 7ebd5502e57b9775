#pragma once

#include <array>
#include <cstdint>

#include "acenet/volume.hpp"

namespace acenet {

inline constexpr double kPhantomTissueLevel = 0.3;
inline constexpr double kPhantomSkullLevel = 1.0;
inline constexpr double kPhantomStructureLow = 0.45;
inline constexpr double kPhantomStructureHigh = 0.85;

/// Synthetic labelled head: an ellipsoidal brain (the mask), an ellipsoidal
/// skull shell outside it, and `n_structures` disjoint ellipsoids/boxes inside
/// the brain labelled 1..n. Intensities are per-label levels plus Gaussian
/// noise. Identical arguments give identical cases.
LabeledCase synth_phantom(std::uint64_t seed, std::array<std::size_t, 3> dims, std::size_t n_structures,
                          double noise_sigma);

}  // namespace acenet
