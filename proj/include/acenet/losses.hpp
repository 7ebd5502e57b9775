#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "acenet/ops.hpp"
#include "acenet/volume.hpp"

namespace acenet {

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kDiceEpsilon = 1e-8;
inline constexpr double kDefaultLambdaSec = 0.1;
inline constexpr double kDefaultPolyPower = 0.9;

// Segmentation losses take class probabilities [C,H,W] or [N,C,H,W] and one
// label per pixel in (n,h,w) order.

/// Mean pixel-wise cross-entropy; with `weights` (one per pixel) the mean is
/// weighted and normalized by the weight total.
Var ce_loss(const Var& probs, std::span<const int> labels, std::span<const double> weights = {});

/// Soft multi-class Dice loss averaged over all C classes, in [-1, 0].
Var dice_loss(const Var& probs, std::span<const int> labels);

/// Mean binary cross-entropy of presence probabilities [C'] or [N,C'].
Var sec_loss(const Var& presence_probs, std::span<const double> truth);

struct LossBundle {
  double l_ce_brain = 0.0;
  double l_dice_brain = 0.0;
  double l_ce_skull = 0.0;
  double l_dice_skull = 0.0;
  double l_sec = 0.0;
  double lambda_sec = kDefaultLambdaSec;
  double l_total = 0.0;
};

/// Fills l_total = ce_skull + dice_skull + ce_brain + dice_brain + lambda*sec
/// (left to right) from the component fields.
LossBundle total_loss(LossBundle components, double lambda_sec = kDefaultLambdaSec);

/// Voxel-count frequency of every label 0..num_labels-1 over the given label volumes.
std::vector<double> label_frequencies(std::span<const Volume* const> label_volumes, std::size_t num_labels);

/// Per-pixel weights median(f)/f_l plus 2*median(f)/f_l on pixels with a
/// 4-neighbour (within the coronal slice) of a different label.
Volume class_weight_map(const Volume& labels, std::span<const double> frequencies);

/// Entry i-1 is 1 iff label i occurs in the slice.
std::vector<double> presence_vector(std::span<const int> label_slice, std::size_t num_classes);

/// base_lr * (1 - iter/iter_total)^power.
double poly_lr(double base_lr, std::size_t iter, std::size_t iter_total, double power = kDefaultPolyPower);

}  // namespace acenet
