#pragma once

#include <array>
#include <span>
#include <vector>

#include "acenet/model.hpp"
#include "acenet/volume.hpp"

namespace acenet {

struct Segmentation {
  Volume labels;      // u8/i16 label codes
  Volume brain_mask;  // 0/1
};

/// Slice-by-slice eval-mode inference. Labels are the per-pixel argmax of the
/// brain logits; the mask is the argmax of the skull logits (all ones without
/// a skull head); voxels outside the mask get label 0.
Segmentation segment_volume(const ModelParams& params, const Volume& intensity, std::size_t batch_slices = 8);

struct OverlapRow {
  int label = 0;
  double dice = 0.0;
  double jaccard = 0.0;
  std::size_t pred_count = 0;
  std::size_t truth_count = 0;
  std::size_t intersection = 0;
  bool both_empty() const { return pred_count == 0 && truth_count == 0; }
  bool one_empty() const { return (pred_count == 0) != (truth_count == 0); }
};

/// Dice and Jaccard of each label's binary mask; both-empty gives 1.
std::vector<OverlapRow> overlap_metrics(const Volume& pred, const Volume& truth, std::span<const int> labels);

/// Mean Dice over labels 1..num_classes-1.
double mean_foreground_dice(const Volume& pred, const Volume& truth, std::size_t num_classes);

/// Binary mask of voxels equal to `label`.
Volume label_mask(const Volume& labels, int label);

/// Mask voxels with a face neighbour outside the mask or on the volume edge.
std::vector<std::array<std::size_t, 3>> boundary_voxels(const Volume& mask);

/// Symmetric Hausdorff distance between the boundary voxel sets, in voxels.
/// Throws MetricError when either mask is empty.
double hausdorff(const Volume& pred_mask, const Volume& truth_mask);

/// Squared Euclidean distance from every voxel to the nearest voxel where
/// `sites` is nonzero (exact separable transform). No sites gives +inf.
std::vector<double> squared_distance_transform(const Volume& sites);

}  // namespace acenet
