#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "acenet/tensor.hpp"
#include "acenet/volume.hpp"

namespace acenet {

struct SliceStack {
  Tensor input;                    // [2s+1,H,W]
  std::vector<int> center_labels;  // [H,W]
  std::vector<int> center_skull;   // [H,W], 1 inside the brain mask
  std::vector<double> presence;    // [C-1]
  std::string case_id;
  std::size_t slice_index = 0;
  /// Source slice of each input channel.
  std::vector<std::size_t> channel_sources;
};

/// Source slices for the 2s+1 channels around `slice_index`; indices outside
/// [0, depth) are replaced by `slice_index` itself.
std::vector<std::size_t> slice_sources(std::size_t slice_index, std::size_t s, std::size_t depth);

/// Uses the intensities as stored when the volume is flagged normalized and
/// min-max scales them on the fly otherwise.
SliceStack extract_slice_stack(const LabeledCase& c, std::size_t slice_index, std::size_t s, std::size_t num_classes);

struct SliceKey {
  std::size_t case_index = 0;
  std::size_t slice_index = 0;
  friend bool operator==(const SliceKey&, const SliceKey&) = default;
};

struct SliceBatch {
  Tensor input;                    // [N,2s+1,H,W]
  std::vector<int> labels;         // N*H*W
  std::vector<int> skull;          // N*H*W
  std::vector<double> presence;    // N*(C-1)
  std::vector<double> weights;     // N*H*W, empty without weight maps
  std::vector<SliceKey> keys;
  std::size_t size() const { return keys.size(); }
};

/// Every (case, slice) pair once, shuffled by `shuffle_seed`, cut into
/// batches of `batch_size` with a final partial batch.
std::vector<std::vector<SliceKey>> batch_schedule(const std::vector<LabeledCase>& cases, std::size_t batch_size,
                                                  std::uint64_t shuffle_seed);

/// Stacks the slices named by `keys`. `weight_maps`, when given, has one
/// per-voxel weight volume per case.
SliceBatch make_batch(const std::vector<LabeledCase>& cases, const std::vector<SliceKey>& keys, std::size_t s,
                      std::size_t num_classes, const std::vector<Volume>* weight_maps = nullptr);

/// One epoch of batches.
class BatchStream {
 public:
  BatchStream(const std::vector<LabeledCase>& cases, std::size_t batch_size, std::size_t s, std::size_t num_classes,
              std::uint64_t shuffle_seed, const std::vector<Volume>* weight_maps = nullptr);

  std::optional<SliceBatch> next();
  std::size_t batch_count() const { return schedule_.size(); }

 private:
  const std::vector<LabeledCase>& cases_;
  std::size_t s_;
  std::size_t num_classes_;
  const std::vector<Volume>* weight_maps_;
  std::vector<std::vector<SliceKey>> schedule_;
  std::size_t cursor_ = 0;
};

inline BatchStream batch_iter(const std::vector<LabeledCase>& cases, std::size_t batch_size, std::size_t s,
                              std::size_t num_classes, std::uint64_t shuffle_seed) {
  return BatchStream(cases, batch_size, s, num_classes, shuffle_seed);
}

}  // namespace acenet
