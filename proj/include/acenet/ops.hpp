#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "acenet/tape.hpp"

namespace acenet {

// Spatial operations take [C,H,W] or batched [N,C,H,W] inputs; per-sample
// semantics are identical and the output keeps the input's rank.

/// Stride-1 cross-correlation with zero padding. kernel [C_out,C_in,k,k], bias [C_out].
Var conv2d(const Var& input, const Var& kernel, const Var& bias, std::size_t pad);

struct PoolResult {
  Var output;
  /// Flat input index of each output element's maximum.
  std::vector<std::size_t> argmax;
};
/// 2x2 max pooling with stride 2. Ties resolve to the lowest flat index.
PoolResult maxpool2d(const Var& input);

/// Nearest-neighbour x2 upsampling.
Var upsample2d(const Var& input);

/// weight [m,n] times input [n] (or each row of [N,n]) plus bias [m].
Var dense(const Var& input, const Var& weight, const Var& bias);

Var relu(const Var& x);
Var sigmoid(const Var& x);
/// Softmax across the channel axis at every spatial location.
Var softmax_channels(const Var& x);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var concat_channels(const std::vector<Var>& parts);
/// Channels [first, first+count) of a spatial tensor.
Var slice_channels(const Var& x, std::size_t first, std::size_t count);
/// Mean over H,W: [C,H,W] -> [C], [N,C,H,W] -> [N,C].
Var global_avg_pool(const Var& x);
/// x[n,c,h,w] * gate[n,c]; gate has the shape of global_avg_pool(x).
Var scale_channels(const Var& x, const Var& gate);
/// x[n,c,h,w] * map[n,0,h,w]; map has a single channel.
Var scale_spatial(const Var& x, const Var& map);
Var reshape(const Var& x, Shape shape);
Var sum(const Var& x);
/// sum(x * weights) with constant weights of the same shape.
Var weighted_sum(const Var& x, const Tensor& weights);

struct BatchNormState {
  std::shared_ptr<Tensor> running_mean;
  std::shared_ptr<Tensor> running_var;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization of [N,C,H,W] (or [C,H,W]). Train mode uses batch
/// statistics and updates `state`; eval mode uses the stored statistics.
Var batchnorm2d(const Var& x, const Var& scale, const Var& shift, const BatchNormState& state, bool train);

/// Inverted dropout. Mask bits are derived from `seed` only.
Var dropout(const Var& x, double rate, bool train, std::uint64_t seed);

}  // namespace acenet
