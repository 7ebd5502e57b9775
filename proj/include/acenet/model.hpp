#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "acenet/nn_blocks.hpp"

namespace acenet {

struct ACEnetConfig {
  /// Slices stacked above and below the center slice; the input has 2s+1 channels.
  std::size_t s = 0;
  /// Segmentation classes including background (label 0).
  std::size_t num_structures = 28;
  std::size_t filters = 64;
  std::size_t se_ratio = 2;
  double dropout = 0.1;
  bool parallel_encoders = false;
  bool skull_module = true;
  /// Anatomical context encoder (presence head + channel gating).
  bool context_module = true;
  /// Width of the skull head's private last decoder block.
  std::size_t skull_filters = 2;
  /// H = W of the network input.
  std::size_t input_size = 256;

  std::size_t input_channels() const { return 2 * s + 1; }
  /// Throws ConfigError describing the first invalid field.
  void validate() const;

  friend bool operator==(const ACEnetConfig&, const ACEnetConfig&) = default;
};

struct ContextParams {
  ConvParams encoding;         // 1x1, bottleneck channels -> F
  DenseLayerParams presence;   // F -> C-1
  DenseLayerParams gamma;      // F -> F
};

struct SkullHeadParams {
  /// Aliases of the backbone's first three decoders (same handles).
  std::array<BlockPtr, 3> shared_decoders;
  BlockPtr last_decoder;
  ConvParams classifier;  // 1x1, skull_filters -> 2
};

struct ModelParams {
  ACEnetConfig config;
  std::array<BlockPtr, 4> encoders;
  BlockPtr bottleneck;
  // Present only with parallel_encoders: a single-slice encoder chain with
  // its own bottleneck, and a 1x1 fusion of the concatenated bottlenecks.
  std::array<BlockPtr, 4> slice_encoders;
  BlockPtr slice_bottleneck;
  std::optional<ConvParams> bottleneck_fusion;
  std::array<BlockPtr, 4> decoders;
  std::optional<ContextParams> context;
  std::optional<SkullHeadParams> skull;
  ConvParams classifier;  // 1x1, F -> C

  /// Learnable tensors, each distinct tensor listed once, in a fixed order.
  std::vector<NamedTensor> parameters() const;
  /// Normalization running statistics.
  std::vector<NamedTensor> buffers() const;
};

/// Builds and initializes every tensor; deterministic for a fixed seed.
ModelParams build_model(const ACEnetConfig& config, std::uint64_t seed);

/// Closed-form learnable scalar count of the configured variant.
std::size_t count_params(const ACEnetConfig& config);
/// Element count of the built tensors.
std::size_t count_params(const ModelParams& params);

/// Copies values of every parameter and buffer whose name exists in both
/// models with identical shape. Returns the names copied.
std::vector<std::string> copy_matching_state(const ModelParams& from, ModelParams& to);

/// Deep copy with the same aliasing structure.
ModelParams clone_model(const ModelParams& params);

struct ForwardOptions {
  bool train = false;
  std::uint64_t seed = 0;
  /// Record per-block feature and attention maps.
  bool capture = false;
};

struct ForwardOutput {
  Var brain_logits;                   // [C,H,W]
  std::optional<Var> skull_logits;    // [2,H,W]
  std::optional<Var> presence_logits; // [C-1]
  std::optional<Var> gamma;           // [F]
  std::optional<Var> context;         // encoded context e, [F]
  std::vector<BlockCapture> diagnostics;
};

/// Full network on a [2s+1,H,W] input (or a batch [N,2s+1,H,W]; outputs then
/// gain a leading N axis).
ForwardOutput forward(Tape& tape, const ModelParams& params, const Var& input, const ForwardOptions& options);

struct ContextOutput {
  Var e;
  Var presence_logits;
  Var gamma;
};
ContextOutput encode_context(Tape& tape, const ContextParams& params, const Var& bottleneck_features);

/// Y[c,h,w] = X[c,h,w] * gamma[c].
Var recalibrate(const Var& features, const Var& gamma);

/// features[c,h,w] * softmax(skull_logits)[1,h,w].
Var fuse_skull(const Var& features, const Var& skull_logits);

}  // namespace acenet
