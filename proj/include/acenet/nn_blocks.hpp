#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "acenet/ops.hpp"

namespace acenet {

struct ConvParams {
  std::shared_ptr<Tensor> weight;  // [out, in, k, k]
  std::shared_ptr<Tensor> bias;    // [out]
};

struct DenseLayerParams {
  std::shared_ptr<Tensor> weight;  // [out, in]
  std::shared_ptr<Tensor> bias;    // [out]
};

struct NormParams {
  std::shared_ptr<Tensor> scale;
  std::shared_ptr<Tensor> shift;
  BatchNormState state;
};

/// Two padded 5x5 convolutions and a 1x1 fusion convolution with dense
/// connectivity: conv2 sees concat(x, y1), conv3 sees concat(x, y1, y2).
struct DenseBlockParams {
  std::size_t in_channels = 0;
  std::size_t filters = 0;
  double dropout_rate = 0.0;
  NormParams norm1;
  ConvParams conv1;
  NormParams norm2;
  ConvParams conv2;
  ConvParams conv3;
};

/// Channel (cSE) and spatial (sSE) squeeze-and-excitation.
struct SEParams {
  std::size_t channels = 0;
  std::size_t ratio = 2;
  DenseLayerParams squeeze;  // C -> C/r
  DenseLayerParams excite;   // C/r -> C
  ConvParams spatial;        // 1x1, C -> 1
};

/// A dense block followed by sc-SE recalibration. Encoder, bottleneck and
/// decoder blocks all have this layout.
struct SCSEBlockParams {
  DenseBlockParams dense;
  SEParams se;
};

using BlockPtr = std::shared_ptr<SCSEBlockParams>;

inline constexpr std::size_t kDenseKernel = 5;

/// Seeded parameter initializer: kernels and dense weights uniform in
/// +-sqrt(6/fan_in), biases and norm shifts 0, norm scales 1.
class ParamInit {
 public:
  explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

  std::shared_ptr<Tensor> uniform(Shape shape, std::size_t fan_in);
  static std::shared_ptr<Tensor> constant(Shape shape, double value);

 private:
  std::mt19937_64 rng_;
};

ConvParams make_conv(ParamInit& init, std::size_t in, std::size_t out, std::size_t kernel);
DenseLayerParams make_dense_layer(ParamInit& init, std::size_t in, std::size_t out);
NormParams make_norm(std::size_t channels);
DenseBlockParams make_dense_block(ParamInit& init, std::size_t in_channels, std::size_t filters, double dropout_rate);
SEParams make_se(ParamInit& init, std::size_t channels, std::size_t ratio);
BlockPtr make_scse_block(ParamInit& init, std::size_t in_channels, std::size_t filters, std::size_t ratio,
                         double dropout_rate);

struct BlockContext {
  bool train = false;
  std::uint64_t seed = 0;
};

/// Sample-0 maps captured during a block's forward pass.
struct BlockCapture {
  std::string name;
  Tensor input;      // block input, [C,H,W]
  Tensor attention;  // sSE sigmoid map, [H,W]
  Tensor output;     // block output, [F,H,W]
};

Var conv_forward(Tape& tape, const ConvParams& p, const Var& x, std::size_t pad);
Var dense_layer_forward(Tape& tape, const DenseLayerParams& p, const Var& x);
Var norm_forward(Tape& tape, const NormParams& p, const Var& x, bool train);

Var dense_block_forward(Tape& tape, const DenseBlockParams& p, const Var& x, const BlockContext& ctx);
Var cse_forward(Tape& tape, const SEParams& p, const Var& x);
/// The sSE map sigmoid(conv1x1(x)), one channel.
Var sse_map(Tape& tape, const SEParams& p, const Var& x);
Var sse_forward(Tape& tape, const SEParams& p, const Var& x);
/// Elementwise max of the cSE and sSE outputs. `attention`, when given,
/// receives the sSE map node.
Var scse_forward(Tape& tape, const SEParams& p, const Var& x, Var* attention = nullptr);

Var block_forward(Tape& tape, const SCSEBlockParams& p, const Var& x, const BlockContext& ctx,
                  BlockCapture* capture = nullptr);

struct EncoderOutput {
  Var skip;
  Var pooled;
};
EncoderOutput encoder_block(Tape& tape, const SCSEBlockParams& p, const Var& x, const BlockContext& ctx,
                            BlockCapture* capture = nullptr);
/// Upsamples x, concatenates the skip connection and runs the block.
Var decoder_block(Tape& tape, const SCSEBlockParams& p, const Var& x, const Var& skip, const BlockContext& ctx,
                  BlockCapture* capture = nullptr);

void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix, const ConvParams& p);
void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix, const DenseLayerParams& p);
void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix, const SCSEBlockParams& p);
void append_buffers(std::vector<NamedTensor>& out, const std::string& prefix, const SCSEBlockParams& p);

// Closed-form scalar learnable counts.
std::size_t count_conv_params(std::size_t in, std::size_t out, std::size_t kernel);
std::size_t count_dense_params(std::size_t in, std::size_t out);
std::size_t count_norm_params(std::size_t channels);
std::size_t count_dense_block_params(std::size_t in_channels, std::size_t filters);
std::size_t count_se_params(std::size_t channels, std::size_t ratio);
std::size_t count_block_params(std::size_t in_channels, std::size_t filters, std::size_t ratio);

/// Sum of element counts, counting each distinct tensor once.
std::size_t count_tensor_elements(const std::vector<NamedTensor>& tensors);

}  // namespace acenet
