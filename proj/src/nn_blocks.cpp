#include "acenet/nn_blocks.hpp"

#include <cmath>
#include <unordered_set>

#include "acenet/error.hpp"

namespace acenet {

std::shared_ptr<Tensor> ParamInit::uniform(Shape shape, std::size_t fan_in) {
  auto t = std::make_shared<Tensor>(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t->values()) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    v = (2.0 * u - 1.0) * limit;
  }
  return t;
}

std::shared_ptr<Tensor> ParamInit::constant(Shape shape, double value) {
  return std::make_shared<Tensor>(std::move(shape), value);
}

ConvParams make_conv(ParamInit& init, std::size_t in, std::size_t out, std::size_t kernel) {
  return {init.uniform({out, in, kernel, kernel}, in * kernel * kernel), ParamInit::constant({out}, 0.0)};
}

DenseLayerParams make_dense_layer(ParamInit& init, std::size_t in, std::size_t out) {
  return {init.uniform({out, in}, in), ParamInit::constant({out}, 0.0)};
}

NormParams make_norm(std::size_t channels) {
  return {ParamInit::constant({channels}, 1.0), ParamInit::constant({channels}, 0.0),
          BatchNormState{ParamInit::constant({channels}, 0.0), ParamInit::constant({channels}, 1.0)}};
}

DenseBlockParams make_dense_block(ParamInit& init, std::size_t in_channels, std::size_t filters, double dropout_rate) {
  require(in_channels > 0 && filters > 0, "dense block needs positive channel counts");
  DenseBlockParams p;
  p.in_channels = in_channels;
  p.filters = filters;
  p.dropout_rate = dropout_rate;
  p.norm1 = make_norm(in_channels);
  p.conv1 = make_conv(init, in_channels, filters, kDenseKernel);
  p.norm2 = make_norm(in_channels + filters);
  p.conv2 = make_conv(init, in_channels + filters, filters, kDenseKernel);
  p.conv3 = make_conv(init, in_channels + 2 * filters, filters, 1);
  return p;
}

SEParams make_se(ParamInit& init, std::size_t channels, std::size_t ratio) {
  require(ratio > 0 && channels % ratio == 0,
          "sc-SE ratio " + std::to_string(ratio) + " must divide channel count " + std::to_string(channels));
  SEParams p;
  p.channels = channels;
  p.ratio = ratio;
  p.squeeze = make_dense_layer(init, channels, channels / ratio);
  p.excite = make_dense_layer(init, channels / ratio, channels);
  p.spatial = make_conv(init, channels, 1, 1);
  return p;
}

BlockPtr make_scse_block(ParamInit& init, std::size_t in_channels, std::size_t filters, std::size_t ratio,
                         double dropout_rate) {
  auto block = std::make_shared<SCSEBlockParams>();
  block->dense = make_dense_block(init, in_channels, filters, dropout_rate);
  block->se = make_se(init, filters, ratio);
  return block;
}

Var conv_forward(Tape& tape, const ConvParams& p, const Var& x, std::size_t pad) {
  return conv2d(x, tape.parameter(p.weight), tape.parameter(p.bias), pad);
}

Var dense_layer_forward(Tape& tape, const DenseLayerParams& p, const Var& x) {
  return dense(x, tape.parameter(p.weight), tape.parameter(p.bias));
}

Var norm_forward(Tape& tape, const NormParams& p, const Var& x, bool train) {
  return batchnorm2d(x, tape.parameter(p.scale), tape.parameter(p.shift), p.state, train);
}

namespace {

std::size_t channel_count(const Var& x) {
  const Shape& s = x.shape();
  require(s.size() == 3 || s.size() == 4, "expected [C,H,W] or [N,C,H,W], got " + shape_string(s));
  return s.size() == 3 ? s[0] : s[1];
}

Tensor sample_zero(const Tensor& t) {
  if (t.rank() == 3) return t;
  const Shape s{t.dim(1), t.dim(2), t.dim(3)};
  return Tensor(s, std::vector<double>(t.data(), t.data() + shape_size(s)));
}

}  // namespace

Var dense_block_forward(Tape& tape, const DenseBlockParams& p, const Var& x, const BlockContext& ctx) {
  require(channel_count(x) == p.in_channels, "dense block expects " + std::to_string(p.in_channels) +
                                                 " input channels, got " + std::to_string(channel_count(x)));
  constexpr std::size_t pad = (kDenseKernel - 1) / 2;
  Var y1 = conv_forward(tape, p.conv1, relu(norm_forward(tape, p.norm1, x, ctx.train)), pad);
  Var xy1 = concat_channels({x, y1});
  Var y2 = conv_forward(tape, p.conv2, relu(norm_forward(tape, p.norm2, xy1, ctx.train)), pad);
  Var out = conv_forward(tape, p.conv3, concat_channels({x, y1, y2}), 0);
  return dropout(out, p.dropout_rate, ctx.train, ctx.seed);
}

Var cse_forward(Tape& tape, const SEParams& p, const Var& x) {
  require(channel_count(x) == p.channels, "cSE expects " + std::to_string(p.channels) + " channels");
  Var z = global_avg_pool(x);
  Var gate = sigmoid(dense_layer_forward(tape, p.excite, relu(dense_layer_forward(tape, p.squeeze, z))));
  return scale_channels(x, gate);
}

Var sse_map(Tape& tape, const SEParams& p, const Var& x) {
  require(channel_count(x) == p.channels, "sSE expects " + std::to_string(p.channels) + " channels");
  return sigmoid(conv_forward(tape, p.spatial, x, 0));
}

Var sse_forward(Tape& tape, const SEParams& p, const Var& x) { return scale_spatial(x, sse_map(tape, p, x)); }

Var scse_forward(Tape& tape, const SEParams& p, const Var& x, Var* attention) {
  Var map = sse_map(tape, p, x);
  if (attention) *attention = map;
  return maximum(cse_forward(tape, p, x), scale_spatial(x, map));
}

Var block_forward(Tape& tape, const SCSEBlockParams& p, const Var& x, const BlockContext& ctx,
                  BlockCapture* capture) {
  Var features = dense_block_forward(tape, p.dense, x, ctx);
  Var attention;
  Var out = scse_forward(tape, p.se, features, &attention);
  if (capture) {
    capture->input = sample_zero(x.value());
    Tensor map = sample_zero(attention.value());
    capture->attention = map.reshaped({map.dim(1), map.dim(2)});
    capture->output = sample_zero(out.value());
  }
  return out;
}

EncoderOutput encoder_block(Tape& tape, const SCSEBlockParams& p, const Var& x, const BlockContext& ctx,
                            BlockCapture* capture) {
  Var skip = block_forward(tape, p, x, ctx, capture);
  return {skip, maxpool2d(skip).output};
}

Var decoder_block(Tape& tape, const SCSEBlockParams& p, const Var& x, const Var& skip, const BlockContext& ctx,
                  BlockCapture* capture) {
  const Shape& xs = x.shape();
  const Shape& ss = skip.shape();
  require(xs.size() == ss.size() && xs.size() >= 3, "decoder block: rank mismatch between input and skip");
  const std::size_t r = xs.size();
  require(ss[r - 2] == 2 * xs[r - 2] && ss[r - 1] == 2 * xs[r - 1],
          "decoder block: skip " + shape_string(ss) + " is not twice the spatial size of " + shape_string(xs));
  return block_forward(tape, p, concat_channels({upsample2d(x), skip}), ctx, capture);
}

void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix, const ConvParams& p) {
  out.push_back({prefix + ".weight", p.weight});
  out.push_back({prefix + ".bias", p.bias});
}

void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix, const DenseLayerParams& p) {
  out.push_back({prefix + ".weight", p.weight});
  out.push_back({prefix + ".bias", p.bias});
}

void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix, const SCSEBlockParams& p) {
  const auto& d = p.dense;
  out.push_back({prefix + ".norm1.scale", d.norm1.scale});
  out.push_back({prefix + ".norm1.shift", d.norm1.shift});
  append_parameters(out, prefix + ".conv1", d.conv1);
  out.push_back({prefix + ".norm2.scale", d.norm2.scale});
  out.push_back({prefix + ".norm2.shift", d.norm2.shift});
  append_parameters(out, prefix + ".conv2", d.conv2);
  append_parameters(out, prefix + ".conv3", d.conv3);
  append_parameters(out, prefix + ".cse.squeeze", p.se.squeeze);
  append_parameters(out, prefix + ".cse.excite", p.se.excite);
  append_parameters(out, prefix + ".sse", p.se.spatial);
}

void append_buffers(std::vector<NamedTensor>& out, const std::string& prefix, const SCSEBlockParams& p) {
  out.push_back({prefix + ".norm1.running_mean", p.dense.norm1.state.running_mean});
  out.push_back({prefix + ".norm1.running_var", p.dense.norm1.state.running_var});
  out.push_back({prefix + ".norm2.running_mean", p.dense.norm2.state.running_mean});
  out.push_back({prefix + ".norm2.running_var", p.dense.norm2.state.running_var});
}

std::size_t count_conv_params(std::size_t in, std::size_t out, std::size_t kernel) {
  return out * in * kernel * kernel + out;
}

std::size_t count_dense_params(std::size_t in, std::size_t out) { return out * in + out; }

std::size_t count_norm_params(std::size_t channels) { return 2 * channels; }

std::size_t count_dense_block_params(std::size_t in_channels, std::size_t filters) {
  return count_norm_params(in_channels) + count_conv_params(in_channels, filters, kDenseKernel) +
         count_norm_params(in_channels + filters) + count_conv_params(in_channels + filters, filters, kDenseKernel) +
         count_conv_params(in_channels + 2 * filters, filters, 1);
}

std::size_t count_se_params(std::size_t channels, std::size_t ratio) {
  return count_dense_params(channels, channels / ratio) + count_dense_params(channels / ratio, channels) +
         count_conv_params(channels, 1, 1);
}

std::size_t count_block_params(std::size_t in_channels, std::size_t filters, std::size_t ratio) {
  return count_dense_block_params(in_channels, filters) + count_se_params(filters, ratio);
}

std::size_t count_tensor_elements(const std::vector<NamedTensor>& tensors) {
  std::unordered_set<const Tensor*> seen;
  std::size_t n = 0;
  for (const auto& t : tensors)
    if (seen.insert(t.tensor.get()).second) n += t.tensor->size();
  return n;
}

}  // namespace acenet
