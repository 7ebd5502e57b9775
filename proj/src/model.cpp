#include "acenet/model.hpp"

#include <map>

#include "acenet/error.hpp"

namespace acenet {

void ACEnetConfig::validate() const {
  if (num_structures < 2) throw ConfigError("num_structures must be at least 2 (background plus one structure)");
  if (filters == 0) throw ConfigError("filters must be positive");
  if (se_ratio == 0 || filters % se_ratio != 0)
    throw ConfigError("se_ratio " + std::to_string(se_ratio) + " must divide filters " + std::to_string(filters));
  if (skull_module && (skull_filters == 0 || skull_filters % se_ratio != 0))
    throw ConfigError("se_ratio must divide skull_filters " + std::to_string(skull_filters));
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
  if (input_size == 0 || input_size % 16 != 0)
    throw ConfigError("input_size " + std::to_string(input_size) + " must be a positive multiple of 16");
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt * 0x9E3779B97F4A7C15ULL);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::string indexed(const char* base, std::size_t i) { return base + std::to_string(i + 1); }

}  // namespace

ModelParams build_model(const ACEnetConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t F = config.filters, r = config.se_ratio;
  const double drop = config.dropout;
  ParamInit init(seed);

  ModelParams m;
  m.config = config;
  for (std::size_t i = 0; i < 4; ++i)
    m.encoders[i] = make_scse_block(init, i == 0 ? config.input_channels() : F, F, r, drop);
  m.bottleneck = make_scse_block(init, F, F, r, drop);
  if (config.parallel_encoders) {
    for (std::size_t i = 0; i < 4; ++i) m.slice_encoders[i] = make_scse_block(init, i == 0 ? 1 : F, F, r, drop);
    m.slice_bottleneck = make_scse_block(init, F, F, r, drop);
    m.bottleneck_fusion = make_conv(init, 2 * F, F, 1);
  }
  for (std::size_t i = 0; i < 4; ++i) m.decoders[i] = make_scse_block(init, 2 * F, F, r, drop);
  if (config.context_module) {
    const std::size_t ctx_in = config.parallel_encoders ? 2 * F : F;
    m.context = ContextParams{make_conv(init, ctx_in, F, 1), make_dense_layer(init, F, config.num_structures - 1),
                              make_dense_layer(init, F, F)};
  }
  if (config.skull_module) {
    SkullHeadParams skull;
    for (std::size_t i = 0; i < 3; ++i) skull.shared_decoders[i] = m.decoders[i];
    skull.last_decoder = make_scse_block(init, 2 * F, config.skull_filters, r, drop);
    skull.classifier = make_conv(init, config.skull_filters, 2, 1);
    m.skull = skull;
  }
  m.classifier = make_conv(init, F, config.num_structures, 1);
  return m;
}

std::vector<NamedTensor> ModelParams::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < 4; ++i) append_parameters(out, indexed("encoder", i), *encoders[i]);
  append_parameters(out, "bottleneck", *bottleneck);
  if (config.parallel_encoders) {
    for (std::size_t i = 0; i < 4; ++i) append_parameters(out, indexed("slice_encoder", i), *slice_encoders[i]);
    append_parameters(out, "slice_bottleneck", *slice_bottleneck);
    append_parameters(out, "bottleneck_fusion", *bottleneck_fusion);
  }
  for (std::size_t i = 0; i < 4; ++i) append_parameters(out, indexed("decoder", i), *decoders[i]);
  if (context) {
    append_parameters(out, "context.encoding", context->encoding);
    append_parameters(out, "context.presence", context->presence);
    append_parameters(out, "context.gamma", context->gamma);
  }
  if (skull) {
    append_parameters(out, "skull.decoder4", *skull->last_decoder);
    append_parameters(out, "skull.classifier", skull->classifier);
  }
  append_parameters(out, "classifier", classifier);
  return out;
}

std::vector<NamedTensor> ModelParams::buffers() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < 4; ++i) append_buffers(out, indexed("encoder", i), *encoders[i]);
  append_buffers(out, "bottleneck", *bottleneck);
  if (config.parallel_encoders) {
    for (std::size_t i = 0; i < 4; ++i) append_buffers(out, indexed("slice_encoder", i), *slice_encoders[i]);
    append_buffers(out, "slice_bottleneck", *slice_bottleneck);
  }
  for (std::size_t i = 0; i < 4; ++i) append_buffers(out, indexed("decoder", i), *decoders[i]);
  if (skull) append_buffers(out, "skull.decoder4", *skull->last_decoder);
  return out;
}

std::size_t count_params(const ACEnetConfig& config) {
  config.validate();
  const std::size_t F = config.filters, r = config.se_ratio;
  std::size_t n = count_block_params(config.input_channels(), F, r) + 3 * count_block_params(F, F, r);
  n += count_block_params(F, F, r);
  if (config.parallel_encoders) {
    n += count_block_params(1, F, r) + 3 * count_block_params(F, F, r);
    n += count_block_params(F, F, r);
    n += count_conv_params(2 * F, F, 1);
  }
  n += 4 * count_block_params(2 * F, F, r);
  if (config.context_module) {
    n += count_conv_params(config.parallel_encoders ? 2 * F : F, F, 1);
    n += count_dense_params(F, config.num_structures - 1);
    n += count_dense_params(F, F);
  }
  if (config.skull_module) {
    n += count_block_params(2 * F, config.skull_filters, r);
    n += count_conv_params(config.skull_filters, 2, 1);
  }
  n += count_conv_params(F, config.num_structures, 1);
  return n;
}

std::size_t count_params(const ModelParams& params) { return count_tensor_elements(params.parameters()); }

std::vector<std::string> copy_matching_state(const ModelParams& from, ModelParams& to) {
  std::map<std::string, std::shared_ptr<Tensor>> source;
  for (auto& t : from.parameters()) source.emplace(t.name, t.tensor);
  for (auto& t : from.buffers()) source.emplace(t.name, t.tensor);
  std::vector<std::string> copied;
  auto copy_list = [&](const std::vector<NamedTensor>& dst) {
    for (const auto& t : dst) {
      auto it = source.find(t.name);
      if (it == source.end() || it->second->shape() != t.tensor->shape()) continue;
      *t.tensor = *it->second;
      copied.push_back(t.name);
    }
  };
  copy_list(to.parameters());
  copy_list(to.buffers());
  return copied;
}

ModelParams clone_model(const ModelParams& params) {
  ModelParams copy = build_model(params.config, 0);
  copy_matching_state(params, copy);
  return copy;
}

ContextOutput encode_context(Tape& tape, const ContextParams& params, const Var& bottleneck_features) {
  Var e = global_avg_pool(relu(conv_forward(tape, params.encoding, bottleneck_features, 0)));
  Var presence = dense_layer_forward(tape, params.presence, e);
  Var gamma = sigmoid(dense_layer_forward(tape, params.gamma, e));
  return {e, presence, gamma};
}

Var recalibrate(const Var& features, const Var& gamma) { return scale_channels(features, gamma); }

Var fuse_skull(const Var& features, const Var& skull_logits) {
  const Shape& fs = features.shape();
  const Shape& ss = skull_logits.shape();
  require(fs.size() == ss.size() && fs.size() >= 3 && fs[fs.size() - 1] == ss[ss.size() - 1] &&
              fs[fs.size() - 2] == ss[ss.size() - 2],
          "fuse_skull: spatial shapes differ: " + shape_string(fs) + " vs " + shape_string(ss));
  Var p_brain = slice_channels(softmax_channels(skull_logits), 1, 1);
  return scale_spatial(features, p_brain);
}

namespace {

Var unbatch(const Var& v) {
  Shape s(v.shape().begin() + 1, v.shape().end());
  return reshape(v, s);
}

}  // namespace

ForwardOutput forward(Tape& tape, const ModelParams& params, const Var& input, const ForwardOptions& options) {
  const ACEnetConfig& cfg = params.config;
  const Shape& is = input.shape();
  require(is.size() == 3 || is.size() == 4, "forward: input must be [2s+1,H,W] or [N,2s+1,H,W]");
  const bool batched = is.size() == 4;
  const std::size_t c_axis = batched ? 1 : 0;
  require(is[c_axis] == cfg.input_channels(), "forward: input has " + std::to_string(is[c_axis]) +
                                                  " channels, model expects 2s+1 = " +
                                                  std::to_string(cfg.input_channels()));
  require(is[c_axis + 1] % 16 == 0 && is[c_axis + 2] % 16 == 0,
          "forward: spatial dims must be divisible by 16, got " + shape_string(is));

  Var x = batched ? input : reshape(input, {1, is[0], is[1], is[2]});
  ForwardOutput out;
  std::vector<BlockCapture>* caps = options.capture ? &out.diagnostics : nullptr;
  std::uint64_t block_index = 0;
  auto run = [&](const std::string& name, auto&& fn) {
    BlockContext ctx{options.train, mix_seed(options.seed, ++block_index)};
    BlockCapture* cap = nullptr;
    if (caps) {
      caps->push_back(BlockCapture{name, {}, {}, {}});
      cap = &caps->back();
    }
    return fn(ctx, cap);
  };

  std::array<Var, 4> skips;
  Var h = x;
  for (std::size_t i = 0; i < 4; ++i) {
    EncoderOutput e = run(indexed("encoder", i), [&](const BlockContext& ctx, BlockCapture* cap) {
      return encoder_block(tape, *params.encoders[i], h, ctx, cap);
    });
    skips[i] = e.skip;
    h = e.pooled;
  }
  Var bottom = run("bottleneck", [&](const BlockContext& ctx, BlockCapture* cap) {
    return block_forward(tape, *params.bottleneck, h, ctx, cap);
  });

  Var context_in = bottom;
  Var decoder_in = bottom;
  if (cfg.parallel_encoders) {
    Var g = slice_channels(x, cfg.s, 1);
    for (std::size_t i = 0; i < 4; ++i) {
      EncoderOutput e = run(indexed("slice_encoder", i), [&](const BlockContext& ctx, BlockCapture* cap) {
        return encoder_block(tape, *params.slice_encoders[i], g, ctx, cap);
      });
      g = e.pooled;
    }
    Var slice_bottom = run("slice_bottleneck", [&](const BlockContext& ctx, BlockCapture* cap) {
      return block_forward(tape, *params.slice_bottleneck, g, ctx, cap);
    });
    context_in = concat_channels({bottom, slice_bottom});
    decoder_in = conv_forward(tape, *params.bottleneck_fusion, context_in, 0);
  }

  std::optional<ContextOutput> context;
  if (params.context) context = encode_context(tape, *params.context, context_in);

  Var d = decoder_in;
  Var d3;
  for (std::size_t i = 0; i < 4; ++i) {
    d = run(indexed("decoder", i), [&](const BlockContext& ctx, BlockCapture* cap) {
      return decoder_block(tape, *params.decoders[i], d, skips[3 - i], ctx, cap);
    });
    if (i == 2) d3 = d;
  }

  Var features = context ? recalibrate(d, context->gamma) : d;
  if (params.skull) {
    for (std::size_t i = 0; i < 3; ++i)
      require(params.skull->shared_decoders[i] == params.decoders[i], "skull head decoders are not shared");
    // Decoders 1-3 are shared, so the skull path reuses the backbone's third decoder output.
    Var sk = run("skull_decoder4", [&](const BlockContext& ctx, BlockCapture* cap) {
      return decoder_block(tape, *params.skull->last_decoder, d3, skips[0], ctx, cap);
    });
    Var skull_logits = conv_forward(tape, params.skull->classifier, sk, 0);
    features = fuse_skull(features, skull_logits);
    out.skull_logits = batched ? skull_logits : unbatch(skull_logits);
  }
  Var logits = conv_forward(tape, params.classifier, features, 0);
  out.brain_logits = batched ? logits : unbatch(logits);
  if (context) {
    out.presence_logits = batched ? context->presence_logits : unbatch(context->presence_logits);
    out.gamma = batched ? context->gamma : unbatch(context->gamma);
    out.context = batched ? context->e : unbatch(context->e);
  }
  return out;
}

}  // namespace acenet
