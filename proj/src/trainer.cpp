#include "acenet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "acenet/metrics.hpp"
#include "acenet/slice_stack.hpp"

namespace acenet {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL * (salt + 1));
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::vector<NamedValue> snapshot(const std::vector<NamedTensor>& tensors) {
  std::vector<NamedValue> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back({t.name, *t.tensor});
  return out;
}

void restore(const std::vector<NamedValue>& values, const std::vector<NamedTensor>& into, const char* what) {
  std::map<std::string, const NamedValue*> by_name;
  for (const auto& v : values) by_name[v.name] = &v;
  std::vector<std::string> missing, extra, mismatched;
  std::set<std::string> wanted;
  for (const auto& t : into) {
    wanted.insert(t.name);
    auto it = by_name.find(t.name);
    if (it == by_name.end())
      missing.push_back(t.name);
    else if (it->second->value.shape() != t.tensor->shape())
      mismatched.push_back(t.name + " " + shape_string(it->second->value.shape()) + " vs " +
                           shape_string(t.tensor->shape()));
  }
  for (const auto& v : values)
    if (!wanted.count(v.name)) extra.push_back(v.name);
  if (!missing.empty() || !extra.empty() || !mismatched.empty()) {
    std::string msg = std::string("checkpoint ") + what + " do not match the model config:";
    auto list = [&](const char* label, const std::vector<std::string>& names) {
      if (names.empty()) return;
      msg += std::string(" ") + label + " [";
      for (std::size_t i = 0; i < names.size(); ++i) msg += (i ? ", " : "") + names[i];
      msg += "]";
    };
    list("missing", missing);
    list("unexpected", extra);
    list("shape mismatch", mismatched);
    throw LoadError(msg);
  }
  for (const auto& t : into) *t.tensor = by_name.at(t.name)->value;
}

}  // namespace

std::string stage_name(Stage stage) {
  switch (stage) {
    case Stage::stage1: return "stage1";
    case Stage::stage2: return "stage2";
    case Stage::end_to_end: return "end_to_end";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  if (name == "stage1" || name == "1") return Stage::stage1;
  if (name == "stage2" || name == "2") return Stage::stage2;
  if (name == "end_to_end" || name == "e2e") return Stage::end_to_end;
  throw ConfigError("unknown stage \"" + name + "\" (expected stage1, stage2 or end_to_end)");
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  check(std::isfinite(base_lr) && base_lr >= 0.0, "base_lr must be finite and >= 0");
  check(epochs >= 1, "epochs must be >= 1");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  check(std::isfinite(weight_decay) && weight_decay >= 0.0, "weight_decay must be finite and >= 0");
  check(std::isfinite(power) && power > 0.0, "power must be > 0");
  check(std::isfinite(lambda_sec) && lambda_sec >= 0.0, "lambda_sec must be finite and >= 0");
}

OptimizerState OptimizerState::zeros_like(std::span<const NamedTensor> params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.names.push_back(p.name);
    s.velocity.emplace_back(p.tensor->shape(), 0.0);
  }
  return s;
}

bool OptimizerState::matches(std::span<const NamedTensor> params) const {
  if (names.size() != params.size() || velocity.size() != params.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (names[i] != params[i].name || velocity[i].shape() != params[i].tensor->shape()) return false;
  return true;
}

void sgd_step(std::span<const NamedTensor> params, std::span<const Tensor* const> grads, OptimizerState& state,
              double lr, double momentum, double weight_decay) {
  require(grads.size() == params.size(), "sgd_step: one gradient slot per parameter required");
  require(state.matches(params), "sgd_step: optimizer state does not mirror the parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor* g = grads[i];
    if (!g) continue;
    require(g->shape() == params[i].tensor->shape(), "sgd_step: gradient shape differs for " + params[i].name);
    if (!g->all_finite()) throw TrainingError("non-finite gradient in parameter " + params[i].name);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = *params[i].tensor;
    Tensor& v = state.velocity[i];
    const Tensor* g = grads[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = (g ? (*g)[j] : 0.0) + weight_decay * theta[j];
      v[j] = momentum * v[j] + gj;
      theta[j] -= lr * v[j];
    }
  }
}

Checkpoint make_checkpoint(const ModelParams& model, const TrainConfig& config, const OptimizerState& optimizer) {
  Checkpoint c;
  c.model_config = model.config;
  c.train_config = config;
  c.parameters = snapshot(model.parameters());
  c.buffers = snapshot(model.buffers());
  c.optimizer = optimizer;
  return c;
}

void load_state(const Checkpoint& checkpoint, ModelParams& model) {
  restore(checkpoint.parameters, model.parameters(), "parameters");
  restore(checkpoint.buffers, model.buffers(), "buffers");
}

ModelParams restore_model(const Checkpoint& checkpoint) {
  try {
    checkpoint.model_config.validate();
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint config is invalid: ") + e.what());
  }
  ModelParams model = build_model(checkpoint.model_config, 0);
  load_state(checkpoint, model);
  return model;
}

StepLoss compute_step_loss(const ForwardOutput& out, std::span<const int> labels, std::span<const int> skull,
                           std::span<const double> presence, std::span<const double> weights, double lambda_sec) {
  StepLoss r;
  std::vector<Var> terms;
  Var brain = softmax_channels(out.brain_logits);
  Var ce_brain = ce_loss(brain, labels, weights);
  Var dice_brain = dice_loss(brain, labels);
  r.bundle.l_ce_brain = ce_brain.value().item();
  r.bundle.l_dice_brain = dice_brain.value().item();
  if (out.skull_logits) {
    Var sk = softmax_channels(*out.skull_logits);
    Var ce_skull = ce_loss(sk, skull);
    Var dice_skull = dice_loss(sk, skull);
    r.bundle.l_ce_skull = ce_skull.value().item();
    r.bundle.l_dice_skull = dice_skull.value().item();
    terms.push_back(ce_skull);
    terms.push_back(dice_skull);
  }
  terms.push_back(ce_brain);
  terms.push_back(dice_brain);
  if (out.presence_logits) {
    Var sec = sec_loss(sigmoid(*out.presence_logits), presence);
    r.bundle.l_sec = sec.value().item();
    terms.push_back(scale(sec, lambda_sec));
  }
  r.bundle = total_loss(r.bundle, lambda_sec);
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  r.total = total;
  return r;
}

std::size_t batches_per_epoch(const std::vector<LabeledCase>& cases, std::size_t batch_size) {
  require(batch_size >= 1, "batch size must be >= 1");
  std::size_t slices = 0;
  for (const auto& c : cases) slices += c.intensity.depth();
  return (slices + batch_size - 1) / batch_size;
}

Checkpoint run_training(ModelParams& model, const std::vector<LabeledCase>& cases, const TrainConfig& config,
                        const TrainCallbacks& callbacks, const std::vector<LabeledCase>* validation) {
  config.validate();
  model.config.validate();
  if (cases.empty()) throw ConfigError("training needs at least one case");
  if (config.stage == Stage::stage1 && model.config.skull_module)
    throw ConfigError("stage1 trains without the skull module; set skull_module=false");
  const ACEnetConfig& mc = model.config;

  std::vector<LabeledCase> data = cases;
  for (auto& c : data) {
    c.validate();
    if (c.intensity.height() != mc.input_size || c.intensity.width() != mc.input_size)
      throw ConfigError("case " + c.case_id + " slices are " + std::to_string(c.intensity.height()) + "x" +
                        std::to_string(c.intensity.width()) + ", model input_size is " +
                        std::to_string(mc.input_size));
    if (!c.intensity.intensity_normalized) c.intensity = normalize_intensity(c.intensity);
  }
  std::vector<Volume> weight_maps;
  if (config.class_weights) {
    std::vector<const Volume*> label_volumes;
    for (const auto& c : data) label_volumes.push_back(&c.labels);
    const std::vector<double> freq = label_frequencies(label_volumes, mc.num_structures);
    for (const auto& c : data) weight_maps.push_back(class_weight_map(c.labels, freq));
  }

  const std::vector<NamedTensor> params = model.parameters();
  OptimizerState optimizer = OptimizerState::zeros_like(params);
  Checkpoint state = make_checkpoint(model, config, optimizer);
  state.iter_total = config.epochs * batches_per_epoch(data, config.batch_size);

  std::optional<ModelParams> best;
  double best_dice = -1.0;
  std::vector<const Tensor*> grads(params.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto last_good = std::make_shared<const Checkpoint>(state);
    BatchStream stream(data, config.batch_size, mc.s, mc.num_structures, derive_seed(config.seed, 2 * epoch),
                       config.class_weights ? &weight_maps : nullptr);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    while (auto batch = stream.next()) {
      Tape tape;
      Var input = tape.constant(batch->input);
      ForwardOutput out = forward(tape, model, input, {true, derive_seed(config.seed, 2 * state.iter + 1), false});
      StepLoss loss = compute_step_loss(out, batch->labels, batch->skull, batch->presence, batch->weights,
                                        config.lambda_sec);
      if (!std::isfinite(loss.bundle.l_total))
        throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1) + ", iteration " +
                                std::to_string(state.iter) + " (loss is not finite)",
                            last_good);
      Gradients g = tape.backward(loss.total);
      for (std::size_t i = 0; i < params.size(); ++i) grads[i] = g.of_parameter(params[i].tensor);
      const double lr = poly_lr(config.base_lr, state.iter, state.iter_total, config.power);
      try {
        sgd_step(params, grads, optimizer, lr, config.momentum, config.weight_decay);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at iteration " + std::to_string(state.iter), last_good);
      }
      if (callbacks.on_iteration) callbacks.on_iteration({epoch, state.iter, lr, loss.bundle});
      ++state.iter;
      loss_sum += loss.bundle.l_total;
      ++batches;
    }
    const double mean_loss = loss_sum / static_cast<double>(batches);
    state.loss_history.push_back(mean_loss);
    state.epoch = epoch + 1;
    if (validation && !validation->empty()) {
      double dice = 0.0;
      for (const auto& c : *validation)
        dice += mean_foreground_dice(segment_volume(model, c.intensity).labels, c.labels, mc.num_structures);
      dice /= static_cast<double>(validation->size());
      state.validation_history.push_back(dice);
      if (dice > best_dice) {
        best_dice = dice;
        best = clone_model(model);
        state.best_epoch = epoch + 1;
      }
    }
    if (callbacks.on_epoch) callbacks.on_epoch(epoch, mean_loss);
    state.parameters = snapshot(model.parameters());
    state.buffers = snapshot(model.buffers());
    state.optimizer = optimizer;
  }
  if (best) {
    copy_matching_state(*best, model);
    state.parameters = snapshot(model.parameters());
    state.buffers = snapshot(model.buffers());
  }
  return state;
}

ModelParams stage2_model_from(const ModelParams& stage1, std::uint64_t seed) {
  ACEnetConfig full = stage1.config;
  full.skull_module = true;
  ModelParams model = build_model(full, derive_seed(seed, 0x5ec0d));
  copy_matching_state(stage1, model);
  return model;
}

TwoStageResult two_stage_train(const std::vector<LabeledCase>& cases, const ACEnetConfig& model_config,
                               const TrainConfig& stage1, const TrainConfig& stage2,
                               const TrainCallbacks& callbacks) {
  if (stage1.stage != Stage::stage1 || stage2.stage != Stage::stage2)
    throw ConfigError("two_stage_train needs a stage1 and a stage2 train config");
  ACEnetConfig first = model_config;
  first.skull_module = false;
  ModelParams m1 = build_model(first, stage1.seed);
  TwoStageResult r;
  r.stage1 = run_training(m1, cases, stage1, callbacks);
  r.model = stage2_model_from(m1, stage2.seed);
  r.stage2 = run_training(r.model, cases, stage2, callbacks);
  return r;
}

}  // namespace acenet
