#include "acenet/gradcheck_suite.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "acenet/grad_check.hpp"
#include "acenet/losses.hpp"
#include "acenet/model.hpp"
#include "acenet/phantom.hpp"
#include "acenet/slice_stack.hpp"
#include "acenet/trainer.hpp"

namespace acenet {

namespace {

constexpr double kEps = 1e-5;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(Shape s, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.values()) v = u(rng_);
    return t;
  }
  // Magnitudes in [0.1, 1], so every entry sits far from a kink at 0.
  Tensor away_from_zero(Shape s) {
    Tensor t = uniform(std::move(s), 0.1, 1.0);
    for (auto& v : t.values())
      if (rng_() & 1) v = -v;
    return t;
  }
  // Distinct values spaced 0.05 apart in random order.
  Tensor distinct(Shape s) {
    Tensor t(std::move(s));
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng_);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.05 * static_cast<double>(idx[i]) - 1.0;
    return t;
  }
  std::vector<int> labels(std::size_t n, std::size_t classes) {
    std::vector<int> l(n);
    for (auto& v : l) v = static_cast<int>(rng_() % classes);
    return l;
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

std::vector<GradCheckCase> op_gradient_checks(std::uint64_t seed) {
  Sampler S(seed);
  std::vector<GradCheckCase> out;
  auto check = [&](const std::string& name, const std::vector<Tensor>& inputs, const Shape& out_shape,
                   const std::function<Var(std::span<const Var>)>& op) {
    const Tensor w = S.uniform(out_shape);
    ScalarFunction f = [&](Tape&, std::span<const Var> v) { return weighted_sum(op(v), w); };
    std::size_t entries = 0;
    for (const auto& t : inputs) entries += t.size();
    out.push_back({name, grad_check(f, inputs, kEps), kOpTolerance, entries, "", 0, {}});
  };

  check("conv2d 5x5 pad 2", {S.uniform({2, 6, 6}), S.uniform({3, 2, 5, 5}), S.uniform({3})}, {3, 6, 6},
        [](auto v) { return conv2d(v[0], v[1], v[2], 2); });
  check("conv2d 3x3 pad 0", {S.uniform({2, 6, 6}), S.uniform({3, 2, 3, 3}), S.uniform({3})}, {3, 4, 4},
        [](auto v) { return conv2d(v[0], v[1], v[2], 0); });
  check("conv2d 1x1 batched", {S.uniform({2, 3, 4, 4}), S.uniform({2, 3, 1, 1}), S.uniform({2})}, {2, 2, 4, 4},
        [](auto v) { return conv2d(v[0], v[1], v[2], 0); });
  check("conv2d 5x5 batched", {S.uniform({2, 2, 4, 4}), S.uniform({2, 2, 5, 5}), S.uniform({2})}, {2, 2, 4, 4},
        [](auto v) { return conv2d(v[0], v[1], v[2], 2); });
  check("maxpool2d", {S.distinct({2, 4, 4})}, {2, 2, 2}, [](auto v) { return maxpool2d(v[0]).output; });
  check("upsample2d", {S.uniform({2, 3, 3})}, {2, 6, 6}, [](auto v) { return upsample2d(v[0]); });
  check("dense", {S.uniform({4}), S.uniform({3, 4}), S.uniform({3})}, {3},
        [](auto v) { return dense(v[0], v[1], v[2]); });
  check("dense batched", {S.uniform({2, 4}), S.uniform({3, 4}), S.uniform({3})}, {2, 3},
        [](auto v) { return dense(v[0], v[1], v[2]); });
  check("relu", {S.away_from_zero({2, 3, 3})}, {2, 3, 3}, [](auto v) { return relu(v[0]); });
  check("sigmoid", {S.uniform({2, 3, 3}, -3, 3)}, {2, 3, 3}, [](auto v) { return sigmoid(v[0]); });
  check("softmax_channels", {S.uniform({2, 3, 2, 2}, -2, 2)}, {2, 3, 2, 2},
        [](auto v) { return softmax_channels(v[0]); });
  check("add", {S.uniform({2, 3}), S.uniform({2, 3})}, {2, 3}, [](auto v) { return add(v[0], v[1]); });
  check("mul", {S.uniform({2, 3}), S.uniform({2, 3})}, {2, 3}, [](auto v) { return mul(v[0], v[1]); });
  {
    Tensor a = S.uniform({2, 3, 3});
    Tensor b = S.away_from_zero({2, 3, 3});
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += a[i];
    check("maximum", {a, b}, {2, 3, 3}, [](auto v) { return maximum(v[0], v[1]); });
  }
  check("scale", {S.uniform({5})}, {5}, [](auto v) { return scale(v[0], -1.7); });
  check("concat_channels", {S.uniform({2, 3, 3}), S.uniform({1, 3, 3})}, {3, 3, 3},
        [](auto v) { return concat_channels({v[0], v[1]}); });
  check("slice_channels", {S.uniform({2, 4, 3, 3})}, {2, 2, 3, 3}, [](auto v) { return slice_channels(v[0], 1, 2); });
  check("global_avg_pool", {S.uniform({2, 3, 4, 4})}, {2, 3}, [](auto v) { return global_avg_pool(v[0]); });
  check("scale_channels", {S.uniform({3, 4, 4}), S.uniform({3})}, {3, 4, 4},
        [](auto v) { return scale_channels(v[0], v[1]); });
  check("scale_spatial", {S.uniform({2, 3, 4, 4}), S.uniform({2, 1, 4, 4})}, {2, 3, 4, 4},
        [](auto v) { return scale_spatial(v[0], v[1]); });
  check("reshape", {S.uniform({2, 3, 4})}, {6, 4}, [](auto v) { return reshape(v[0], {6, 4}); });
  check("sum", {S.uniform({2, 3})}, {1}, [](auto v) { return sum(v[0]); });
  {
    BatchNormState st{std::make_shared<Tensor>(Shape{3}, 0.0), std::make_shared<Tensor>(Shape{3}, 1.0)};
    check("batchnorm2d train", {S.uniform({2, 3, 3, 3}), S.uniform({3}, 0.5, 1.5), S.uniform({3})}, {2, 3, 3, 3},
          [st](auto v) { return batchnorm2d(v[0], v[1], v[2], st, true); });
    BatchNormState ev{std::make_shared<Tensor>(S.uniform({3})), std::make_shared<Tensor>(S.uniform({3}, 0.5, 2.0))};
    check("batchnorm2d eval", {S.uniform({2, 3, 3, 3}), S.uniform({3}, 0.5, 1.5), S.uniform({3})}, {2, 3, 3, 3},
          [ev](auto v) { return batchnorm2d(v[0], v[1], v[2], ev, false); });
  }
  check("dropout train", {S.uniform({2, 4, 4})}, {2, 4, 4}, [](auto v) { return dropout(v[0], 0.3, true, 99); });

  // Loss ops take probabilities; feed them through softmax/sigmoid so inputs stay valid.
  {
    const std::vector<int> labels = S.labels(2 * 3 * 3, 3);
    std::vector<double> weights(labels.size());
    for (auto& w : weights) w = 0.5 + static_cast<double>(S.rng()() % 4);
    const Tensor logits = S.uniform({2, 3, 3, 3}, -2, 2);
    auto loss_check = [&](const std::string& name, const std::function<Var(const Var&)>& loss) {
      ScalarFunction f = [&](Tape&, std::span<const Var> v) { return loss(softmax_channels(v[0])); };
      out.push_back({name, grad_check(f, {logits}, kEps), kOpTolerance, logits.size(), "", 0, {}});
    };
    loss_check("ce_loss", [&](const Var& p) { return ce_loss(p, labels); });
    loss_check("ce_loss weighted", [&](const Var& p) { return ce_loss(p, labels, weights); });
    loss_check("dice_loss", [&](const Var& p) { return dice_loss(p, labels); });
    const Tensor presence_logits = S.uniform({2, 4}, -2, 2);
    const std::vector<double> truth{1, 0, 0, 1, 1, 1, 0, 0};
    ScalarFunction f = [&](Tape&, std::span<const Var> v) { return sec_loss(sigmoid(v[0]), truth); };
    out.push_back({"sec_loss", grad_check(f, {presence_logits}, kEps), kOpTolerance, presence_logits.size(), "", 0, {}});
  }
  return out;
}

namespace {

GradCheckCase model_check(const std::string& name, const ACEnetConfig& cfg, std::size_t batch, bool train,
                          std::size_t entries_per_tensor, std::uint64_t seed) {
  ModelParams model = build_model(cfg, seed);
  // Zero biases on an all-zero background put many pre-activations exactly on
  // the relu kink. Check at a generic point instead of the initialization.
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (const auto& p : model.parameters()) {
    const std::string& n = p.name;
    const bool offset = n.ends_with(".bias") || n.ends_with(".shift");
    if (!offset && !n.ends_with(".scale")) continue;
    std::uniform_real_distribution<double> u(offset ? -0.1 : 0.8, offset ? 0.1 : 1.2);
    for (auto& v : p.tensor->values()) v = u(rng);
  }
  std::vector<LabeledCase> cases{synth_phantom(seed, {16, cfg.input_size, cfg.input_size}, cfg.num_structures - 1, 0.02)};
  std::vector<SliceKey> keys;
  for (std::size_t i = 0; i < batch; ++i) keys.push_back({0, 6 + 2 * i});
  const SliceBatch b = make_batch(cases, keys, cfg.s, cfg.num_structures);
  auto loss = [&](Tape& tape) {
    ForwardOutput out = forward(tape, model, tape.constant(batch == 1 ? b.input.reshaped({b.input.dim(1), b.input.dim(2), b.input.dim(3)}) : b.input),
                                {train, seed, false});
    return compute_step_loss(out, b.labels, b.skull, b.presence, {}, kDefaultLambdaSec).total;
  };
  ParameterCheckOptions opts;
  opts.eps = kEps;
  opts.entries_per_tensor = entries_per_tensor;
  opts.seed = seed;
  opts.gradient_floor = kGradientFloor;
  const auto params = model.parameters();
  const ParameterCheckResult r = grad_check_parameters(loss, params, opts);
  return {name, r.max_rel_error, kModelTolerance, r.entries_checked, r.worst_tensor, r.entries_skipped,
          r.tensors_unchecked};
}

}  // namespace

GradCheckCase model_gradient_check(std::size_t entries_per_tensor, std::uint64_t seed) {
  ACEnetConfig cfg;
  cfg.s = 1;
  cfg.num_structures = 5;
  cfg.filters = 8;
  cfg.input_size = 32;
  return model_check("ACEnet toy 32x32 F=8 C=5 s=1 (train mode, batch 2)", cfg, 2, true, entries_per_tensor, seed);
}

GradCheckCase small_model_gradient_check(std::size_t entries_per_tensor, std::uint64_t seed) {
  ACEnetConfig cfg;
  cfg.s = 0;
  cfg.num_structures = 3;
  cfg.filters = 4;
  cfg.input_size = 16;
  return model_check("ACEnet toy 1x16x16 F=4 C=3 s=0 (eval mode)", cfg, 1, false, entries_per_tensor, seed);
}

}  // namespace acenet
