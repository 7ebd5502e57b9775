#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "acenet/error.hpp"
#include "acenet/grad_check.hpp"
#include "acenet/model.hpp"
#include "acenet/nn_blocks.hpp"

using namespace acenet;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

void zero_all(const std::vector<NamedTensor>& params) {
  for (const auto& p : params) p.tensor->fill(0.0);
}

std::vector<NamedTensor> se_params(const SEParams& p) {
  std::vector<NamedTensor> out;
  append_parameters(out, "squeeze", p.squeeze);
  append_parameters(out, "excite", p.excite);
  append_parameters(out, "spatial", p.spatial);
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(DenseBlock, PreservesSpatialDims) {
  ParamInit init(1);
  const DenseBlockParams p = make_dense_block(init, 3, 4, 0.1);
  for (auto hw : {std::pair{5, 5}, std::pair{8, 6}, std::pair{7, 9}}) {
    Tape tape;
    Var y = dense_block_forward(tape, p, tape.constant(random_tensor({3, std::size_t(hw.first), std::size_t(hw.second)}, 2)),
                                {true, 3});
    EXPECT_EQ(y.shape(), (Shape{4, std::size_t(hw.first), std::size_t(hw.second)}));
  }
}

TEST(DenseBlock, ZeroInputZeroBiasGivesZero) {
  ParamInit init(2);
  const DenseBlockParams p = make_dense_block(init, 2, 4, 0.1);
  Tape tape;
  Var y = dense_block_forward(tape, p, tape.constant(Tensor({2, 8, 8}, 0.0)), {false, 0});
  for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(DenseBlock, ChannelMismatchRejected) {
  ParamInit init(2);
  const DenseBlockParams p = make_dense_block(init, 2, 4, 0.0);
  Tape tape;
  EXPECT_THROW(dense_block_forward(tape, p, tape.constant(Tensor({3, 8, 8})), {false, 0}), ContractViolation);
}

TEST(DenseBlock, KernelSizes) {
  ParamInit init(3);
  const DenseBlockParams p = make_dense_block(init, 2, 4, 0.0);
  EXPECT_EQ(p.conv1.weight->shape(), (Shape{4, 2, 5, 5}));
  EXPECT_EQ(p.conv2.weight->shape(), (Shape{4, 6, 5, 5}));
  EXPECT_EQ(p.conv3.weight->shape(), (Shape{4, 10, 1, 1}));
}

TEST(DenseBlock, ToyGradientCheck) {
  ParamInit init(4);
  DenseBlockParams p = make_dense_block(init, 2, 4, 0.0);
  std::vector<NamedTensor> params;
  append_parameters(params, "conv1", p.conv1);
  append_parameters(params, "conv2", p.conv2);
  append_parameters(params, "conv3", p.conv3);
  params.push_back({"norm1.scale", p.norm1.scale});
  params.push_back({"norm1.shift", p.norm1.shift});
  const Tensor x = random_tensor({2, 8, 8}, 5);
  const Tensor w = random_tensor({4, 8, 8}, 6);
  // Eval-mode normalization with non-trivial running stats keeps the block smooth.
  p.norm1.state.running_mean->fill(0.1);
  p.norm2.state.running_var->fill(2.0);
  auto loss = [&](Tape& tape) { return weighted_sum(dense_block_forward(tape, p, tape.constant(x), {false, 0}), w); };
  ParameterCheckOptions opts;
  opts.entries_per_tensor = 6;
  EXPECT_LT(grad_check_parameters(loss, params, opts).max_rel_error, 1e-5);
}

TEST(SE, ZeroInputAndForcedGates) {
  ParamInit init(5);
  SEParams p = make_se(init, 4, 2);
  {
    Tape tape;
    Var y = cse_forward(tape, p, tape.constant(Tensor({4, 3, 3}, 0.0)));
    for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
  }
  zero_all(se_params(p));
  const Tensor x = random_tensor({4, 3, 3}, 6);
  Tape tape;
  for (Var y : {cse_forward(tape, p, tape.constant(x)), sse_forward(tape, p, tape.constant(x)),
                scse_forward(tape, p, tape.constant(x))})
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.value()[i], 0.5 * x[i]);
}

TEST(SE, CseHandComputed) {
  ParamInit init(7);
  SEParams p = make_se(init, 4, 2);
  // Channel c holds the constant c+1, so the pooled vector is (1,2,3,4).
  Tensor x({4, 2, 2});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 4; ++i) x[c * 4 + i] = static_cast<double>(c + 1);
  *p.squeeze.weight = Tensor({2, 4}, {1, 0, 0, 0, 0, 0, 0, 1});
  *p.squeeze.bias = Tensor({2}, {0, -5});
  *p.excite.weight = Tensor({4, 2}, {1, 0, 0, 1, 1, 1, -1, 0});
  *p.excite.bias = Tensor({4}, {0, 0, 0.5, 0});
  // hidden = relu(1, 4-5) = (1, 0); gates = sigmoid(1, 0, 1.5, -1)
  const double g[4] = {sigmoid(1.0), 0.5, sigmoid(1.5), sigmoid(-1.0)};
  Tape tape;
  Var y = cse_forward(tape, p, tape.constant(x));
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.value()[c * 4 + i], g[c] * (c + 1.0), 1e-15);
}

TEST(SE, SseSaturates) {
  ParamInit init(8);
  SEParams p = make_se(init, 3, 1);
  p.spatial.weight->fill(0.0);
  p.spatial.bias->fill(50.0);
  const Tensor x = random_tensor({3, 4, 4}, 9);
  Tape tape;
  Var y = sse_forward(tape, p, tape.constant(x));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.value()[i], x[i], 1e-9);
}

TEST(SE, ScseIsElementwiseMaxOfBranches) {
  ParamInit init(10);
  const SEParams p = make_se(init, 4, 2);
  const Tensor x = random_tensor({4, 5, 5}, 11);
  Tape tape;
  Var c = cse_forward(tape, p, tape.constant(x));
  Var s = sse_forward(tape, p, tape.constant(x));
  Var m = scse_forward(tape, p, tape.constant(x));
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(m.value()[i], std::max(c.value()[i], s.value()[i]));
    EXPECT_GE(m.value()[i], c.value()[i]);
    EXPECT_GE(m.value()[i], s.value()[i]);
  }
}

TEST(SE, ScseEqualsCseWhenCseDominates) {
  ParamInit init(12);
  SEParams p = make_se(init, 2, 2);
  // Positive input; cSE gate ~1, sSE gate ~0.
  p.excite.bias->fill(40.0);
  p.spatial.weight->fill(0.0);
  p.spatial.bias->fill(-40.0);
  const Tensor x = random_tensor({2, 3, 3}, 13, 0.1, 1.0);
  Tape tape;
  EXPECT_EQ(scse_forward(tape, p, tape.constant(x)).value(), cse_forward(tape, p, tape.constant(x)).value());
}

TEST(SE, SseGradientCheck) {
  ParamInit init(14);
  const SEParams p = make_se(init, 3, 1);
  const Tensor w = random_tensor({3, 4, 4}, 15);
  ScalarFunction f = [&](Tape& tape, std::span<const Var> v) { return weighted_sum(sse_forward(tape, p, v[0]), w); };
  EXPECT_LT(grad_check(f, {random_tensor({3, 4, 4}, 16)}), 1e-6);
}

TEST(Encoder, Shapes) {
  ParamInit init(17);
  const auto p = make_scse_block(init, 1, 4, 2, 0.1);
  Tape tape;
  EncoderOutput e = encoder_block(tape, *p, tape.constant(random_tensor({1, 64, 64}, 18)), {false, 0});
  EXPECT_EQ(e.skip.shape(), (Shape{4, 64, 64}));
  EXPECT_EQ(e.pooled.shape(), (Shape{4, 32, 32}));
  EXPECT_THROW(encoder_block(tape, *p, tape.constant(Tensor({1, 7, 8})), {false, 0}), ContractViolation);
}

TEST(Encoder, FourStagesOn256) {
  ParamInit init(19);
  std::vector<BlockPtr> blocks{make_scse_block(init, 1, 2, 2, 0.0)};
  for (int i = 0; i < 3; ++i) blocks.push_back(make_scse_block(init, 2, 2, 2, 0.0));
  Tape tape;
  Var x = tape.constant(random_tensor({1, 256, 256}, 20));
  for (const auto& b : blocks) x = encoder_block(tape, *b, x, {false, 0}).pooled;
  EXPECT_EQ(x.shape(), (Shape{2, 16, 16}));
}

TEST(Encoder, ChainGradientCheck) {
  ParamInit init(21);
  auto e1 = make_scse_block(init, 1, 2, 2, 0.0);
  auto e2 = make_scse_block(init, 2, 2, 2, 0.0);
  std::vector<NamedTensor> params;
  append_parameters(params, "e1", *e1);
  append_parameters(params, "e2", *e2);
  const Tensor x = random_tensor({1, 8, 8}, 22);
  const Tensor w = random_tensor({2, 2, 2}, 23);
  auto loss = [&](Tape& tape) {
    Var h = encoder_block(tape, *e1, tape.constant(x), {false, 0}).pooled;
    return weighted_sum(encoder_block(tape, *e2, h, {false, 0}).pooled, w);
  };
  ParameterCheckOptions opts;
  opts.entries_per_tensor = 4;
  const auto r = grad_check_parameters(loss, params, opts);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor;
  EXPECT_TRUE(r.tensors_unchecked.empty());
}

TEST(Decoder, ShapesZeroCaseAndGradient) {
  ParamInit init(24);
  auto d = make_scse_block(init, 4, 2, 2, 0.1);
  Tape tape;
  Var y = decoder_block(tape, *d, tape.constant(random_tensor({2, 16, 16}, 25)),
                        tape.constant(random_tensor({2, 32, 32}, 26)), {false, 0});
  EXPECT_EQ(y.shape(), (Shape{2, 32, 32}));
  EXPECT_THROW(decoder_block(tape, *d, tape.constant(Tensor({2, 16, 16})), tape.constant(Tensor({2, 30, 30})),
                             {false, 0}),
               ContractViolation);
  Var z = decoder_block(tape, *d, tape.constant(Tensor({2, 4, 4})), tape.constant(Tensor({2, 8, 8})), {false, 0});
  for (double v : z.value().values()) EXPECT_EQ(v, 0.0);

  std::vector<NamedTensor> params;
  append_parameters(params, "d", *d);
  const Tensor x = random_tensor({2, 4, 4}, 27), skip = random_tensor({2, 8, 8}, 28), w = random_tensor({2, 8, 8}, 29);
  auto loss = [&](Tape& t) { return weighted_sum(decoder_block(t, *d, t.constant(x), t.constant(skip), {false, 0}), w); };
  EXPECT_LT(grad_check_parameters(loss, params).max_rel_error, 1e-4);
}

TEST(Blocks, ForwardDeterministic) {
  ParamInit init(30);
  auto b = make_scse_block(init, 2, 4, 2, 0.1);
  const Tensor x = random_tensor({2, 8, 8}, 31);
  Tape t1, t2;
  EXPECT_EQ(block_forward(t1, *b, t1.constant(x), {true, 9}).value(), block_forward(t2, *b, t2.constant(x), {true, 9}).value());
}

TEST(ParamCount, DenseLayerClosedForm) {
  // 3 inputs, 4 outputs: 12 weights and 4 biases. Reversed, the biases drop to 3.
  EXPECT_EQ(count_dense_params(3, 4), 16u);
  EXPECT_EQ(count_dense_params(4, 3), 15u);
  ParamInit init(1);
  for (auto [in, out, total] : {std::array<std::size_t, 3>{3, 4, 16}, std::array<std::size_t, 3>{4, 3, 15}}) {
    std::vector<NamedTensor> t;
    append_parameters(t, "fc", make_dense_layer(init, in, out));
    EXPECT_EQ(count_tensor_elements(t), total);
  }
}

TEST(ParamCount, ToyConfigHandLedger) {
  ACEnetConfig cfg;
  cfg.filters = 8;
  cfg.num_structures = 5;
  cfg.s = 1;
  cfg.input_size = 32;
  // Dense block (in, F=8): norm 2*in, conv 5x5 in->8, norm 2*(in+8), conv 5x5 (in+8)->8, conv 1x1 (in+16)->8.
  // sc-SE(8): 8->4 (36), 4->8 (40), 1x1 8->1 (9) = 85.
  const std::size_t block_3 = 6 + 608 + 22 + 2208 + 160 + 85;     // first encoder, 3 input channels
  const std::size_t block_8 = 16 + 1608 + 32 + 3208 + 200 + 85;   // encoders 2-4 and bottleneck
  const std::size_t block_16 = 32 + 3208 + 48 + 4808 + 264 + 85;  // decoders see concat(up, skip)
  const std::size_t context = 72 + 36 + 72;                       // 1x1 conv, presence 8->4, gamma 8->8
  // Skull decoder (16 -> 2): 32 + 802 + 36 + 902 + 42, its sc-SE(2): 3 + 4 + 3, classifier 2->2.
  const std::size_t skull = 1814 + 10 + 6;
  const std::size_t classifier = 45;
  const std::size_t ledger = block_3 + 3 * block_8 + block_8 + 4 * block_16 + context + skull + classifier;
  EXPECT_EQ(ledger, 59520u);
  EXPECT_EQ(count_params(cfg), ledger);
  EXPECT_EQ(count_params(build_model(cfg, 1)), ledger);
}

TEST(ParamCount, MonotoneInFiltersAndSlices) {
  ACEnetConfig cfg;
  cfg.input_size = 32;
  std::size_t prev = 0;
  for (std::size_t f : {4, 8, 16, 32, 64}) {
    cfg.filters = f;
    EXPECT_GT(count_params(cfg), prev);
    prev = count_params(cfg);
  }
  prev = 0;
  for (std::size_t s = 0; s <= 5; ++s) {
    cfg.s = s;
    EXPECT_GT(count_params(cfg), prev);
    prev = count_params(cfg);
  }
}
