// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "acenet/attention.hpp"
#include "acenet/checkpoint.hpp"
#include "acenet/commands.hpp"
#include "acenet/gradcheck_suite.hpp"
#include "acenet/losses.hpp"
#include "acenet/metrics.hpp"
#include "acenet/model.hpp"
#include "acenet/phantom.hpp"
#include "acenet/report.hpp"
#include "acenet/slice_stack.hpp"
#include "acenet/trainer.hpp"
#include "acenet/wilcoxon.hpp"

using namespace acenet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      out_.pass = false;
      if (failures_++ < 5) out_.detail += (out_.detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : ", ") + s; }
  Outcome finish() {
    if (out_.pass) out_.detail = notes_;
    else if (!notes_.empty()) out_.detail += " | " + notes_;
    return out_;
  }

 private:
  Outcome out_;
  std::string notes_;
  int failures_ = 0;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  if (code != 0) std::fprintf(stderr, "acenet %s: %s", args[0].c_str(), err.str().c_str());
  return code;
}

fs::path scratch_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / ("acenet_acceptance_" + std::to_string(std::random_device{}()));
    fs::create_directories(p);
    return p;
  }();
  return root;
}

// 1 -----------------------------------------------------------------------
Outcome gradient_fidelity() {
  Check c;
  const double t0 = cpu_seconds();
  double worst_op = 0.0;
  for (const auto& op : op_gradient_checks(1)) {
    worst_op = std::max(worst_op, op.max_rel_error);
    c.expect(op.max_rel_error < 1e-6 && op.entries > 0, op.name + " rel err " + fmt("%.2e", op.max_rel_error));
  }
  const GradCheckCase model = model_gradient_check(12, 1);
  c.expect(model.max_rel_error < 1e-4, "model rel err " + fmt("%.2e", model.max_rel_error) + " at " + model.worst);
  c.expect(model.unchecked.empty(), std::to_string(model.unchecked.size()) + " tensors had no checkable entry");
  const double cpu = cpu_seconds() - t0;
  c.expect(cpu < 120.0, "cpu " + fmt("%.1f s", cpu));
  c.note("ops max " + fmt("%.2e", worst_op));
  c.note("model max " + fmt("%.2e", model.max_rel_error) + " over " + std::to_string(model.entries) + " entries");
  c.note("cpu " + fmt("%.1f s", cpu));
  return c.finish();
}

// 2 -----------------------------------------------------------------------
Outcome loss_identities() {
  Check c;
  const std::size_t C = 5, H = 4, W = 4;
  std::vector<int> labels(H * W);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % C);
  Tensor onehot({C, H, W}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) onehot[labels[i] * H * W + i] = 1.0;

  Tape tape;
  const double ce = ce_loss(tape.constant(onehot), labels).value().item();
  const double dice = dice_loss(tape.constant(onehot), labels).value().item();
  const double uniform = ce_loss(tape.constant(Tensor({C, H, W}, 1.0 / C)), labels).value().item();
  Var sat = sigmoid(tape.constant(Tensor({4}, {60.0, -60.0, 60.0, 60.0})));
  const double sec = sec_loss(sat, std::vector<double>{1, 0, 1, 1}).value().item();
  c.expect(ce < 1e-9, "one-hot CE " + fmt("%.3e", ce));
  c.expect(std::abs(dice + 1.0) <= 1e-6, "one-hot Dice " + fmt("%.12f", dice));
  c.expect(std::abs(uniform - std::log(double(C))) <= 1e-9, "uniform CE " + fmt("%.12f", uniform));
  c.expect(sec < 1e-9, "saturated SEC " + fmt("%.3e", sec));

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  bool exact = true;
  for (int i = 0; i < 100; ++i) {
    LossBundle b;
    b.l_ce_skull = u(rng), b.l_dice_skull = u(rng), b.l_ce_brain = u(rng), b.l_dice_brain = u(rng), b.l_sec = u(rng);
    const double expect = b.l_ce_skull + b.l_dice_skull + b.l_ce_brain + b.l_dice_brain + 0.1 * b.l_sec;
    exact &= total_loss(b).l_total == expect && total_loss(b).lambda_sec == 0.1;
  }
  c.expect(exact, "L_total composition with lambda=0.1 not exact");
  c.note("CE " + fmt("%.1e", ce) + ", Dice " + fmt("%.9f", dice) + ", ln C err " +
         fmt("%.1e", std::abs(uniform - std::log(double(C)))) + ", SEC " + fmt("%.1e", sec));
  return c.finish();
}

// 3 -----------------------------------------------------------------------
Outcome poly_schedule() {
  Check c;
  for (double base : {0.01, 0.02}) {
    const std::size_t total = 1000;
    c.expect(std::abs(poly_lr(base, 0, total) - base) <= 1e-12, "iter 0");
    c.expect(std::abs(poly_lr(base, total, total)) <= 1e-12, "iter_total");
    c.expect(std::abs(poly_lr(base, total / 2, total) - base * std::pow(0.5, 0.9)) <= 1e-12, "midpoint");
  }
  c.note("0.02 at midpoint = " + fmt("%.10f", poly_lr(0.02, 500, 1000)));
  return c.finish();
}

// 4 -----------------------------------------------------------------------
Outcome slice_stack_contract() {
  Check c;
  const std::size_t D = 10, H = 4, W = 4;
  LabeledCase lc;
  lc.case_id = "ramp";
  lc.intensity = Volume({D, H, W}, DType::f32);
  lc.labels = Volume({D, H, W}, DType::u8);
  lc.brain_mask = Volume({D, H, W}, DType::u8, 1.0);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t i = 0; i < H * W; ++i) lc.intensity.data[d * H * W + i] = static_cast<double>(d);

  const SliceStack s5 = extract_slice_stack(lc, 4, 5, 3);
  c.expect(s5.input.dim(0) == 11, "s=5 gives " + std::to_string(s5.input.dim(0)) + " channels");
  for (std::size_t s : {0u, 1u, 2u, 5u})
    for (std::size_t idx = 0; idx < D; ++idx) {
      const SliceStack st = extract_slice_stack(lc, idx, s, 3);
      for (std::size_t ch = 0; ch < 2 * s + 1; ++ch) {
        const long want = static_cast<long>(idx) + static_cast<long>(ch) - static_cast<long>(s);
        const std::size_t src = want < 0 || want >= static_cast<long>(D) ? idx : static_cast<std::size_t>(want);
        c.expect(st.channel_sources[ch] == src, "source bookkeeping s=" + std::to_string(s));
        // Channel values identify the slice they came from (intensity d / 9 after min-max).
        c.expect(std::abs(st.input[ch * H * W] - src / 9.0) < 1e-15, "channel content s=" + std::to_string(s));
      }
    }
  const std::vector<std::size_t> edge = extract_slice_stack(lc, 0, 2, 3).channel_sources;
  c.expect(edge == std::vector<std::size_t>{0, 0, 0, 1, 2}, "slice 0, s=2 sources");
  c.note("s=2 at slice 0 -> (0,0,0,1,2)");
  return c.finish();
}

// 5 -----------------------------------------------------------------------
Outcome overfit() {
  Check c;
  const double t0 = cpu_seconds();
  std::vector<LabeledCase> cases;
  for (std::uint64_t i = 0; i < 4; ++i) {
    cases.push_back(synth_phantom(11 + i, {32, 32, 32}, 4, 0.02));
    cases.back().case_id = "case_" + std::to_string(i);
  }
  ACEnetConfig mc;
  mc.s = 1;
  mc.num_structures = 5;
  mc.filters = 16;
  mc.input_size = 32;
  mc.skull_module = true;
  TrainConfig tc;
  tc.stage = Stage::end_to_end;
  tc.base_lr = 0.02;
  tc.epochs = 60;
  tc.seed = 5;
  ModelParams model = build_model(mc, tc.seed);
  const Checkpoint ck = run_training(model, cases, tc);

  double fg = 0.0, skull = 0.0;
  const int brain[] = {1};
  for (const auto& lc : cases) {
    const Segmentation seg = segment_volume(model, lc.intensity);
    fg += mean_foreground_dice(seg.labels, lc.labels, mc.num_structures);
    skull += overlap_metrics(seg.brain_mask, lc.brain_mask, brain)[0].dice;
  }
  fg /= static_cast<double>(cases.size());
  skull /= static_cast<double>(cases.size());
  const double cpu = cpu_seconds() - t0;
  c.expect(fg >= 0.95, "foreground Dice " + fmt("%.4f", fg));
  c.expect(skull >= 0.98, "skull Dice " + fmt("%.4f", skull));
  c.expect(cpu < 600.0, "cpu " + fmt("%.0f s", cpu));
  c.note(std::to_string(tc.epochs) + " epochs");
  c.note("foreground Dice " + fmt("%.4f", fg));
  c.note("skull Dice " + fmt("%.4f", skull));
  c.note("final loss " + fmt("%.4f", ck.loss_history.back()));
  c.note("cpu " + fmt("%.0f s", cpu));
  return c.finish();
}

// 6 -----------------------------------------------------------------------
Outcome ablation_structure() {
  Check c;
  const ACEnetConfig base;  // F=64
  c.expect(base.filters == 64, "default F is not 64");
  const auto rows = ablation_variants(base);
  c.expect(rows.size() == 7, std::to_string(rows.size()) + " variants");
  std::string counts;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    counts += (i ? " < " : "") + std::to_string(rows[i].params);
    if (i) c.expect(rows[i - 1].params < rows[i].params, rows[i - 1].name + " !< " + rows[i].name);
    c.expect(rows[i].params == count_params(build_model(rows[i].config, 1)),
             rows[i].name + " closed form disagrees with the built model");
  }
  ACEnetConfig skull_cfg = base;
  skull_cfg.skull_module = true;
  const ModelParams m = build_model(skull_cfg, 3);
  bool aliased = m.skull.has_value();
  for (std::size_t i = 0; aliased && i < 3; ++i) aliased = m.skull->shared_decoders[i] == m.decoders[i];
  c.expect(aliased, "skull decoders 1-3 are not the backbone decoders");
  // Writing through the backbone handle is visible through the skull head.
  if (aliased) {
    Tensor& w = *m.decoders[0]->dense.conv1.weight;
    const double before = w[0];
    w[0] += 1.0;
    c.expect((*m.skull->shared_decoders[0]->dense.conv1.weight)[0] == before + 1.0, "aliasing write not visible");
    w[0] = before;
  }
  c.note(counts);
  return c.finish();
}

// 7 -----------------------------------------------------------------------
Outcome two_stage_contract() {
  Check c;
  std::vector<LabeledCase> cases{synth_phantom(21, {16, 16, 16}, 3, 0.02)};
  ACEnetConfig mc;
  mc.s = 1;
  mc.num_structures = 4;
  mc.filters = 4;
  mc.input_size = 16;
  mc.skull_module = true;
  TrainConfig s1, s2, e2e;
  s1.stage = Stage::stage1;
  s1.base_lr = 0.02;
  s2.stage = Stage::stage2;
  s2.base_lr = 0.01;
  e2e.stage = Stage::end_to_end;
  e2e.base_lr = 0.02;
  s1.epochs = s2.epochs = 100;
  e2e.epochs = 200;

  std::size_t staged_steps = 0, e2e_steps = 0, stage2_first_iter = 1;
  TrainCallbacks cb_staged, cb_e2e;
  cb_staged.on_iteration = [&](const IterationInfo& info) {
    if (staged_steps == 100 * batches_per_epoch(cases, s1.batch_size)) stage2_first_iter = info.iter;
    ++staged_steps;
  };
  cb_e2e.on_iteration = [&](const IterationInfo&) { ++e2e_steps; };
  const TwoStageResult r = two_stage_train(cases, mc, s1, s2, cb_staged);
  ModelParams m = build_model(mc, e2e.seed);
  run_training(m, cases, e2e, cb_e2e);
  c.expect(staged_steps == e2e_steps,
           "steps: two-stage " + std::to_string(staged_steps) + " vs end-to-end " + std::to_string(e2e_steps));
  c.expect(stage2_first_iter == 0, "stage-2 schedule did not restart at iter 0");

  const ModelParams m1 = restore_model(r.stage1);
  const ModelParams init2 = stage2_model_from(m1, s2.seed);
  std::size_t shared = 0;
  bool bitwise = true;
  for (const auto& a : m1.parameters())
    for (const auto& b : init2.parameters())
      if (a.name == b.name) {
        ++shared;
        bitwise &= a.tensor->storage() == b.tensor->storage();
      }
  for (const auto& a : m1.buffers())
    for (const auto& b : init2.buffers())
      if (a.name == b.name) bitwise &= a.tensor->storage() == b.tensor->storage();
  c.expect(shared == m1.parameters().size(), "not every stage-1 tensor reached stage 2");
  c.expect(bitwise, "stage-2 initial shared weights differ from stage-1 finals");
  c.expect(init2.skull.has_value(), "stage-2 model lacks the skull head");
  c.note(std::to_string(shared) + " shared tensors bitwise equal");
  c.note(std::to_string(staged_steps) + " optimizer steps each");
  return c.finish();
}

// 8 -----------------------------------------------------------------------
Outcome metric_oracles() {
  Check c;
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> side(1, 8);
  std::uniform_real_distribution<double> density(0.02, 0.8);
  std::size_t hausdorff_checked = 0;
  double worst_h = 0.0;
  std::vector<EvalCase> eval_cases;
  for (int trial = 0; trial < 500; ++trial) {
    const std::array<std::size_t, 3> dims{side(rng), side(rng), side(rng)};
    Volume a(dims, DType::u8), b(dims, DType::u8);
    std::bernoulli_distribution pa(density(rng)), pb(density(rng));
    std::set<std::size_t> sa, sb;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      if (pa(rng)) a.data[i] = 1, sa.insert(i);
      if (pb(rng)) b.data[i] = 1, sb.insert(i);
    }
    std::vector<std::size_t> inter, uni;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
    std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(uni));
    const double dice_oracle = uni.empty() ? 1.0 : 2.0 * inter.size() / static_cast<double>(sa.size() + sb.size());
    const double jac_oracle = uni.empty() ? 1.0 : inter.size() / static_cast<double>(uni.size());
    const int one[] = {1};
    const OverlapRow row = overlap_metrics(a, b, one)[0];
    c.expect(row.dice == dice_oracle, "dice trial " + std::to_string(trial));
    c.expect(row.jaccard == jac_oracle, "jaccard trial " + std::to_string(trial));

    if (!sa.empty() && !sb.empty()) {
      auto boundary = [&](const Volume& m, const std::set<std::size_t>& s) {
        std::vector<std::array<long, 3>> out;
        const long D = dims[0], H = dims[1], W = dims[2];
        for (std::size_t i : s) {
          const long d = i / (H * W), h = i / W % H, w = i % W;
          bool edge = d == 0 || h == 0 || w == 0 || d == D - 1 || h == H - 1 || w == W - 1;
          const long nb[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
          for (int k = 0; !edge && k < 6; ++k)
            edge = m.at(d + nb[k][0], h + nb[k][1], w + nb[k][2]) == 0;
          if (edge) out.push_back({d, h, w});
        }
        return out;
      };
      const auto ba = boundary(a, sa), bb = boundary(b, sb);
      double sup = 0.0;
      for (int dir = 0; dir < 2; ++dir) {
        const auto& from = dir ? bb : ba;
        const auto& to = dir ? ba : bb;
        for (const auto& p : from) {
          double best = 1e300;
          for (const auto& q : to) {
            const double dd = p[0] - q[0], dh = p[1] - q[1], dw = p[2] - q[2];
            best = std::min(best, dd * dd + dh * dh + dw * dw);
          }
          sup = std::max(sup, best);
        }
      }
      const double h = hausdorff(a, b);
      worst_h = std::max(worst_h, std::abs(h - std::sqrt(sup)));
      c.expect(std::abs(h - std::sqrt(sup)) <= 1e-9, "hausdorff trial " + std::to_string(trial));
      ++hausdorff_checked;
    }
    if (eval_cases.size() < 200) {
      EvalCase e;
      e.case_id = "t" + std::to_string(trial);
      e.pred_labels = a;
      e.truth_labels = b;
      eval_cases.push_back(std::move(e));
    }
  }
  std::size_t report_rows = 0;
  for (std::size_t start = 0; start < eval_cases.size(); ++start) {
    const StructureReport rep = evaluate_cases({eval_cases[start]}, 2);
    for (const auto& row : rep.rows) {
      ++report_rows;
      c.expect(std::abs(row.jaccard - row.dice / (2.0 - row.dice)) <= 1e-12, "identity on " + row.case_id);
    }
  }
  c.note("500 pairs, " + std::to_string(hausdorff_checked) + " Hausdorff checks, max err " + fmt("%.1e", worst_h));
  c.note("identity on " + std::to_string(report_rows) + " report rows");
  return c.finish();
}

// 9 -----------------------------------------------------------------------
Outcome statistics() {
  Check c;
  const std::vector<double> a{0.91, 0.88, 0.95, 0.79, 0.84, 0.90}, b{0.90, 0.86, 0.92, 0.75, 0.79, 0.84};
  const PairedTestResult r6 = wilcoxon_signed_rank(a, b);
  c.expect(r6.method == WilcoxonMethod::exact, "n=6 not exact");
  c.expect(std::abs(r6.p_two_sided - 0.03125) <= 1e-15, "n=6 p " + fmt("%.6f", r6.p_two_sided));
  c.expect(r6.statistic == 0.0, "n=6 W " + fmt("%.1f", r6.statistic));

  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(20), y(20);
    const double shift = 0.4 * g(rng);
    for (std::size_t i = 0; i < 20; ++i) x[i] = g(rng) + shift, y[i] = g(rng);
    const double pe = wilcoxon_signed_rank(x, y, WilcoxonMethod::exact).p_two_sided;
    const double pn = wilcoxon_signed_rank(x, y, WilcoxonMethod::normal_approximation).p_two_sided;
    worst = std::max(worst, std::abs(pe - pn));
  }
  c.expect(worst <= 0.02, "exact vs normal max gap " + fmt("%.4f", worst));
  c.note("n=6 p=" + fmt("%.5f", r6.p_two_sided));
  c.note("n=20 max |exact-normal| " + fmt("%.4f", worst) + " over 100 trials");
  return c.finish();
}

// 10 ----------------------------------------------------------------------
Outcome attention_export() {
  Check c;
  const fs::path root = scratch_root() / "attn";
  ACEnetConfig mc;
  mc.s = 1;
  mc.num_structures = 4;
  mc.filters = 8;
  mc.input_size = 32;
  const ModelParams model = build_model(mc, 10);
  LabeledCase lc = synth_phantom(10, {32, 32, 32}, 3, 0.02);
  lc.case_id = "case_000";
  save_case(lc, root / "data");
  const Checkpoint ck = make_checkpoint(model, TrainConfig{}, OptimizerState::zeros_like(model.parameters()));
  save_checkpoint(ck, root / "model.ckpt");
  const std::size_t slice = 16;
  c.expect(cli({"dump-attn", "--ckpt", (root / "model.ckpt").string(), "--volume",
                (root / "data" / "case_000.case.json").string(), "--slice", std::to_string(slice), "--out-dir",
                (root / "maps").string()}) == 0,
           "dump-attn failed");

  // Reference forward of the same stack with capture.
  const SliceStack st = extract_slice_stack(lc, slice, mc.s, mc.num_structures);
  Tape tape;
  ForwardOptions opts;
  opts.capture = true;
  const ForwardOutput fwd = forward(tape, model, tape.constant(st.input), opts);
  const auto maps = export_attention(model, st, root / "api_maps");

  std::size_t pgm = 0;
  if (fs::exists(root / "maps"))
    for (const auto& e : fs::directory_iterator(root / "maps")) pgm += e.path().extension() == ".pgm";
  c.expect(pgm == 3 * fwd.diagnostics.size(),
           std::to_string(pgm) + " maps for " + std::to_string(fwd.diagnostics.size()) + " blocks");

  std::size_t attention_maps = 0;
  for (const auto& m : maps) {
    const fs::path cli_file = root / "maps" / m.file.filename();
    c.expect(slurp(cli_file) == slurp(m.file), "CLI map differs from API map " + cli_file.filename().string());
    std::size_t h = 0, w = 0;
    const auto px = read_pgm(cli_file, h, w);
    const auto [rlo, rhi] = std::minmax_element(m.raw.values().begin(), m.raw.values().end());
    const auto [nlo, nhi] = std::minmax_element(m.normalized.values().begin(), m.normalized.values().end());
    c.expect(*nlo >= 0.0 && *nhi <= 1.0, "normalized map outside [0,1]");
    if (*rhi > *rlo) {
      c.expect(*nlo == 0.0 && *nhi == 1.0, "normalized map does not span [0,1]");
      c.expect(!px.empty() && *std::min_element(px.begin(), px.end()) == 0 &&
                   *std::max_element(px.begin(), px.end()) == 255,
               "8-bit map does not span 0..255");
    }
    c.expect(px == quantize(m.normalized), "PGM is not the quantized normalized map");
    if (m.kind == "attention") {
      ++attention_maps;
      const auto cap = std::find_if(fwd.diagnostics.begin(), fwd.diagnostics.end(),
                                    [&](const BlockCapture& b) { return b.name == m.block; });
      c.expect(cap != fwd.diagnostics.end() && cap->attention.shape() == m.raw.shape() &&
                   cap->attention.storage() == m.raw.storage(),
               "attention map of " + m.block + " differs from the captured s-SE output");
    }
  }
  c.note(std::to_string(fwd.diagnostics.size()) + " blocks, " + std::to_string(pgm) + " PGMs");
  c.note(std::to_string(attention_maps) + " attention maps bitwise equal to capture");
  return c.finish();
}

// 11 ----------------------------------------------------------------------
Outcome determinism() {
  Check c;
  const fs::path root = scratch_root() / "det";
  std::ofstream(root.parent_path() / "det.json") << R"({"s": 1, "num_structures": 4, "filters": 8, "input_size": 16,
    "epochs": 3, "base_lr": 0.02, "seed": 17, "stage": "e2e", "class_weights": true})";
  std::vector<std::string> outputs[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / ("run" + std::to_string(run));
    bool ok = cli({"synth", "--seed", "31", "--out", (dir / "data").string(), "--cases", "2", "--size", "16",
                   "--structures", "4"}) == 0;
    ok = ok && cli({"train", "--config", (root.parent_path() / "det.json").string(), "--data",
                    (dir / "data").string(), "--out", (dir / "train").string()}) == 0;
    ok = ok && cli({"infer", "--ckpt", (dir / "train" / "checkpoint.ckpt").string(), "--volume",
                    (dir / "data").string(), "--out", (dir / "pred").string()}) == 0;
    ok = ok && cli({"eval", "--pred", (dir / "pred").string(), "--truth", (dir / "data").string(), "--report",
                    (dir / "report.csv").string()}) == 0;
    c.expect(ok, "pipeline run " + std::to_string(run) + " failed");
    outputs[run] = {slurp(dir / "train" / "checkpoint.ckpt"), slurp(dir / "train" / "loss_history.csv"),
                    slurp(dir / "report.csv"), slurp(dir / "report.json"),
                    slurp(dir / "pred" / "case_000_labels.raw")};
  }
  const char* names[] = {"checkpoint", "loss history", "report csv", "report json", "predicted labels"};
  for (std::size_t i = 0; i < outputs[0].size(); ++i) {
    c.expect(!outputs[0][i].empty(), std::string(names[i]) + " missing");
    c.expect(outputs[0][i] == outputs[1][i], std::string(names[i]) + " differs between runs");
  }

  // The library path as well: two in-process trainings give identical checkpoint bytes.
  const auto cases = load_cases(root / "run0" / "data");
  ACEnetConfig mc;
  mc.s = 2;
  mc.num_structures = 4;
  mc.filters = 4;
  mc.input_size = 16;
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 3;
  std::vector<char> bytes[2];
  for (auto& b : bytes) {
    ModelParams m = build_model(mc, 4);
    b = encode_checkpoint(run_training(m, cases, tc));
  }
  c.expect(bytes[0] == bytes[1], "in-process checkpoints differ");
  c.note("checkpoint " + std::to_string(outputs[0][0].size()) + " bytes identical; reports identical");
  return c.finish();
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient fidelity", gradient_fidelity},
      {2, "loss identities", loss_identities},
      {3, "poly schedule", poly_schedule},
      {4, "slice-stack contract", slice_stack_contract},
      {5, "overfit capability", overfit},
      {6, "ablation parameter ordering and weight sharing", ablation_structure},
      {7, "two-stage contract", two_stage_contract},
      {8, "metric oracles", metric_oracles},
      {9, "Wilcoxon statistics", statistics},
      {10, "attention map export", attention_export},
      {11, "determinism", determinism},
  };
  int failures = 0;
  for (const auto& cr : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", cr.id, cr.name, o.detail.c_str(), wall);
    std::fflush(stdout);
  }
  fs::remove_all(scratch_root());
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
