#include "acenet/commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "acenet/attention.hpp"
#include "acenet/checkpoint.hpp"
#include "acenet/error.hpp"
#include "acenet/gradcheck_suite.hpp"
#include "acenet/metrics.hpp"
#include "acenet/phantom.hpp"
#include "acenet/report.hpp"
#include "acenet/run_config.hpp"
#include "acenet/slice_stack.hpp"
#include "acenet/trainer.hpp"

namespace fs = std::filesystem;

namespace acenet {

std::vector<VariantRow> ablation_variants(const ACEnetConfig& base) {
  std::vector<VariantRow> rows;
  auto add = [&](const std::string& name, std::size_t s, bool context, bool skull, bool parallel) {
    ACEnetConfig c = base;
    c.s = s;
    c.context_module = context;
    c.skull_module = skull;
    c.parallel_encoders = parallel;
    c.validate();
    rows.push_back({name, c, count_params(c)});
  };
  add("baseline", 0, false, false, false);
  add("s=0", 0, true, false, false);
  add("s=0+skull", 0, true, true, false);
  add("s=5", 5, true, false, false);
  add("s=5+skull", 5, true, true, false);
  add("parallel", 5, true, false, true);
  add("parallel+skull", 5, true, true, true);
  return rows;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool is_case_manifest(const fs::path& p) {
  const std::string name = p.filename().string();
  return name.size() > 10 && name.ends_with(".case.json");
}

std::string volume_stem(const fs::path& p) {
  std::string name = p.filename().string();
  for (const char* ext : {".case.json", ".json", ".nii"})
    if (name.ends_with(ext)) return name.substr(0, name.size() - std::string(ext).size());
  return p.stem().string();
}

// Intensity volumes named by an --volume argument: a volume file, a case
// manifest, or a directory of case manifests.
std::vector<std::pair<std::string, Volume>> input_volumes(const fs::path& p) {
  std::vector<std::pair<std::string, Volume>> out;
  if (fs::is_directory(p)) {
    for (auto& c : load_cases(p)) out.emplace_back(c.case_id, std::move(c.intensity));
    if (out.empty()) throw IoError("no *.case.json files in " + p.string());
  } else if (is_case_manifest(p)) {
    LabeledCase c = load_case(p);
    out.emplace_back(c.case_id, std::move(c.intensity));
  } else {
    out.emplace_back(volume_stem(p), load_volume(p));
  }
  return out;
}

struct TruthEntry {
  std::string case_id;
  Volume labels;
  std::optional<Volume> mask;
};

std::vector<TruthEntry> truth_entries(const fs::path& p) {
  std::vector<TruthEntry> out;
  if (fs::is_directory(p)) {
    for (auto& c : load_cases(p)) out.push_back({c.case_id, std::move(c.labels), std::move(c.brain_mask)});
    if (out.empty()) throw IoError("no *.case.json files in " + p.string());
  } else if (is_case_manifest(p)) {
    LabeledCase c = load_case(p);
    out.push_back({c.case_id, std::move(c.labels), std::move(c.brain_mask)});
  } else {
    out.push_back({volume_stem(p), load_volume(p), std::nullopt});
  }
  return out;
}

// Predictions for the given truth cases: a directory holding <id>_labels.json
// (and optionally <id>_mask.json) or, for a single case, one label volume.
std::vector<EvalCase> pair_predictions(const fs::path& pred, std::vector<TruthEntry> truth) {
  std::vector<EvalCase> cases;
  if (!fs::is_directory(pred)) {
    if (truth.size() != 1) throw ConfigError("--pred must be a directory when --truth holds several cases");
    cases.push_back({truth[0].case_id, load_volume(pred), std::move(truth[0].labels), std::nullopt, std::nullopt});
    return cases;
  }
  for (auto& t : truth) {
    const fs::path labels = pred / (t.case_id + "_labels.json");
    if (!fs::exists(labels)) throw IoError("missing prediction " + labels.string());
    EvalCase c{t.case_id, load_raw_volume(labels), std::move(t.labels), std::nullopt, std::nullopt};
    const fs::path mask = pred / (t.case_id + "_mask.json");
    if (fs::exists(mask) && t.mask) {
      c.pred_mask = load_raw_volume(mask);
      c.truth_mask = std::move(t.mask);
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

std::size_t infer_num_classes(const std::vector<EvalCase>& cases) {
  double top = 0.0;
  for (const auto& c : cases) {
    for (double v : c.truth_labels.data) top = std::max(top, v);
    for (double v : c.pred_labels.data) top = std::max(top, v);
  }
  return std::max<std::size_t>(2, static_cast<std::size_t>(top) + 1);
}

void write_loss_history(const Checkpoint& ckpt, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,mean_loss" << (ckpt.validation_history.empty() ? "" : ",validation_dice") << "\n";
  for (std::size_t e = 0; e < ckpt.loss_history.size(); ++e) {
    out << (e + 1) << "," << fmt(ckpt.loss_history[e]);
    if (!ckpt.validation_history.empty()) out << "," << fmt(ckpt.validation_history[e]);
    out << "\n";
  }
}

int cmd_synth(std::uint64_t seed, const fs::path& out_dir, std::size_t n_cases, std::size_t size,
              std::size_t structures, double noise, std::ostream& out) {
  if (structures < 2) throw ConfigError("--structures counts classes including background and must be >= 2");
  if (n_cases < 1) throw ConfigError("--cases must be >= 1");
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < n_cases; ++i) {
    LabeledCase c = synth_phantom(seed + i, {size, size, size}, structures - 1, noise);
    char id[32];
    std::snprintf(id, sizeof(id), "case_%03zu", i);
    c.case_id = id;
    save_case(c, out_dir);
  }
  out << "wrote " << n_cases << " cases to " << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_train(RunConfig rc, const std::string& stage, std::ostream& out) {
  if (!stage.empty()) rc.train.stage = parse_stage(stage);
  if (rc.data.empty()) throw ConfigError("no training data: pass --data or set \"data\"");
  if (rc.out.empty()) throw ConfigError("no output directory: pass --out or set \"out\"");
  if (rc.train.stage == Stage::stage1) rc.model.skull_module = false;

  const std::vector<LabeledCase> cases = load_cases(rc.data);
  if (cases.empty()) throw ConfigError("no *.case.json files in " + rc.data);
  std::vector<LabeledCase> validation;
  if (!rc.validation.empty()) validation = load_cases(rc.validation);

  ModelParams model;
  if (rc.train.stage == Stage::stage2) {
    if (rc.init.empty()) throw ConfigError("stage 2 requires --init <stage-1 checkpoint>");
    const Checkpoint init = load_checkpoint(rc.init);
    ACEnetConfig expected = rc.model;
    expected.skull_module = false;
    if (!(init.model_config == expected))
      throw LoadError("checkpoint " + rc.init + " was trained with a different architecture than the config");
    model = stage2_model_from(restore_model(init), rc.train.seed);
    rc.model = model.config;
  } else {
    model = build_model(rc.model, rc.train.seed);
  }

  fs::create_directories(rc.out);
  rc.save(fs::path(rc.out) / "config.json");
  TrainCallbacks cb;
  cb.on_epoch = [&](std::size_t epoch, double loss) {
    out << "epoch " << (epoch + 1) << "/" << rc.train.epochs << " loss " << fmt(loss) << "\n";
  };
  const Checkpoint ckpt = run_training(model, cases, rc.train, cb, validation.empty() ? nullptr : &validation);
  save_checkpoint(ckpt, fs::path(rc.out) / "checkpoint.ckpt");
  write_loss_history(ckpt, fs::path(rc.out) / "loss_history.csv");
  out << "checkpoint written to " << (fs::path(rc.out) / "checkpoint.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_infer(const fs::path& ckpt_path, const fs::path& volume, const fs::path& out_dir, std::ostream& out) {
  const ModelParams model = restore_model(load_checkpoint(ckpt_path));
  fs::create_directories(out_dir);
  for (auto& [id, v] : input_volumes(volume)) {
    const Segmentation seg = segment_volume(model, v);
    save_raw_volume(seg.labels, out_dir / (id + "_labels.json"));
    save_raw_volume(seg.brain_mask, out_dir / (id + "_mask.json"));
    out << id << ": wrote " << (out_dir / (id + "_labels.json")).string() << "\n";
  }
  return kExitOk;
}

int cmd_eval(const fs::path& pred, const fs::path& truth, const fs::path& report_path, const std::string& compare,
             std::size_t structures, std::ostream& out) {
  const std::vector<EvalCase> cases = pair_predictions(pred, truth_entries(truth));
  std::size_t num_classes = structures ? structures : infer_num_classes(cases);
  std::optional<std::vector<EvalCase>> other;
  if (!compare.empty()) {
    other = pair_predictions(compare, truth_entries(truth));
    if (!structures) num_classes = std::max(num_classes, infer_num_classes(*other));
  }
  const StructureReport report = evaluate_cases(cases, num_classes);
  std::optional<Comparison> cmp;
  if (other) cmp = compare_reports(report, evaluate_cases(*other, num_classes));
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  emit_report(report, cmp ? &*cmp : nullptr, report_path);
  out << "mean dice " << fmt(report.dice.mean) << " over " << report.rows.size() << " rows";
  if (report.skull_dice) out << ", skull dice " << fmt(*report.skull_dice);
  out << "\n";
  return kExitOk;
}

int cmd_params(const std::string& config_path, std::ostream& out) {
  ACEnetConfig base;
  if (!config_path.empty()) base = RunConfig::load(config_path).model;
  out << "variant,s,context,skull,parallel,params\n";
  for (const auto& row : ablation_variants(base))
    out << row.name << "," << row.config.s << "," << row.config.context_module << "," << row.config.skull_module
        << "," << row.config.parallel_encoders << "," << row.params << "\n";
  return kExitOk;
}

int cmd_gradcheck(bool full, std::ostream& out) {
  bool ok = true;
  auto print = [&](const GradCheckCase& c) {
    ok = ok && c.passed();
    char line[256];
    std::snprintf(line, sizeof(line), "%-4s %-55s max_rel_err=%.3e tol=%.0e entries=%zu", c.passed() ? "ok" : "FAIL",
                  c.name.c_str(), c.max_rel_error, c.tolerance, c.entries);
    out << line;
    if (!c.worst.empty()) out << " worst=" << c.worst;
    if (c.skipped) out << " skipped_at_kinks=" << c.skipped;
    for (const auto& name : c.unchecked) out << " unchecked=" << name;
    out << "\n";
  };
  for (const auto& c : op_gradient_checks()) print(c);
  print(small_model_gradient_check(full ? 12 : 3));
  print(model_gradient_check(full ? 12 : 3));
  if (!ok) throw NumericError("gradient check failed");
  return kExitOk;
}

int cmd_dump_attn(const fs::path& ckpt_path, const fs::path& volume, std::size_t slice, const fs::path& out_dir,
                  std::ostream& out) {
  const ModelParams model = restore_model(load_checkpoint(ckpt_path));
  auto volumes = input_volumes(volume);
  if (volumes.size() != 1) throw ConfigError("--volume must name a single volume or case");
  LabeledCase c;
  c.case_id = volumes[0].first;
  c.intensity = std::move(volumes[0].second);
  c.labels = Volume(c.intensity.dims, DType::u8, 0.0);
  c.brain_mask = Volume(c.intensity.dims, DType::u8, 1.0);
  if (slice >= c.intensity.depth())
    throw ConfigError("--slice " + std::to_string(slice) + " outside [0," + std::to_string(c.intensity.depth()) + ")");
  c.intensity = normalize_intensity(c.intensity);
  const SliceStack stack = extract_slice_stack(c, slice, model.config.s, model.config.num_structures);
  const auto maps = export_attention(model, stack, out_dir);
  out << "wrote " << maps.size() << " maps to " << out_dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ACEnet segmentation toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string out_path, config_path, data_path, stage, init_path, ckpt_path, volume_path, pred_path, truth_path,
      report_path, compare_path, out_dir;
  std::size_t n_cases = 4, size = 32, structures = 5, slice = 0, eval_structures = 0;
  double noise = 0.02;
  bool full = false;
  std::vector<std::string> overrides;

  auto* synth = app.add_subcommand("synth", "Generate synthetic labelled phantoms");
  synth->add_option("--seed", seed, "Base seed")->required();
  synth->add_option("--out", out_path, "Output directory")->required();
  synth->add_option("--cases", n_cases, "Number of cases");
  synth->add_option("--size", size, "Edge length D=H=W");
  synth->add_option("--structures", structures, "Classes including background");
  synth->add_option("--noise", noise, "Gaussian noise sigma");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Run config (JSON)");
  train->add_option("--data", data_path, "Directory of *.case.json");
  train->add_option("--out", out_path, "Output directory");
  train->add_option("--stage", stage, "1, 2 or e2e");
  train->add_option("--init", init_path, "Stage-1 checkpoint (stage 2)");
  train->add_option("--set", overrides, "Override a config key: key=value");

  auto* infer = app.add_subcommand("infer", "Segment volumes with a trained checkpoint");
  infer->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  infer->add_option("--volume", volume_path, "Volume, case manifest or case directory")->required();
  infer->add_option("--out", out_path, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
  eval->add_option("--pred", pred_path, "Prediction directory or label volume")->required();
  eval->add_option("--truth", truth_path, "Case directory, case manifest or label volume")->required();
  eval->add_option("--report", report_path, "Report CSV path")->required();
  eval->add_option("--compare", compare_path, "Second prediction set for paired Wilcoxon tests");
  eval->add_option("--structures", eval_structures, "Classes including background (default: from labels)");

  auto* params = app.add_subcommand("params", "Parameter counts of the seven ablation variants");
  params->add_option("--config", config_path, "Run config supplying F, C and r");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_flag("--full", full, "Probe more entries per parameter tensor");

  auto* dump = app.add_subcommand("dump-attn", "Export feature and spatial attention maps as PGM");
  dump->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  dump->add_option("--volume", volume_path, "Volume or case manifest")->required();
  dump->add_option("--slice", slice, "Coronal slice index")->required();
  dump->add_option("--out-dir", out_dir, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(seed, out_path, n_cases, size, structures, noise, out);
    if (*train) {
      RunConfig rc = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got \"" + kv + "\"");
        apply_override(rc, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (!data_path.empty()) rc.data = data_path;
      if (!out_path.empty()) rc.out = out_path;
      if (!init_path.empty()) rc.init = init_path;
      return cmd_train(rc, stage, out);
    }
    if (*infer) return cmd_infer(ckpt_path, volume_path, out_path, out);
    if (*eval) return cmd_eval(pred_path, truth_path, report_path, compare_path, eval_structures, out);
    if (*params) return cmd_params(config_path, out);
    if (*gradcheck) return cmd_gradcheck(full, out);
    if (*dump) return cmd_dump_attn(ckpt_path, volume_path, slice, out_dir, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const MetricError& e) {
    err << "metric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const GenerationError& e) {
    err << "generation error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const ContractViolation& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitFormat;
  }
  return kExitUsage;
}

}  // namespace acenet
