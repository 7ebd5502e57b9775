#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "acenet/volume.hpp"
#include "acenet/wilcoxon.hpp"

namespace acenet {

struct EvalCase {
  std::string case_id;
  Volume pred_labels;
  Volume truth_labels;
  std::optional<Volume> pred_mask;
  std::optional<Volume> truth_mask;
};

struct ReportRow {
  std::string case_id;
  int label = 0;
  std::string name;
  double dice = 0.0;
  double jaccard = 0.0;
  std::optional<double> hausdorff;  // missing when either mask is empty
  std::vector<std::string> flags;
};

struct Aggregate {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t n = 0;
};
Aggregate aggregate(const std::vector<double>& values);

struct StructureReport {
  std::vector<ReportRow> rows;  // case-major, labels ascending
  Aggregate dice, jaccard, hausdorff;
  std::optional<double> skull_dice;
  std::optional<double> skull_jaccard;

  std::vector<std::string> case_ids() const;
  /// Dice of `label` per case, in case order.
  std::vector<double> dice_list(int label) const;
  std::vector<int> labels() const;
};

/// Rows for labels 1..num_classes-1 of every case plus aggregates and, when
/// both masks are present, the mean skull-strip Dice.
StructureReport evaluate_cases(const std::vector<EvalCase>& cases, std::size_t num_classes);

struct StructureComparison {
  int label = 0;
  std::optional<PairedTestResult> test;  // absent with fewer than two cases
};

struct Comparison {
  std::vector<StructureComparison> per_structure;
  /// Pooled over every (case, structure) Dice pair.
  std::optional<PairedTestResult> overall;
};

/// Paired Wilcoxon tests of the Dice of `a` against `b` (same cases and labels).
Comparison compare_reports(const StructureReport& a, const StructureReport& b);

/// Writes `csv_path` (label,name,dice,jaccard,hausdorff,flags) and a JSON
/// companion next to it (same stem, .json) holding per-structure Dice lists
/// and, when given, the comparison tests.
void emit_report(const StructureReport& report, const Comparison* comparison, const std::filesystem::path& csv_path);

std::filesystem::path report_json_path(const std::filesystem::path& csv_path);

struct CsvRow {
  std::string label;
  std::string name;
  double dice = 0.0;
  double jaccard = 0.0;
  std::optional<double> hausdorff;
  std::string flags;
  bool is_aggregate() const;
};
std::vector<CsvRow> read_report_csv(const std::filesystem::path& csv_path);

}  // namespace acenet
