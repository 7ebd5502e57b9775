#include "acenet/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "acenet/error.hpp"
#include "acenet/metrics.hpp"

namespace acenet {

using json = nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? std::string(1, sep) : "") + parts[i];
  return out;
}

json test_json(const std::optional<PairedTestResult>& t) {
  if (!t) return nullptr;
  return {{"statistic", t->statistic},
          {"n_effective", t->n_effective},
          {"p_two_sided", t->p_two_sided},
          {"method", method_name(t->method)}};
}

}  // namespace

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.n = values.size();
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(a.n);
  if (a.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.sd = std::sqrt(ss / static_cast<double>(a.n - 1));
  }
  return a;
}

std::vector<std::string> StructureReport::case_ids() const {
  std::vector<std::string> ids;
  for (const auto& r : rows)
    if (ids.empty() || ids.back() != r.case_id) ids.push_back(r.case_id);
  return ids;
}

std::vector<double> StructureReport::dice_list(int label) const {
  std::vector<double> out;
  for (const auto& r : rows)
    if (r.label == label) out.push_back(r.dice);
  return out;
}

std::vector<int> StructureReport::labels() const {
  std::set<int> s;
  for (const auto& r : rows) s.insert(r.label);
  return {s.begin(), s.end()};
}

StructureReport evaluate_cases(const std::vector<EvalCase>& cases, std::size_t num_classes) {
  require(num_classes >= 2, "evaluate_cases: need at least one foreground label");
  StructureReport rep;
  std::vector<int> labels;
  for (std::size_t l = 1; l < num_classes; ++l) labels.push_back(static_cast<int>(l));
  std::vector<double> dices, jaccards, hds, skull_d, skull_j;
  for (const auto& c : cases) {
    for (const auto& o : overlap_metrics(c.pred_labels, c.truth_labels, labels)) {
      ReportRow row;
      row.case_id = c.case_id;
      row.label = o.label;
      row.name = "structure_" + std::to_string(o.label);
      row.dice = o.dice;
      row.jaccard = o.jaccard;
      if (o.both_empty()) row.flags.push_back("both_empty");
      if (o.pred_count == 0 && o.truth_count > 0) row.flags.push_back("pred_empty");
      if (o.truth_count == 0 && o.pred_count > 0) row.flags.push_back("truth_empty");
      try {
        row.hausdorff = hausdorff(label_mask(c.pred_labels, o.label), label_mask(c.truth_labels, o.label));
        hds.push_back(*row.hausdorff);
      } catch (const MetricError&) {
        row.flags.push_back("hausdorff_missing");
      }
      dices.push_back(row.dice);
      jaccards.push_back(row.jaccard);
      rep.rows.push_back(std::move(row));
    }
    if (c.pred_mask && c.truth_mask) {
      const int one[] = {1};
      const auto o = overlap_metrics(*c.pred_mask, *c.truth_mask, one).front();
      skull_d.push_back(o.dice);
      skull_j.push_back(o.jaccard);
    }
  }
  rep.dice = aggregate(dices);
  rep.jaccard = aggregate(jaccards);
  rep.hausdorff = aggregate(hds);
  if (!skull_d.empty()) {
    rep.skull_dice = aggregate(skull_d).mean;
    rep.skull_jaccard = aggregate(skull_j).mean;
  }
  return rep;
}

Comparison compare_reports(const StructureReport& a, const StructureReport& b) {
  require(a.case_ids() == b.case_ids(), "compare_reports: the two reports cover different cases");
  require(a.labels() == b.labels(), "compare_reports: the two reports cover different labels");
  Comparison cmp;
  std::vector<double> all_a, all_b;
  for (int label : a.labels()) {
    const auto da = a.dice_list(label), db = b.dice_list(label);
    StructureComparison sc;
    sc.label = label;
    if (da.size() >= 2) sc.test = wilcoxon_signed_rank(da, db);
    cmp.per_structure.push_back(sc);
    all_a.insert(all_a.end(), da.begin(), da.end());
    all_b.insert(all_b.end(), db.begin(), db.end());
  }
  if (all_a.size() >= 2) cmp.overall = wilcoxon_signed_rank(all_a, all_b);
  return cmp;
}

std::filesystem::path report_json_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".json");
  return p;
}

void emit_report(const StructureReport& report, const Comparison* comparison, const std::filesystem::path& csv_path) {
  const bool multi = report.case_ids().size() > 1;
  std::ostringstream csv;
  csv << "label,name,dice,jaccard,hausdorff,flags\n";
  for (const auto& r : report.rows) {
    csv << r.label << "," << (multi ? r.case_id + ":" : "") << r.name << "," << fmt(r.dice) << "," << fmt(r.jaccard)
        << "," << (r.hausdorff ? fmt(*r.hausdorff) : "") << "," << join(r.flags, '|') << "\n";
  }
  csv << "mean,all," << fmt(report.dice.mean) << "," << fmt(report.jaccard.mean) << ","
      << (report.hausdorff.n ? fmt(report.hausdorff.mean) : "") << ",aggregate\n";
  csv << "sd,all," << fmt(report.dice.sd) << "," << fmt(report.jaccard.sd) << ","
      << (report.hausdorff.n ? fmt(report.hausdorff.sd) : "") << ",aggregate\n";
  if (report.skull_dice)
    csv << "skull,brain_mask," << fmt(*report.skull_dice) << "," << fmt(*report.skull_jaccard) << ",,aggregate\n";

  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + csv_path.string());
  out << csv.str();
  if (!out) throw IoError("write failed for " + csv_path.string());

  json j;
  j["hausdorff_definition"] =
      "maximum over 3D boundary voxels (a voxel with a 6-neighbour outside its mask or on the volume edge), "
      "Euclidean, voxel units";
  j["cases"] = report.case_ids();
  json lists = json::object();
  for (int label : report.labels()) lists[std::to_string(label)] = report.dice_list(label);
  j["per_structure_dice"] = lists;
  j["aggregate"] = {{"dice", {{"mean", report.dice.mean}, {"sd", report.dice.sd}}},
                    {"jaccard", {{"mean", report.jaccard.mean}, {"sd", report.jaccard.sd}}},
                    {"hausdorff", {{"mean", report.hausdorff.mean}, {"sd", report.hausdorff.sd}, {"n", report.hausdorff.n}}}};
  j["skull_dice"] = report.skull_dice ? json(*report.skull_dice) : json(nullptr);
  if (comparison) {
    json per = json::array();
    for (const auto& sc : comparison->per_structure) per.push_back({{"label", sc.label}, {"test", test_json(sc.test)}});
    j["comparison"] = {{"test", "wilcoxon_signed_rank_two_sided"},
                       {"per_structure", per},
                       {"overall", test_json(comparison->overall)}};
  }
  const auto jpath = report_json_path(csv_path);
  std::ofstream jo(jpath, std::ios::trunc);
  if (!jo) throw IoError("cannot write " + jpath.string());
  jo << j.dump(2) << "\n";
}

bool CsvRow::is_aggregate() const { return label == "mean" || label == "sd" || label == "skull"; }

std::vector<CsvRow> read_report_csv(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open " + csv_path.string());
  std::string line;
  std::getline(in, line);
  if (line != "label,name,dice,jaccard,hausdorff,flags") throw FormatError(csv_path.string() + ": unexpected header");
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.push_back("");
    if (f.size() != 6) throw FormatError(csv_path.string() + ": row has " + std::to_string(f.size()) + " fields");
    CsvRow r;
    r.label = f[0];
    r.name = f[1];
    try {
      r.dice = std::stod(f[2]);
      r.jaccard = std::stod(f[3]);
      if (!f[4].empty()) r.hausdorff = std::stod(f[4]);
    } catch (const std::exception&) {
      throw FormatError(csv_path.string() + ": bad number in row \"" + line + "\"");
    }
    r.flags = f[5];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace acenet
