#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowguard/errors.hpp"
#include "flowguard/evalkit/experiments.hpp"

namespace flowguard::evalkit {

// One line of an experiment report. `seed` is a decimal seed or "median";
// `level` is set only for sparsity sweeps. Pattern reports carry the label
// in the experiment id ("patterns.FRAUD").
struct ReportRow {
  std::string experiment;
  std::string model;
  std::string seed;
  std::optional<double> level;
  double acc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

inline constexpr const char* kReportColumns = "experiment,model,seed,level,acc,precision,recall,f1,auc";

inline ReportRow make_row(std::string experiment, std::string model, std::string seed, std::optional<double> level,
                          const MetricReport& m, double auc) {
  return {std::move(experiment), std::move(model), std::move(seed), level, m.acc, m.precision, m.recall, m.f1, auc};
}

// Column-wise median over rows that share experiment, model and level.
inline ReportRow median_row(const std::vector<ReportRow>& group) {
  if (group.empty()) throw ContractError("report: median of no rows");
  auto column = [&](double ReportRow::*field) {
    std::vector<double> v;
    for (const auto& r : group) v.push_back(r.*field);
    return median(std::move(v));
  };
  ReportRow out = group.front();
  out.seed = "median";
  out.acc = column(&ReportRow::acc);
  out.precision = column(&ReportRow::precision);
  out.recall = column(&ReportRow::recall);
  out.f1 = column(&ReportRow::f1);
  out.auc = column(&ReportRow::auc);
  return out;
}

inline std::vector<ReportRow> cross_time_rows(const std::vector<Evaluation>& runs) {
  std::vector<ReportRow> out;
  std::map<ModelKind, std::vector<ReportRow>> by_model;
  for (const auto& e : runs) {
    out.push_back(make_row("cross-time", to_string(e.kind), std::to_string(e.seed), std::nullopt, e.report, e.auc));
    by_model[e.kind].push_back(out.back());
  }
  for (const auto& [kind, group] : by_model) out.push_back(median_row(group));
  return out;
}

inline std::vector<ReportRow> pattern_rows(const std::vector<PatternBreakdown>& runs) {
  std::vector<ReportRow> out;
  std::map<payflow::PatternLabel, std::vector<ReportRow>> by_label;
  for (const auto& b : runs)
    for (const auto& [label, m] : b.per_label) {
      out.push_back(make_row("patterns." + std::string(payflow::to_string(label)), "joint", std::to_string(b.seed),
                             std::nullopt, m.report, m.auc));
      by_label[label].push_back(out.back());
    }
  for (const auto& [label, group] : by_label) out.push_back(median_row(group));
  return out;
}

inline std::vector<ReportRow> sparsity_rows(const SparsitySweepResult& sweep) {
  std::vector<ReportRow> out;
  for (std::size_t l = 0; l < sweep.levels.size(); ++l) {
    std::vector<ReportRow> group;
    for (const auto& p : sweep.at_level(l))
      group.push_back(make_row("sparsity", "joint", std::to_string(p.seed), p.level, p.report, p.auc));
    out.insert(out.end(), group.begin(), group.end());
    out.push_back(median_row(group));
  }
  return out;
}

namespace detail {
inline std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}
}  // namespace detail

inline void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  std::string buf = std::string(kReportColumns) + "\n";
  for (const auto& r : rows) {
    buf += r.experiment + "," + r.model + "," + r.seed + ",";
    if (r.level) buf += detail::shortest(*r.level);
    for (double v : {r.acc, r.precision, r.recall, r.f1, r.auc}) buf += "," + detail::shortest(v);
    buf += "\n";
  }
  out << buf;
}

inline nlohmann::json report_json(const std::vector<ReportRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j;
    j["experiment"] = r.experiment;
    j["model"] = r.model;
    j["seed"] = r.seed;
    j["level"] = r.level ? nlohmann::json(*r.level) : nlohmann::json(nullptr);
    j["acc"] = r.acc;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["auc"] = r.auc;
    arr.push_back(std::move(j));
  }
  return arr;
}

inline std::vector<ReportRow> rows_from_json(const nlohmann::json& arr) {
  std::vector<ReportRow> out;
  for (const auto& j : arr) {
    ReportRow r;
    r.experiment = j.at("experiment").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.seed = j.at("seed").get<std::string>();
    if (!j.at("level").is_null()) r.level = j.at("level").get<double>();
    r.acc = j.at("acc").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.auc = j.at("auc").get<double>();
    out.push_back(std::move(r));
  }
  return out;
}

// Fixed-width table, four decimals.
inline std::string render_table(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %-6s %-7s %-6s %7s %9s %7s %7s %7s\n", "experiment", "model", "seed", "level",
                "acc", "precision", "recall", "f1", "auc");
  out << line;
  for (const auto& r : rows) {
    const std::string level = r.level ? detail::shortest(*r.level) : "-";
    std::snprintf(line, sizeof line, "%-22s %-6s %-7s %-6s %7.4f %9.4f %7.4f %7.4f %7.4f\n", r.experiment.c_str(),
                  r.model.c_str(), r.seed.c_str(), level.c_str(), r.acc, r.precision, r.recall, r.f1, r.auc);
    out << line;
  }
  return out.str();
}

// Static bar chart of the median F1 rows, one bar per experiment/model/level.
inline std::string render_svg_chart(const std::vector<ReportRow>& rows, const std::string& title) {
  std::vector<const ReportRow*> bars;
  for (const auto& r : rows)
    if (r.seed == "median") bars.push_back(&r);
  const int bar = 48, gap = 16, left = 50, top = 40, height = 240;
  const int width = left + static_cast<int>(bars.size()) * (bar + gap) + gap;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 60
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << title << ": median F1</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + height << "\" x2=\"" << width << "\" y2=\"" << top + height
    << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const int y = top + height - tick * height / 4;
    s << "<text x=\"" << left - 30 << "\" y=\"" << y + 4 << "\">" << detail::shortest(tick / 4.0) << "</text>\n";
  }
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const ReportRow& r = *bars[i];
    const int x = left + gap + static_cast<int>(i) * (bar + gap);
    const int h = static_cast<int>(std::lround(std::clamp(r.f1, 0.0, 1.0) * height));
    std::string label = r.level ? detail::shortest(*r.level) : r.experiment.rfind("patterns.", 0) == 0
                                                                     ? r.experiment.substr(9)
                                                                     : r.model;
    s << "<rect x=\"" << x << "\" y=\"" << top + height - h << "\" width=\"" << bar << "\" height=\"" << h
      << "\" fill=\"#4a78a8\"/>\n";
    char value[16];
    std::snprintf(value, sizeof value, "%.3f", r.f1);
    s << "<text x=\"" << x << "\" y=\"" << top + height - h - 4 << "\">" << value << "</text>\n";
    s << "<text x=\"" << x << "\" y=\"" << top + height + 16 << "\">" << label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// Writes <dir>/<stem>.csv, .json and .txt.
inline void save_report(const std::vector<ReportRow>& rows, const std::filesystem::path& dir, const std::string& stem) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto open = [&](const char* ext) {
    const auto path = dir / (stem + ext);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw WriteError("report: cannot write " + path.string());
    return f;
  };
  {
    auto f = open(".csv");
    write_report_csv(f, rows);
  }
  {
    auto f = open(".json");
    f << report_json(rows).dump(2) << "\n";
  }
  {
    auto f = open(".txt");
    f << render_table(rows);
  }
}

}  // namespace flowguard::evalkit
