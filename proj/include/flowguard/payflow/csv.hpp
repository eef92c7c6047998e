#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "flowguard/errors.hpp"
#include "flowguard/payflow/record.hpp"

namespace flowguard::payflow {

inline const std::vector<std::string>& paysim_columns() {
  static const std::vector<std::string> cols{"step",          "type",           "amount",         "nameOrig",
                                             "oldbalanceOrg", "newbalanceOrig", "nameDest",       "oldbalanceDest",
                                             "newbalanceDest", "isFraud",       "isFlaggedFraud"};
  return cols;
}

inline constexpr std::string_view kPatternLabelColumn = "patternLabel";

struct LoadOptions {
  // Skip and count malformed rows instead of throwing RowError.
  bool skip_malformed = false;
  // Stop after this many data rows; 0 reads everything.
  std::size_t max_rows = 0;
};

struct LoadResult {
  std::vector<TransactionRecord> records;
  std::size_t malformed_rows = 0;
  std::vector<std::string> row_errors;  // first few, for reporting
  bool has_pattern_labels = false;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += ',';
    s += parts[i];
  }
  return s;
}

inline double parse_double(std::string_view field, const char* column) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
    throw Error(std::string("bad number in ") + column + ": '" + std::string(field) + "'");
  return v;
}

template <typename Int>
Int parse_int(std::string_view field, const char* column) {
  Int v{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
    throw Error(std::string("bad integer in ") + column + ": '" + std::string(field) + "'");
  return v;
}

inline TransactionRecord parse_row(std::string_view line, bool with_label) {
  const auto fields = split_commas(line);
  const std::size_t expected = paysim_columns().size() + (with_label ? 1 : 0);
  if (fields.size() != expected)
    throw Error("expected " + std::to_string(expected) + " fields, got " + std::to_string(fields.size()));
  TransactionRecord r;
  r.step = parse_int<std::uint32_t>(fields[0], "step");
  auto type = parse_tx_type(fields[1]);
  if (!type) throw Error("unknown transaction type '" + std::string(fields[1]) + "'");
  r.type = *type;
  r.amount = parse_double(fields[2], "amount");
  r.orig_account = std::string(fields[3]);
  r.orig_balance_before = parse_double(fields[4], "oldbalanceOrg");
  r.orig_balance_after = parse_double(fields[5], "newbalanceOrig");
  r.dest_account = std::string(fields[6]);
  r.dest_balance_before = parse_double(fields[7], "oldbalanceDest");
  r.dest_balance_after = parse_double(fields[8], "newbalanceDest");
  const int is_fraud = parse_int<int>(fields[9], "isFraud");
  const int flagged = parse_int<int>(fields[10], "isFlaggedFraud");
  if ((is_fraud != 0 && is_fraud != 1) || (flagged != 0 && flagged != 1)) throw Error("fraud flags must be 0 or 1");
  r.flagged_fraud = flagged == 1;
  if (r.amount < 0.0 || r.orig_balance_before < 0.0 || r.orig_balance_after < 0.0 || r.dest_balance_before < 0.0 ||
      r.dest_balance_after < 0.0)
    throw Error("negative amount or balance");
  if (with_label) {
    auto label = parse_label(fields[11]);
    if (!label) throw Error("unknown patternLabel '" + std::string(fields[11]) + "'");
    if ((*label != PatternLabel::normal) != (is_fraud == 1)) throw Error("isFraud disagrees with patternLabel");
    r.label = *label;
  } else {
    r.label = is_fraud == 1 ? PatternLabel::fraud : PatternLabel::normal;
  }
  return r;
}

inline void append_number(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace detail

// Reads PaySim CSV. A trailing patternLabel column (as written by
// write_synthetic_csv) is honoured; without it isFraud=1 maps to FRAUD.
inline LoadResult read_paysim_csv(std::istream& in, const LoadOptions& options = {}) {
  LoadResult result;
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty input: expected header " + detail::join(paysim_columns()));
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> found;
  for (auto f : detail::split_commas(line)) found.emplace_back(f);
  std::vector<std::string> with_label = paysim_columns();
  with_label.emplace_back(kPatternLabelColumn);
  if (found == with_label)
    result.has_pattern_labels = true;
  else if (found != paysim_columns())
    throw SchemaError("header mismatch: expected [" + detail::join(paysim_columns()) + "] (optionally followed by " +
                      std::string(kPatternLabelColumn) + "), found [" + detail::join(found) + "]");

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (options.max_rows && result.records.size() >= options.max_rows) break;
    try {
      result.records.push_back(detail::parse_row(line, result.has_pattern_labels));
    } catch (const Error& e) {
      if (!options.skip_malformed) throw RowError(line_no, e.what());
      ++result.malformed_rows;
      if (result.row_errors.size() < 10) result.row_errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return result;
}

inline LoadResult load_paysim(const std::string& path, const LoadOptions& options = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReadError("cannot open '" + path + "'");
  return read_paysim_csv(in, options);
}

inline std::vector<TransactionRecord> load_paysim_csv(const std::string& path) { return load_paysim(path).records; }

// PaySim columns plus patternLabel. Floats use the shortest representation
// that reads back to the same double.
inline void write_synthetic_csv(std::ostream& out, const std::vector<TransactionRecord>& records) {
  std::string buf = detail::join(paysim_columns());
  buf += ',';
  buf += kPatternLabelColumn;
  buf += '\n';
  for (const auto& r : records) {
    buf += std::to_string(r.step);
    buf += ',';
    buf += to_string(r.type);
    buf += ',';
    detail::append_number(buf, r.amount);
    buf += ',';
    buf += r.orig_account;
    buf += ',';
    detail::append_number(buf, r.orig_balance_before);
    buf += ',';
    detail::append_number(buf, r.orig_balance_after);
    buf += ',';
    buf += r.dest_account;
    buf += ',';
    detail::append_number(buf, r.dest_balance_before);
    buf += ',';
    detail::append_number(buf, r.dest_balance_after);
    buf += r.suspicious() ? ",1," : ",0,";
    buf += r.flagged_fraud ? '1' : '0';
    buf += ',';
    buf += to_string(r.label);
    buf += '\n';
  }
  out << buf;
}

inline void write_synthetic_csv(const std::string& path, const std::vector<TransactionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw WriteError("cannot write '" + path + "'");
  write_synthetic_csv(out, records);
  if (!out) throw WriteError("write failed for '" + path + "'");
}

}  // namespace flowguard::payflow
