#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "caltrend/panel.hpp"

namespace caltrend {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  out.push_back(field);
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* begin = s.data();
  const char* end = begin + s.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end) return std::nullopt;
  return v;
}

inline std::optional<long> parse_long(const std::string& s) {
  if (s.empty()) return std::nullopt;
  long v = 0;
  const char* begin = s.data();
  const char* end = begin + s.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end) return std::nullopt;
  return v;
}

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

struct IngestResult {
  TrialPanel panel;
  int coerced_rows = 0;       // eligible rows made absent due to missing fields
  int declared_ineligible = 0;
  Warnings warnings;
};

/// Read a long-format trial CSV. Header must contain subject_id, trial,
/// eligible, treatment, outcome, plus one column per schema covariate, in
/// any order; no extra columns. Missing fields on an eligible row coerce the
/// whole subject-trial to ineligible (the count is reported); malformed
/// values raise an error naming the row and column.
inline IngestResult ingest_csv(const std::string& path, const CovariateSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("trial_data", "ingest", "cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw Error("trial_data", "ingest", "empty file '" + path + "'");
  const auto header = detail::split_csv_line(line);

  const std::vector<std::string> fixed = {"subject_id", "trial", "eligible", "treatment", "outcome"};
  std::map<std::string, int> col;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    const std::string& name = header[static_cast<std::size_t>(i)];
    bool known = false;
    for (const auto& f : fixed) known = known || name == f;
    known = known || schema.index_of(name) >= 0;
    if (!known) throw Error("trial_data", "ingest", "unknown column '" + name + "'");
    if (!col.emplace(name, i).second)
      throw Error("trial_data", "ingest", "duplicate column '" + name + "'");
  }
  for (const auto& f : fixed)
    if (!col.count(f)) throw Error("trial_data", "ingest", "missing required column '" + f + "'");
  for (const auto& c : schema.covariates())
    if (!col.count(c.name)) throw Error("trial_data", "ingest", "missing covariate column '" + c.name + "'");

  struct RawRow {
    std::string subject;
    int trial1;
    bool eligible;
    std::vector<std::string> fields;
    long line_no;
  };
  std::vector<RawRow> raws;
  int max_trial = 0;
  std::vector<bool> trial_seen;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw Error("trial_data", "ingest",
                  "row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    const auto trial = detail::parse_long(fields[static_cast<std::size_t>(col["trial"])]);
    if (!trial || *trial < 1)
      throw Error("trial_data", "ingest", "row " + std::to_string(line_no) + ", column 'trial': bad value");
    const auto elig = detail::parse_long(fields[static_cast<std::size_t>(col["eligible"])]);
    if (!elig || (*elig != 0 && *elig != 1))
      throw Error("trial_data", "ingest",
                  "row " + std::to_string(line_no) + ", column 'eligible': must be 0 or 1");
    max_trial = std::max(max_trial, static_cast<int>(*trial));
    if (static_cast<int>(trial_seen.size()) < max_trial) trial_seen.resize(static_cast<std::size_t>(max_trial));
    trial_seen[static_cast<std::size_t>(*trial - 1)] = true;
    raws.push_back({fields[static_cast<std::size_t>(col["subject_id"])], static_cast<int>(*trial),
                    *elig == 1, std::move(fields), line_no});
  }
  if (max_trial == 0) throw Error("trial_data", "ingest", "no data rows");
  for (int m = 0; m < max_trial; ++m)
    if (!trial_seen[static_cast<std::size_t>(m)])
      throw Error("trial_data", "ingest",
                  "non-contiguous trial indices: trial " + std::to_string(m + 1) + " never appears");

  IngestResult result{TrialPanel(schema, max_trial), 0, 0, {}};
  std::map<std::string, int> subject_index;
  for (auto& raw : raws) {
    auto it = subject_index.find(raw.subject);
    int si;
    if (it == subject_index.end()) {
      si = result.panel.add_subject(raw.subject);
      subject_index.emplace(raw.subject, si);
    } else {
      si = it->second;
    }
    if (!raw.eligible) {
      ++result.declared_ineligible;
      continue;
    }
    const std::string& treat_s = raw.fields[static_cast<std::size_t>(col["treatment"])];
    const std::string& out_s = raw.fields[static_cast<std::size_t>(col["outcome"])];
    bool missing = treat_s.empty() || out_s.empty();
    std::vector<double> cov(static_cast<std::size_t>(schema.size()), 0.0);
    for (int c = 0; c < schema.size() && !missing; ++c) {
      const Covariate& cv = schema.at(c);
      const std::string& s = raw.fields[static_cast<std::size_t>(col[cv.name])];
      if (s.empty()) {
        missing = true;
        break;
      }
      if (cv.kind == CovariateKind::categorical) {
        int level = -1;
        for (int l = 0; l < static_cast<int>(cv.levels.size()); ++l)
          if (cv.levels[static_cast<std::size_t>(l)] == s) level = l;
        if (level < 0)
          throw Error("trial_data", "ingest",
                      "row " + std::to_string(raw.line_no) + ", column '" + cv.name +
                          "': unknown level '" + s + "'");
        cov[static_cast<std::size_t>(c)] = level;
      } else {
        const auto v = detail::parse_double(s);
        if (!v)
          throw Error("trial_data", "ingest",
                      "row " + std::to_string(raw.line_no) + ", column '" + cv.name + "': unparseable value");
        if (!schema.valid_value(c, *v))
          throw Error("trial_data", "ingest",
                      "row " + std::to_string(raw.line_no) + ", column '" + cv.name + "': out of domain");
        cov[static_cast<std::size_t>(c)] = *v;
      }
    }
    if (missing) {
      ++result.coerced_rows;
      continue;
    }
    const auto treat = detail::parse_long(treat_s);
    if (!treat || (*treat != 0 && *treat != 1))
      throw Error("trial_data", "ingest",
                  "row " + std::to_string(raw.line_no) + ", column 'treatment': must be 0 or 1");
    const auto outv = detail::parse_double(out_s);
    if (!outv)
      throw Error("trial_data", "ingest",
                  "row " + std::to_string(raw.line_no) + ", column 'outcome': unparseable value");
    result.panel.set_record(si, raw.trial1, cov, static_cast<int>(*treat), *outv);
  }
  if (result.coerced_rows > 0)
    result.warnings.push_back(std::to_string(result.coerced_rows) +
                              " incomplete row(s) coerced to ineligible");
  return result;
}

/// Write a panel in the ingestion schema: one row per subject-trial, subject
/// order preserved, trials ascending. Ineligible pairs get eligible=0 and
/// empty value fields. Booleans as 0/1; numerics in shortest round-trip form.
inline void export_csv(const TrialPanel& panel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("trial_data", "export", "cannot write '" + path + "'");
  const CovariateSchema& schema = panel.schema();
  out << "subject_id,trial,eligible,treatment,outcome";
  for (const auto& c : schema.covariates()) out << ',' << c.name;
  out << '\n';
  for (int i = 0; i < panel.n_subjects(); ++i) {
    for (int m = 1; m <= panel.n_trials(); ++m) {
      out << panel.subject_ids()[static_cast<std::size_t>(i)] << ',' << m;
      if (!panel.eligible(i, m)) {
        out << ",0,,";
        for (int c = 0; c < schema.size(); ++c) out << ',';
        out << '\n';
        continue;
      }
      const auto rec = panel.record(i, m);
      out << ",1," << panel.treatment_at(rec) << ',' << detail::format_double(panel.outcome_at(rec));
      const double* raw = panel.covariates_at(rec);
      for (int c = 0; c < schema.size(); ++c) {
        const Covariate& cv = schema.at(c);
        out << ',';
        if (cv.kind == CovariateKind::categorical)
          out << cv.levels[static_cast<std::size_t>(static_cast<int>(raw[c]))];
        else if (cv.kind == CovariateKind::binary)
          out << static_cast<int>(raw[c]);
        else
          out << detail::format_double(raw[c]);
      }
      out << '\n';
    }
  }
}

}  // namespace caltrend
