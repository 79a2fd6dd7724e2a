#pragma once

// Structured reports (JSON, keys sorted) and flat CSV rows
// (method, seed, metric, value) for plotting.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "guq/errors.hpp"
#include "guq/harness.hpp"

namespace guq {

using Json = nlohmann::json;

namespace detail {

inline void require_finite(const Json& j, const std::string& where) {
  if (j.is_number_float()) {
    if (!std::isfinite(j.get<double>())) {
      throw DomainError("report field '" + where + "' is not finite");
    }
  } else if (j.is_object()) {
    for (const auto& [k, v] : j.items()) require_finite(v, where + "." + k);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      require_finite(j[i], where + "[" + std::to_string(i) + "]");
    }
  }
}

}  // namespace detail

/// Shortest decimal form that reads back to the same double.
inline std::string format_number(double v) { return Json(v).dump(); }

/// Pretty-printed, key-sorted document with a trailing newline. Refuses
/// NaN or infinite values.
inline std::string render_report(const Json& report) {
  detail::require_finite(report, "report");
  return report.dump(2) + "\n";
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline void write_report(const Json& report, const std::filesystem::path& path) {
  write_text(path, render_report(report));
}

inline Json read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError("report '" + path.string() + "': " + e.what());
  }
}

struct CsvRow {
  std::string method;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

inline std::string render_csv(const std::vector<CsvRow>& rows) {
  std::ostringstream out;
  out << "method,seed,metric,value\n";
  for (const auto& r : rows) {
    if (!std::isfinite(r.value)) {
      throw DomainError("csv row " + r.method + "/" + r.metric + " is not finite");
    }
    out << r.method << ',' << r.seed << ',' << r.metric << ',' << format_number(r.value)
        << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

inline Json summary_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

inline Json to_json(const OodReport& r) {
  Json methods = Json::object();
  for (const auto& m : r.methods) {
    methods[m.method] = {{"auroc", m.auroc},
                         {"aupr", m.aupr},
                         {"auroc_summary", summary_json(m.auroc_summary)},
                         {"aupr_summary", summary_json(m.aupr_summary)}};
  }
  return {{"experiment", "ood"}, {"seeds", r.seeds}, {"methods", methods}};
}

inline std::vector<CsvRow> to_csv_rows(const OodReport& r) {
  std::vector<CsvRow> rows;
  for (const auto& m : r.methods) {
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      rows.push_back({m.method, r.seeds[i], "auroc", m.auroc.at(i)});
      rows.push_back({m.method, r.seeds[i], "aupr", m.aupr.at(i)});
    }
  }
  return rows;
}

inline Json to_json(const CalibrationReport& r) {
  Json methods = Json::object();
  for (const auto& m : r.methods) {
    methods[m.method] = {{"raulc", m.raulc}, {"raulc_summary", summary_json(m.summary)}};
  }
  return {{"experiment", "calibration"},
          {"seeds", r.seeds},
          {"accuracy", r.accuracy},
          {"warnings", r.warnings},
          {"methods", methods}};
}

inline std::vector<CsvRow> to_csv_rows(const CalibrationReport& r) {
  std::vector<CsvRow> rows;
  for (const auto& m : r.methods) {
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      rows.push_back({m.method, r.seeds[i], "raulc", m.raulc.at(i)});
    }
  }
  return rows;
}

inline Json to_json(const ActiveLearnCurve& c) {
  return {{"acquisition", c.acquisition},
          {"labeled", c.labeled},
          {"accuracy", c.accuracy},
          {"nll", c.nll},
          {"acquired", c.acquired},
          {"accuracy_summary", summary_json(c.accuracy_summary)},
          {"nll_summary", summary_json(c.nll_summary)}};
}

/// Rows use metric names "accuracy@k" / "nll@k" for evaluation round k.
inline std::vector<CsvRow> to_csv_rows(const ActiveLearnCurve& c, std::uint64_t seed) {
  std::vector<CsvRow> rows;
  for (std::size_t k = 0; k < c.accuracy.size(); ++k) {
    rows.push_back({c.acquisition, seed, "accuracy@" + std::to_string(k), c.accuracy[k]});
    rows.push_back({c.acquisition, seed, "nll@" + std::to_string(k), c.nll[k]});
  }
  return rows;
}

inline Json to_json(const PropositionReport& r) {
  return {{"proposition", r.proposition},
          {"measured", r.measured},
          {"tolerances", r.tolerances},
          {"pass", r.pass},
          {"inconclusive", r.inconclusive},
          {"notes", r.notes}};
}

}  // namespace guq
