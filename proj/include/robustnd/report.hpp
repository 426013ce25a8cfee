// Copyright 2026 The robustnd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustnd/binary_io.hpp"
#include "robustnd/error.hpp"

namespace robustnd {

inline constexpr int kReportSchemaVersion = 1;

/// One evaluated setup: a normal class (one-class protocol) or an
/// in/out dataset pair (OOD protocol).
struct EvalEntry {
  std::string name;
  double clean_auroc = 0.0;
  std::optional<double> attacked_auroc;
  std::size_t normals = 0;
  std::size_t outliers = 0;

  friend bool operator==(const EvalEntry&, const EvalEntry&) = default;
};

struct EvalReport {
  int schema_version = kReportSchemaVersion;
  std::string engine_version;
  std::string protocol;  // "one_class" | "ood"
  std::string dataset;
  std::string scorer;
  std::string iterate_selection;  // "best" | "last" | "" when clean only
  std::vector<EvalEntry> entries;
  double macro_clean = 0.0;
  std::optional<double> macro_attacked;
  std::string backbone_hash;
  double wall_clock_seconds = 0.0;
  nlohmann::json config;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Fills the macro averages from the entries.
inline void finalize_macros(EvalReport& r) {
  if (r.entries.empty()) throw ValidationError("report has no entries");
  double clean = 0.0, attacked = 0.0;
  bool all_attacked = true;
  for (const auto& e : r.entries) {
    clean += e.clean_auroc;
    if (e.attacked_auroc) {
      attacked += *e.attacked_auroc;
    } else {
      all_attacked = false;
    }
  }
  const auto n = static_cast<double>(r.entries.size());
  r.macro_clean = clean / n;
  r.macro_attacked = all_attacked ? std::optional<double>(attacked / n) : std::nullopt;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = r.schema_version;
  j["engine_version"] = r.engine_version;
  j["protocol"] = r.protocol;
  j["dataset"] = r.dataset;
  j["scorer"] = r.scorer;
  j["iterate_selection"] = r.iterate_selection;
  j["backbone_hash"] = r.backbone_hash;
  j["wall_clock_seconds"] = r.wall_clock_seconds;
  auto& entries = j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : r.entries) {
    nlohmann::ordered_json je;
    je["name"] = e.name;
    je["clean_auroc"] = e.clean_auroc;
    je["attacked_auroc"] = e.attacked_auroc ? nlohmann::ordered_json(*e.attacked_auroc) : nlohmann::ordered_json();
    je["normals"] = e.normals;
    je["outliers"] = e.outliers;
    entries.push_back(std::move(je));
  }
  j["macro_clean"] = r.macro_clean;
  j["macro_attacked"] = r.macro_attacked ? nlohmann::ordered_json(*r.macro_attacked) : nlohmann::ordered_json();
  j["config"] = r.config;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kReportSchemaVersion) {
      throw FormatError("report: unsupported schema version " + std::to_string(r.schema_version));
    }
    r.engine_version = j.at("engine_version").get<std::string>();
    r.protocol = j.at("protocol").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.scorer = j.at("scorer").get<std::string>();
    r.iterate_selection = j.at("iterate_selection").get<std::string>();
    r.backbone_hash = j.at("backbone_hash").get<std::string>();
    r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    for (const auto& je : j.at("entries")) {
      EvalEntry e;
      e.name = je.at("name").get<std::string>();
      e.clean_auroc = je.at("clean_auroc").get<double>();
      if (!je.at("attacked_auroc").is_null()) e.attacked_auroc = je.at("attacked_auroc").get<double>();
      e.normals = je.at("normals").get<std::size_t>();
      e.outliers = je.at("outliers").get<std::size_t>();
      r.entries.push_back(std::move(e));
    }
    r.macro_clean = j.at("macro_clean").get<double>();
    if (!j.at("macro_attacked").is_null()) r.macro_attacked = j.at("macro_attacked").get<double>();
    r.config = j.at("config");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

inline void write_report(const EvalReport& r, const std::filesystem::path& path) {
  io::write_text(path, report_to_json(r).dump(2) + "\n");
}

inline EvalReport read_report(const std::filesystem::path& path) {
  try {
    return report_from_json(nlohmann::json::parse(io::read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("report '" + path.string() + "': " + e.what());
  }
}

/// AUROC in [0, 1] as a percentage with one decimal, e.g. 0.897 -> "89.7".
inline std::string format_percent(double auroc) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * auroc);
  return buf;
}

/// Plain-text table, one row per entry plus a mean row for multi-entry
/// reports; columns are clean and PGD AUROC in percent.
inline std::string emit_table(std::span<const EvalReport> reports) {
  struct Row {
    std::string name, clean, attacked;
  };
  std::vector<Row> rows;
  for (const auto& r : reports) {
    for (const auto& e : r.entries) {
      rows.push_back({r.dataset.empty() ? e.name : r.dataset + " / " + e.name, format_percent(e.clean_auroc),
                      e.attacked_auroc ? format_percent(*e.attacked_auroc) : "-"});
    }
    if (r.entries.size() > 1) {
      rows.push_back({(r.dataset.empty() ? std::string("mean") : r.dataset + " / mean"), format_percent(r.macro_clean),
                      r.macro_attacked ? format_percent(*r.macro_attacked) : "-"});
    }
  }
  std::size_t w0 = 7, w1 = 5, w2 = 3;
  for (const auto& row : rows) {
    w0 = std::max(w0, row.name.size());
    w1 = std::max(w1, row.clean.size());
    w2 = std::max(w2, row.attacked.size());
  }
  std::ostringstream os;
  auto line = [&](const std::string& a, const std::string& b, const std::string& c) {
    os << a << std::string(w0 - a.size() + 2, ' ') << std::string(w1 - b.size(), ' ') << b << "  "
       << std::string(w2 - c.size(), ' ') << c << '\n';
  };
  line("setting", "Clean", "PGD");
  os << std::string(w0 + w1 + w2 + 4, '-') << '\n';
  for (const auto& row : rows) line(row.name, row.clean, row.attacked);
  return os.str();
}

}  // namespace robustnd
