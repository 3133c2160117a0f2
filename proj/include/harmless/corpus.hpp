#pragma once

// Candidate set ingestion: a CSV manifest of source files with optional crash
// counts, metric columns and ground-truth vulnerability types.
//
// Manifest layout (header row required):
//
//   path,crash_count,vuln_types[,metric columns...]
//
// `path` is resolved relative to the manifest's directory. `crash_count` and
// `vuln_types` may be blank; `vuln_types` is a semicolon-separated list of raw
// type names. Extra columns are metrics. If a sidecar file named
// `<manifest>.metrics` exists, it lists (one per line) which extra columns form
// the metric schema and in which order; otherwise every extra column does.
// A metric row whose cells are all blank means "no metrics for this document".

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "harmless/error.hpp"
#include "harmless/text.hpp"

namespace harmless {

inline constexpr std::string_view kCategoryAll = "All";
inline constexpr std::string_view kCategoryOther = "Other";

struct DocumentRecord {
  std::size_t doc_id = 0;
  std::string path;
  std::string body;
  std::optional<std::uint64_t> crash_count;
  std::optional<std::vector<double>> metrics;
  std::set<std::string> truth_categories;

  bool operator==(const DocumentRecord&) const = default;
};

struct Corpus {
  std::vector<DocumentRecord> documents;
  std::vector<std::string> metric_schema;
  std::map<std::string, std::set<std::size_t>> category_index;

  std::size_t size() const noexcept { return documents.size(); }

  bool has_crash_counts() const {
    for (const auto& d : documents)
      if (d.crash_count) return true;
    return false;
  }

  // Ground-truth positive set for a category; empty if the category is absent.
  const std::set<std::size_t>& positives(const std::string& category) const {
    static const std::set<std::size_t> kEmpty;
    auto it = category_index.find(category);
    return it == category_index.end() ? kEmpty : it->second;
  }

  bool operator==(const Corpus&) const = default;
};

namespace detail {

inline const std::unordered_map<std::string, std::string>& category_table() {
  static const std::unordered_map<std::string, std::string> table = {
      {"protection mechanism failure", "Protection Mechanism Failure"},
      {"uncontrolled resource consumption", "Resource Management Errors"},
      {"improper resource shutdown or release", "Resource Management Errors"},
      {"resource management errors", "Resource Management Errors"},
      {"use after free", "Resource Management Errors"},
      {"resource leak", "Resource Management Errors"},
      {"data processing errors", "Data Processing Errors"},
      {"code quality", "Code Quality"},
      {"race conditions", "Other"},
      {"configuration", "Other"},
      {"environment", "Other"},
      {"traversal", "Other"},
      {"link-following", "Other"},
      {"other", "Other"},
  };
  return table;
}

}  // namespace detail

// The five reporting categories, excluding the "All" union.
inline const std::vector<std::string>& category_names() {
  static const std::vector<std::string> names = {
      "Protection Mechanism Failure", "Resource Management Errors", "Data Processing Errors",
      "Code Quality", "Other"};
  return names;
}

// Maps raw vulnerability type names onto reporting categories. Matching is
// case-insensitive after trimming; unknown names fall into "Other". A
// non-empty result always also contains "All".
inline std::set<std::string> group_categories(const std::set<std::string>& raw_types) {
  std::set<std::string> out;
  const auto& table = detail::category_table();
  for (const auto& raw : raw_types) {
    auto key = text::to_lower(text::trim(raw));
    if (key.empty()) continue;
    auto it = table.find(key);
    out.insert(it == table.end() ? std::string(kCategoryOther) : it->second);
  }
  if (!out.empty()) out.insert(std::string(kCategoryAll));
  return out;
}

// Rebuilds `category_index` from the documents' truth categories. "All" and
// the five named categories are always present, possibly empty.
inline void rebuild_category_index(Corpus& corpus) {
  corpus.category_index.clear();
  corpus.category_index[std::string(kCategoryAll)];
  for (const auto& name : category_names()) corpus.category_index[name];
  for (const auto& doc : corpus.documents)
    for (const auto& cat : doc.truth_categories) corpus.category_index[cat].insert(doc.doc_id);
}

namespace detail {

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot read source file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::optional<std::uint64_t> parse_crash(const std::string& cell, std::size_t line) {
  auto s = text::trim(cell);
  if (s.empty()) return std::nullopt;
  std::uint64_t value = 0;
  for (char c : s) {
    if (c < '0' || c > '9') {
      throw IngestError("manifest line " + std::to_string(line) +
                        ": crash_count must be a non-negative integer, got '" + s + "'");
    }
    value = value * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return value;
}

inline double parse_metric(const std::string& cell, std::size_t line, const std::string& column) {
  auto s = text::trim(cell);
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IngestError("manifest line " + std::to_string(line) + ": metric '" + column +
                      "' is not a finite number: '" + s + "'");
  }
}

}  // namespace detail

inline Corpus load_corpus(const std::filesystem::path& manifest_path) {
  namespace fs = std::filesystem;
  if (!fs::exists(manifest_path)) throw IngestError("manifest not found: " + manifest_path.string());

  std::vector<text::CsvRecord> records;
  try {
    records = text::parse_csv(detail::read_file_bytes(manifest_path));
  } catch (const std::invalid_argument& e) {
    throw IngestError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (records.empty()) throw IngestError("manifest has no header row: " + manifest_path.string());

  const auto& header = records.front().fields;
  std::vector<std::string> columns;
  for (const auto& h : header) columns.push_back(text::trim(h));
  if (columns.size() < 3 || text::to_lower(columns[0]) != "path" ||
      text::to_lower(columns[1]) != "crash_count" || text::to_lower(columns[2]) != "vuln_types") {
    throw IngestError("manifest line 1: header must start with path,crash_count,vuln_types");
  }

  Corpus corpus;
  std::vector<std::size_t> metric_columns;
  fs::path sidecar = manifest_path;
  sidecar += ".metrics";
  if (fs::exists(sidecar)) {
    std::istringstream in(detail::read_file_bytes(sidecar));
    std::string name;
    while (std::getline(in, name)) {
      name = text::trim(name);
      if (name.empty()) continue;
      auto it = std::find(columns.begin() + 3, columns.end(), name);
      if (it == columns.end())
        throw IngestError("metric '" + name + "' declared in " + sidecar.string() +
                          " is not a manifest column");
      metric_columns.push_back(static_cast<std::size_t>(it - columns.begin()));
      corpus.metric_schema.push_back(name);
    }
  } else {
    for (std::size_t c = 3; c < columns.size(); ++c) {
      metric_columns.push_back(c);
      corpus.metric_schema.push_back(columns[c]);
    }
  }

  const fs::path base = manifest_path.parent_path();
  std::set<std::string> seen_paths;
  std::vector<std::string> missing;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.fields.size() != columns.size()) {
      throw IngestError("manifest line " + std::to_string(rec.line) + ": expected " +
                        std::to_string(columns.size()) + " fields, got " +
                        std::to_string(rec.fields.size()));
    }
    DocumentRecord doc;
    doc.doc_id = corpus.documents.size();
    doc.path = text::trim(rec.fields[0]);
    if (doc.path.empty())
      throw IngestError("manifest line " + std::to_string(rec.line) + ": empty path");
    if (!seen_paths.insert(doc.path).second)
      throw IngestError("manifest line " + std::to_string(rec.line) + ": duplicate path " +
                        doc.path);
    doc.crash_count = detail::parse_crash(rec.fields[1], rec.line);

    std::set<std::string> raw;
    for (auto& t : text::split(rec.fields[2], ';')) {
      auto trimmed = text::trim(t);
      if (!trimmed.empty()) raw.insert(trimmed);
    }
    doc.truth_categories = group_categories(raw);

    if (!metric_columns.empty()) {
      bool all_blank = true;
      for (auto c : metric_columns) all_blank = all_blank && text::trim(rec.fields[c]).empty();
      if (!all_blank) {
        std::vector<double> values;
        for (auto c : metric_columns) values.push_back(detail::parse_metric(rec.fields[c], rec.line, columns[c]));
        doc.metrics = std::move(values);
      }
    }

    fs::path file = fs::path(doc.path).is_absolute() ? fs::path(doc.path) : base / doc.path;
    std::ifstream in(file, std::ios::binary);
    if (!in) {
      missing.push_back(file.string());
      continue;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    doc.body = text::decode_lossy(ss.str());
    corpus.documents.push_back(std::move(doc));
  }
  if (!missing.empty()) {
    std::string msg = "missing source files:";
    for (const auto& m : missing) msg += " " + m;
    throw IngestError(msg);
  }
  rebuild_category_index(corpus);
  return corpus;
}

}  // namespace harmless
