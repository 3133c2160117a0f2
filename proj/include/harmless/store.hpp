#pragma once

// Ingested corpus store: a directory holding documents.jsonl (one document
// per line) and meta.json.

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "harmless/corpus.hpp"
#include "harmless/error.hpp"

namespace harmless {

inline constexpr const char* kStoreFormat = "harmless-store 1";

inline void save_store(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream docs(dir / "documents.jsonl");
  if (!docs) throw IngestError("cannot write " + (dir / "documents.jsonl").string());
  for (const auto& d : corpus.documents) {
    nlohmann::json j = {{"doc_id", d.doc_id}, {"path", d.path}, {"body", d.body}};
    j["crash_count"] = d.crash_count ? nlohmann::json(*d.crash_count) : nlohmann::json(nullptr);
    j["metrics"] = d.metrics ? nlohmann::json(*d.metrics) : nlohmann::json(nullptr);
    j["categories"] = d.truth_categories;
    docs << j.dump() << '\n';
  }
  nlohmann::json meta = {{"format", kStoreFormat},
                         {"documents", corpus.size()},
                         {"metric_schema", corpus.metric_schema},
                         {"has_crash_counts", corpus.has_crash_counts()}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  if (!docs) throw IngestError("cannot write " + (dir / "documents.jsonl").string());
}

inline Corpus load_store(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "meta.json");
  if (!meta_in) throw IngestError("store not found: " + (dir / "meta.json").string());
  Corpus corpus;
  std::size_t expected = 0;
  try {
    const auto meta = nlohmann::json::parse(meta_in);
    if (meta.at("format").get<std::string>() != kStoreFormat)
      throw IngestError("unsupported store format in " + dir.string());
    corpus.metric_schema = meta.at("metric_schema").get<std::vector<std::string>>();
    expected = meta.at("documents").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("malformed meta.json in " + dir.string() + ": " + e.what());
  }
  std::ifstream in(dir / "documents.jsonl");
  if (!in) throw IngestError("missing " + (dir / "documents.jsonl").string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DocumentRecord d;
      d.doc_id = j.at("doc_id").get<std::size_t>();
      if (d.doc_id != corpus.documents.size())
        throw IngestError("documents.jsonl line " + std::to_string(lineno) + ": doc_id out of order");
      d.path = j.at("path").get<std::string>();
      d.body = j.at("body").get<std::string>();
      if (!j.at("crash_count").is_null()) d.crash_count = j.at("crash_count").get<std::uint64_t>();
      if (!j.at("metrics").is_null()) d.metrics = j.at("metrics").get<std::vector<double>>();
      d.truth_categories = j.at("categories").get<std::set<std::string>>();
      corpus.documents.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw IngestError("documents.jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (corpus.documents.size() != expected)
    throw IngestError("store " + dir.string() + " is truncated: expected " + std::to_string(expected) + " documents");
  rebuild_category_index(corpus);
  return corpus;
}

}  // namespace harmless
