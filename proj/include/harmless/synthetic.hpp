#pragma once

// Seeded synthetic corpora: Zipf-distributed background identifiers, with
// positives carrying tokens drawn from a shared signature pool.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "harmless/corpus.hpp"
#include "harmless/text.hpp"

namespace harmless::synthetic {

struct Options {
  std::size_t documents = 5000;
  double positive_rate = 0.02;
  std::size_t background_vocabulary = 20000;  // above the default M, so top-M selection drops tokens
  double zipf_exponent = 1.1;
  std::size_t min_tokens = 60;
  std::size_t max_tokens = 240;
  std::size_t signature_pool = 30;
  std::size_t signatures_per_positive = 6;  // distinct pool tokens per positive
  std::size_t signature_repeats = 3;        // occurrences of each
  double negative_signature_rate = 0.03;    // chance a negative carries one pool token
  double crashed_positive_share = 0.7;      // positives with a nonzero crash count
  double crashed_negative_share = 0.05;
  std::uint64_t seed = 7;
};

inline const std::vector<std::string>& raw_type_pool() {
  static const std::vector<std::string> pool = {
      "use after free",  "resource leak", "protection mechanism failure", "data processing errors",
      "code quality",    "race conditions", "uncontrolled resource consumption", "configuration"};
  return pool;
}

inline std::string background_token(std::size_t k) { return "id" + std::to_string(k); }
inline std::string signature_token(std::size_t k) { return "sig" + std::to_string(k); }

// Builds the corpus in memory. Exactly round(documents * positive_rate)
// positives; each gets one or two raw types, grouped into categories.
inline Corpus generate(const Options& opt) {
  std::mt19937_64 rng(opt.seed);
  const std::size_t n = opt.documents;
  const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(n) * opt.positive_rate));
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<bool> positive(n, false);
  for (std::size_t k = 0; k < n_pos && k < n; ++k) positive[ids[k]] = true;

  std::vector<double> zipf(opt.background_vocabulary);
  for (std::size_t k = 0; k < zipf.size(); ++k) zipf[k] = 1.0 / std::pow(static_cast<double>(k + 1), opt.zipf_exponent);
  std::discrete_distribution<std::size_t> background(zipf.begin(), zipf.end());
  std::uniform_int_distribution<std::size_t> length(opt.min_tokens, opt.max_tokens);
  std::uniform_int_distribution<std::size_t> sig(0, opt.signature_pool - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> raw(0, raw_type_pool().size() - 1);

  // Crash flags for positives are assigned by exact share.
  std::vector<std::size_t> pos_ids;
  for (std::size_t i = 0; i < n; ++i)
    if (positive[i]) pos_ids.push_back(i);
  std::shuffle(pos_ids.begin(), pos_ids.end(), rng);
  std::vector<bool> crashed(n, false);
  const auto n_crashed =
      static_cast<std::size_t>(std::llround(static_cast<double>(pos_ids.size()) * opt.crashed_positive_share));
  for (std::size_t k = 0; k < n_crashed; ++k) crashed[pos_ids[k]] = true;

  Corpus corpus;
  corpus.metric_schema = {"loc", "complexity", "churn"};
  corpus.documents.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> tokens;
    const std::size_t len = length(rng);
    for (std::size_t t = 0; t < len; ++t) tokens.push_back(background_token(background(rng)));
    if (positive[i]) {
      std::vector<std::size_t> chosen;
      while (chosen.size() < std::min(opt.signatures_per_positive, opt.signature_pool)) {
        auto s = sig(rng);
        if (std::find(chosen.begin(), chosen.end(), s) == chosen.end()) chosen.push_back(s);
      }
      for (auto s : chosen)
        for (std::size_t r = 0; r < opt.signature_repeats; ++r) tokens.push_back(signature_token(s));
    } else if (u(rng) < opt.negative_signature_rate) {
      tokens.push_back(signature_token(sig(rng)));
    }
    std::shuffle(tokens.begin(), tokens.end(), rng);
    std::string body;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      body += tokens[t];
      body += (t % 12 == 11) ? '\n' : ' ';
    }

    DocumentRecord d;
    d.doc_id = i;
    d.path = "src/file_" + std::to_string(i) + ".cpp";
    d.body = std::move(body);
    if (!positive[i]) crashed[i] = u(rng) < opt.crashed_negative_share;
    std::uniform_int_distribution<std::uint64_t> crash_count(1, positive[i] ? 40 : 10);
    d.crash_count = crashed[i] ? crash_count(rng) : 0;
    const double loc = static_cast<double>(len);
    d.metrics = std::vector<double>{loc, std::floor(loc / 8.0 + (positive[i] ? 6.0 : 0.0) * u(rng)),
                                    std::floor(20.0 * u(rng) + (positive[i] ? 10.0 : 0.0))};
    if (positive[i]) {
      std::set<std::string> types = {raw_type_pool()[raw(rng)]};
      if (u(rng) < 0.2) types.insert(raw_type_pool()[raw(rng)]);
      d.truth_categories = group_categories(types);
    }
    corpus.documents.push_back(std::move(d));
  }
  rebuild_category_index(corpus);
  return corpus;
}

// Writes the corpus as source files plus a manifest CSV (with a metrics
// sidecar) under `dir`; returns the manifest path. Raw types are written as
// the grouped category names so reloading reproduces the same grouping.
inline std::filesystem::path write_manifest(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto manifest = dir / "manifest.csv";
  std::ofstream out(manifest);
  out << "path,crash_count,vuln_types";
  for (const auto& m : corpus.metric_schema) out << ',' << text::csv_escape(m);
  out << '\n';
  for (const auto& d : corpus.documents) {
    const auto file = dir / d.path;
    fs::create_directories(file.parent_path());
    std::ofstream(file, std::ios::binary) << d.body;
    std::string types;
    for (const auto& c : d.truth_categories) {
      if (c == kCategoryAll) continue;
      if (!types.empty()) types += ';';
      types += c;
    }
    out << text::csv_escape(d.path) << ',';
    if (d.crash_count) out << *d.crash_count;
    out << ',' << text::csv_escape(types);
    if (d.metrics)
      for (double v : *d.metrics) out << ',' << v;
    out << '\n';
  }
  std::ofstream sidecar(manifest.string() + ".metrics");
  for (const auto& m : corpus.metric_schema) sidecar << m << '\n';
  return manifest;
}

}  // namespace harmless::synthetic
