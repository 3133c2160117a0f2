#pragma once

// Featurization of a corpus: tf-idf vocabulary selection, L2-normalized term
// frequency rows, the hybrid crash column, and min-max scaled metrics.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "harmless/corpus.hpp"
#include "harmless/error.hpp"
#include "harmless/sparse.hpp"

namespace harmless {

inline constexpr std::size_t kDefaultVocabularySize = 4000;

enum class FeatureMode { text, hybrid, metrics };

inline std::string to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::text: return "text";
    case FeatureMode::hybrid: return "hybrid";
    case FeatureMode::metrics: return "metrics";
  }
  return "?";
}

inline FeatureMode parse_feature_mode(std::string_view s) {
  if (s == "text") return FeatureMode::text;
  if (s == "hybrid") return FeatureMode::hybrid;
  if (s == "metrics") return FeatureMode::metrics;
  throw ArgumentError("unknown feature mode '" + std::string(s) + "' (expected text|hybrid|metrics)");
}

using TokenCounts = std::unordered_map<std::string, std::uint32_t>;

// Tokens are maximal runs of ASCII alphanumerics and '_'. No case folding,
// stemming or stop-word removal.
inline TokenCounts tokenize(std::string_view body) {
  TokenCounts counts;
  std::size_t i = 0;
  const std::size_t n = body.size();
  auto is_token_char = [](char c) {
    auto u = static_cast<unsigned char>(c);
    return u < 0x80 && (std::isalnum(u) || c == '_');
  };
  while (i < n) {
    while (i < n && !is_token_char(body[i])) ++i;
    std::size_t start = i;
    while (i < n && is_token_char(body[i])) ++i;
    if (i > start) ++counts[std::string(body.substr(start, i - start))];
  }
  return counts;
}

struct Vocabulary {
  std::vector<std::string> tokens;
  std::vector<double> scores;

  std::size_t size() const noexcept { return tokens.size(); }

  std::unordered_map<std::string, std::uint32_t> index() const {
    std::unordered_map<std::string, std::uint32_t> idx;
    idx.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) idx.emplace(tokens[i], static_cast<std::uint32_t>(i));
    return idx;
  }

  bool operator==(const Vocabulary&) const = default;
};

inline std::vector<TokenCounts> tokenize_corpus(const Corpus& corpus) {
  std::vector<TokenCounts> out;
  out.reserve(corpus.size());
  for (const auto& d : corpus.documents) out.push_back(tokenize(d.body));
  return out;
}

// Corpus-level score: Tfidf(t) = sum_d w_td * (ln(|D| / df_t) + 1). The
// per-document factor does not depend on d, so the sum collapses to
// total_count(t) * (ln(|D| / df_t) + 1).
inline Vocabulary select_vocabulary(const std::vector<TokenCounts>& docs, std::size_t m) {
  if (m == 0) throw ArgumentError("vocabulary size M must be positive");
  if (docs.empty()) throw ArgumentError("cannot select a vocabulary from an empty corpus");

  struct Stat {
    double total = 0.0;
    std::size_t df = 0;
  };
  std::unordered_map<std::string_view, Stat> stats;
  for (const auto& doc : docs) {
    for (const auto& [tok, w] : doc) {
      auto& s = stats[tok];
      s.total += w;
      ++s.df;
    }
  }
  const double n_docs = static_cast<double>(docs.size());
  std::vector<std::pair<std::string_view, double>> scored;
  scored.reserve(stats.size());
  for (const auto& [tok, s] : stats)
    scored.emplace_back(tok, s.total * (std::log(n_docs / static_cast<double>(s.df)) + 1.0));

  auto order = [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  };
  const std::size_t keep = std::min(m, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), order);

  Vocabulary vocab;
  vocab.tokens.reserve(keep);
  vocab.scores.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    vocab.tokens.emplace_back(scored[i].first);
    vocab.scores.push_back(scored[i].second);
  }
  return vocab;
}

inline Vocabulary select_vocabulary(const Corpus& corpus, std::size_t m) {
  if (m == 0) throw ArgumentError("vocabulary size M must be positive");
  return select_vocabulary(tokenize_corpus(corpus), m);
}

struct FeatureMatrix {
  CsrMatrix rows;
  FeatureMode mode = FeatureMode::text;
  std::optional<Vocabulary> vocabulary;

  std::size_t dim() const noexcept { return rows.cols(); }
  std::size_t size() const noexcept { return rows.rows(); }

  bool operator==(const FeatureMatrix&) const = default;
};

namespace detail {

inline void normalize_l2(std::vector<std::pair<std::uint32_t, double>>& entries) {
  double s = 0.0;
  for (const auto& e : entries) s += e.second * e.second;
  if (s == 0.0) return;
  const double norm = std::sqrt(s);
  for (auto& e : entries) e.second /= norm;
}

}  // namespace detail

inline FeatureMatrix build_matrix(const Corpus& corpus, const std::vector<TokenCounts>& docs,
                                  FeatureMode mode, const Vocabulary* vocabulary) {
  FeatureMatrix fm;
  fm.mode = mode;
  if (mode == FeatureMode::metrics) {
    if (vocabulary) throw ArgumentError("metrics mode does not take a vocabulary");
    const std::size_t k = corpus.metric_schema.size();
    if (k == 0) throw ArgumentError("metrics mode requires a non-empty metric schema");
    std::vector<double> lo(k, std::numeric_limits<double>::infinity());
    std::vector<double> hi(k, -std::numeric_limits<double>::infinity());
    for (const auto& d : corpus.documents) {
      if (!d.metrics) continue;
      if (d.metrics->size() != k) throw ArgumentError("document metrics do not match the metric schema");
      for (std::size_t c = 0; c < k; ++c) {
        lo[c] = std::min(lo[c], (*d.metrics)[c]);
        hi[c] = std::max(hi[c], (*d.metrics)[c]);
      }
    }
    fm.rows = CsrMatrix(k);
    std::vector<std::pair<std::uint32_t, double>> entries;
    for (const auto& d : corpus.documents) {
      entries.clear();
      if (d.metrics) {
        for (std::size_t c = 0; c < k; ++c) {
          const double span = hi[c] - lo[c];
          const double v = span > 0.0 ? ((*d.metrics)[c] - lo[c]) / span : 0.0;
          if (v != 0.0) entries.emplace_back(static_cast<std::uint32_t>(c), v);
        }
      }
      fm.rows.append_row(entries);
    }
    return fm;
  }

  if (!vocabulary) throw ArgumentError(to_string(mode) + " mode requires a vocabulary");
  if (docs.size() != corpus.size()) throw ArgumentError("token table does not match corpus size");
  const std::size_t m = vocabulary->size();
  const bool hybrid = mode == FeatureMode::hybrid;
  fm.vocabulary = *vocabulary;
  fm.rows = CsrMatrix(hybrid ? m + 1 : m);
  const auto index = vocabulary->index();
  std::vector<std::pair<std::uint32_t, double>> entries;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    entries.clear();
    for (const auto& [tok, w] : docs[i]) {
      auto it = index.find(tok);
      if (it != index.end()) entries.emplace_back(it->second, static_cast<double>(w));
    }
    std::sort(entries.begin(), entries.end());
    if (hybrid) {
      const auto crash = corpus.documents[i].crash_count.value_or(0);
      if (crash != 0) entries.emplace_back(static_cast<std::uint32_t>(m), static_cast<double>(crash));
    }
    detail::normalize_l2(entries);
    fm.rows.append_row(entries);
  }
  return fm;
}

inline FeatureMatrix build_matrix(const Corpus& corpus, FeatureMode mode, const Vocabulary* vocabulary) {
  if (mode == FeatureMode::metrics) return build_matrix(corpus, {}, mode, vocabulary);
  return build_matrix(corpus, tokenize_corpus(corpus), mode, vocabulary);
}

// Tokenizes once and produces the matrix for `mode`.
inline FeatureMatrix featurize(const Corpus& corpus, FeatureMode mode, std::size_t m = kDefaultVocabularySize) {
  if (mode == FeatureMode::metrics) return build_matrix(corpus, {}, mode, nullptr);
  if (m == 0) throw ArgumentError("vocabulary size M must be positive");
  auto docs = tokenize_corpus(corpus);
  auto vocab = select_vocabulary(docs, m);
  return build_matrix(corpus, docs, mode, &vocab);
}

// On-disk layout of a featurized corpus, one directory:
//   features.meta   key=value lines: mode, rows, dim
//   matrix.csv      header "doc_id,col,value", one non-zero per line
//   vocabulary.txt  "token<TAB>score" per line in vocabulary order (text/hybrid)
// Values are written with 17 significant digits so reloading is bit-exact.
inline void save_features(const FeatureMatrix& fm, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream meta(dir / "features.meta");
    meta << "mode=" << to_string(fm.mode) << "\nrows=" << fm.size() << "\ndim=" << fm.dim() << "\n";
    if (!meta) throw IngestError("cannot write " + (dir / "features.meta").string());
  }
  {
    std::ofstream out(dir / "matrix.csv");
    out << "doc_id,col,value\n" << std::setprecision(17);
    for (std::size_t i = 0; i < fm.size(); ++i) {
      auto r = fm.rows.row(i);
      for (std::size_t k = 0; k < r.nnz(); ++k) out << i << ',' << r.indices[k] << ',' << r.values[k] << '\n';
    }
    if (!out) throw IngestError("cannot write " + (dir / "matrix.csv").string());
  }
  if (fm.vocabulary) {
    std::ofstream out(dir / "vocabulary.txt");
    out << std::setprecision(17);
    for (std::size_t i = 0; i < fm.vocabulary->size(); ++i)
      out << fm.vocabulary->tokens[i] << '\t' << fm.vocabulary->scores[i] << '\n';
    if (!out) throw IngestError("cannot write " + (dir / "vocabulary.txt").string());
  }
}

inline FeatureMatrix load_features(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "features.meta");
  if (!meta) throw IngestError("feature directory is missing features.meta: " + dir.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!kv.count("mode") || !kv.count("rows") || !kv.count("dim"))
    throw IngestError("features.meta lacks mode/rows/dim: " + dir.string());
  FeatureMatrix fm;
  fm.mode = parse_feature_mode(kv["mode"]);
  const auto n_rows = std::stoull(kv["rows"]);
  const auto dim = std::stoull(kv["dim"]);

  std::ifstream in(dir / "matrix.csv");
  if (!in) throw IngestError("cannot read " + (dir / "matrix.csv").string());
  std::getline(in, line);
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rows(n_rows);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t doc = 0;
    std::uint32_t col = 0;
    double value = 0.0;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    if (!(ls >> doc >> c1 >> col >> c2 >> value) || c1 != ',' || c2 != ',' || doc >= n_rows || col >= dim)
      throw IngestError("matrix.csv line " + std::to_string(line_no) + ": malformed triplet");
    rows[doc].emplace_back(col, value);
  }
  fm.rows = CsrMatrix(dim);
  for (auto& r : rows) {
    std::sort(r.begin(), r.end());
    fm.rows.append_row(r);
  }

  if (fm.mode != FeatureMode::metrics) {
    std::ifstream vin(dir / "vocabulary.txt");
    if (!vin) throw IngestError("cannot read " + (dir / "vocabulary.txt").string());
    Vocabulary vocab;
    while (std::getline(vin, line)) {
      auto tab = line.find('\t');
      if (tab == std::string::npos) throw IngestError("vocabulary.txt: malformed line");
      vocab.tokens.push_back(line.substr(0, tab));
      vocab.scores.push_back(std::stod(line.substr(tab + 1)));
    }
    fm.vocabulary = std::move(vocab);
  }
  return fm;
}

}  // namespace harmless
