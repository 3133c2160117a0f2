#pragma once

// Verdict sources. The simulated reviewer never reports a false positive and
// misses a truly vulnerable file with probability E_R, independently on every
// check.

#include <cstdint>
#include <random>
#include <set>
#include <string>

#include "harmless/corpus.hpp"
#include "harmless/error.hpp"

namespace harmless {

enum class Verdict { vulnerable, non_vulnerable };

inline std::string to_string(Verdict v) { return v == Verdict::vulnerable ? "vulnerable" : "non_vulnerable"; }

inline Verdict parse_verdict(std::string_view s) {
  if (s == "vulnerable") return Verdict::vulnerable;
  if (s == "non_vulnerable") return Verdict::non_vulnerable;
  throw ArgumentError("verdict must be vulnerable|non_vulnerable, got '" + std::string(s) + "'");
}

struct OracleConfig {
  double error_rate = 0.0;  // false-negative probability
  std::uint64_t seed = 0;

  void validate() const {
    if (!(error_rate >= 0.0 && error_rate <= 1.0)) throw ConfigError("error_rate", "must lie in [0, 1]");
  }
};

inline Verdict simulated_verdict(const DocumentRecord& doc, const std::string& category, const OracleConfig& config,
                                 std::mt19937_64& rng) {
  if (!doc.truth_categories.count(category)) return Verdict::non_vulnerable;
  // Draw even at E_R = 0 or 1 so the stream position depends only on the
  // number of vulnerable checks.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < config.error_rate ? Verdict::non_vulnerable : Verdict::vulnerable;
}

// Stateful simulated reviewer bound to one corpus and category.
class SimulatedOracle {
 public:
  SimulatedOracle(const Corpus& corpus, std::string category, OracleConfig config)
      : corpus_(&corpus), category_(std::move(category)), config_(config), rng_(config.seed) {
    config_.validate();
  }

  Verdict operator()(std::size_t doc_id) {
    if (doc_id >= corpus_->size()) throw ArgumentError("oracle: unknown document " + std::to_string(doc_id));
    return simulated_verdict(corpus_->documents[doc_id], category_, config_, rng_);
  }

  const std::string& category() const noexcept { return category_; }

 private:
  const Corpus* corpus_;
  std::string category_;
  OracleConfig config_;
  std::mt19937_64 rng_;
};

}  // namespace harmless
