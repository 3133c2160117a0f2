#pragma once

// The active-learning review loop.
//
// A round runs in phases:
//   inspect       queued files receive verdicts (two-person follow-ups are
//                 appended here);
//   train         once the inspect queue drains and a positive exists:
//                 presumptive negatives, undersampling, SVM fit, DISPUTE
//                 selection;
//   double_check  selected files are re-reviewed by other reviewers;
//   finish        recall estimate, stopping rule, next query.
// `advance()` executes whichever computation is due once the queue is empty
// and returns a RoundReport when the round is closed.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "harmless/config.hpp"
#include "harmless/corpus.hpp"
#include "harmless/correction.hpp"
#include "harmless/error.hpp"
#include "harmless/estimator.hpp"
#include "harmless/features.hpp"
#include "harmless/review.hpp"
#include "harmless/svm.hpp"

namespace harmless {

struct QueueItem {
  std::size_t doc_id = 0;
  Purpose purpose = Purpose::inspect;
  // Further double checks owed if this one still comes back non_vulnerable.
  int remaining_checks = 0;

  bool operator==(const QueueItem&) const = default;
};

enum class Phase { inspect, double_check, final_recheck, stopped };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::inspect: return "inspect";
    case Phase::double_check: return "double_check";
    case Phase::final_recheck: return "final_recheck";
    case Phase::stopped: return "stopped";
  }
  return "?";
}

inline Phase parse_phase(std::string_view s) {
  if (s == "inspect") return Phase::inspect;
  if (s == "double_check") return Phase::double_check;
  if (s == "final_recheck") return Phase::final_recheck;
  if (s == "stopped") return Phase::stopped;
  throw ArgumentError("unknown phase '" + std::string(s) + "'");
}

struct RoundReport {
  int round = 0;
  std::size_t events = 0;     // review events so far, re-reviews included
  std::size_t labeled = 0;    // |L|
  std::size_t positives = 0;  // |L_R|
  std::optional<double> estimate;  // R_E
  bool estimator_converged = false;
  bool stop = false;
  bool exhausted = false;
  std::string strategy;  // sampling used to build the next queue

  bool operator==(const RoundReport&) const = default;
};

inline bool should_stop(std::size_t positives, double target_recall, double estimate) {
  return static_cast<double>(positives) >= target_recall * estimate;
}

// Of the negatives, keep the `keep` with the lowest decision values (farthest
// on the non-vulnerable side). Ranking is by decision value descending with
// ties on ascending id; the top of that ranking is discarded.
inline std::vector<std::size_t> undersample_negatives(std::vector<std::size_t> negatives,
                                                      const std::vector<double>& decision, std::size_t keep) {
  if (negatives.size() != decision.size()) throw ArgumentError("undersample_negatives: length mismatch");
  if (negatives.size() <= keep) return negatives;
  std::vector<std::size_t> order(negatives.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (decision[a] != decision[b]) return decision[a] > decision[b];
    return negatives[a] < negatives[b];
  });
  std::vector<std::size_t> kept;
  kept.reserve(keep);
  for (std::size_t k = order.size() - keep; k < order.size(); ++k) kept.push_back(negatives[order[k]]);
  std::sort(kept.begin(), kept.end());
  return kept;
}

// Ranking used by the query step. Uncertainty: smallest |decision|.
// Certainty: largest decision. Ties on ascending id.
inline std::vector<std::size_t> rank_candidates(std::vector<std::size_t> candidates, const std::vector<double>& decisions,
                                                bool certainty, std::size_t limit) {
  const std::size_t keep = std::min(limit, candidates.size());
  auto better = [&](std::size_t a, std::size_t b) {
    const double ka = certainty ? -decisions[a] : std::abs(decisions[a]);
    const double kb = certainty ? -decisions[b] : std::abs(decisions[b]);
    if (ka != kb) return ka < kb;
    return a < b;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                    better);
  candidates.resize(keep);
  return candidates;
}

struct TrainingSet {
  std::vector<std::size_t> docs;
  std::vector<int> labels;
  std::vector<std::size_t> presumptive;  // sampled from E \ L
  bool undersampled = false;
};

class Session {
 public:
  Session(const Corpus& corpus, const FeatureMatrix& matrix, SessionConfig config,
          std::optional<std::size_t> known_total = std::nullopt)
      : corpus_(&corpus),
        matrix_(&matrix),
        config_(std::move(config)),
        known_total_(known_total),
        history_(corpus.size()),
        queued_(corpus.size(), false),
        rng_(config_.seed) {
    config_.validate();
    if (matrix.size() != corpus.size()) throw ArgumentError("feature matrix rows do not match corpus size");
    if (config_.sampling_mode == SamplingMode::crash && !corpus.has_crash_counts())
      throw ConfigError("sampling_mode", "crash sampling requires crash counts in the corpus");
    if (config_.stop_rule == StopRule::known_total && !known_total_)
      throw ConfigError("stop_rule", "known_total requires the true positive count");
    if (corpus.size() == 0) throw ArgumentError("empty corpus");
    fill_initial_queue();
  }

  const SessionConfig& config() const noexcept { return config_; }
  const Corpus& corpus() const noexcept { return *corpus_; }
  const FeatureMatrix& matrix() const noexcept { return *matrix_; }
  Phase phase() const noexcept { return phase_; }
  bool stopped() const noexcept { return phase_ == Phase::stopped; }
  bool exhausted() const noexcept { return exhausted_; }
  int round() const noexcept { return round_; }
  const std::deque<QueueItem>& queue() const noexcept { return queue_; }
  const LabelHistory& history() const noexcept { return history_; }
  const std::optional<svm::Model>& model() const noexcept { return model_; }
  const std::vector<RoundReport>& reports() const noexcept { return reports_; }
  bool certainty_mode() const noexcept { return certainty_; }
  std::optional<double> latest_estimate() const {
    for (auto it = reports_.rbegin(); it != reports_.rend(); ++it)
      if (it->estimate) return it->estimate;
    return std::nullopt;
  }

  std::string reviewer_for(const QueueItem& item) const {
    return "reviewer-" + std::to_string(history_.event_count(item.doc_id));
  }

  // Records a verdict for a queued document. Two-person and DISPUTE(3)
  // follow-up checks are appended to the queue.
  void submit(std::size_t doc_id, const std::string& reviewer, Verdict verdict) {
    if (phase_ == Phase::stopped) throw StateError("session has stopped");
    auto it = std::find_if(queue_.begin(), queue_.end(), [&](const QueueItem& q) { return q.doc_id == doc_id; });
    if (it == queue_.end()) throw StateError("document " + std::to_string(doc_id) + " is not queued");
    const QueueItem item = *it;
    if (item.purpose == Purpose::double_check && history_.reviewers(doc_id).count(reviewer))
      throw StateError("double check of document " + std::to_string(doc_id) + " needs a different reviewer");
    queue_.erase(it);
    queued_[doc_id] = false;
    history_.add({doc_id, reviewer, verdict, item.purpose, round_});

    if (verdict == Verdict::non_vulnerable) {
      if (item.purpose == Purpose::inspect && config_.correction_mode == CorrectionMode::two_person)
        enqueue({doc_id, Purpose::double_check, 0});
      else if (item.purpose == Purpose::double_check && item.remaining_checks > 0)
        enqueue({doc_id, Purpose::double_check, item.remaining_checks - 1});
    }
    drop_stale_checks();
  }

  // Runs the computation due once the queue has drained. Returns the report
  // when this closes a round; std::nullopt when a double-check phase was
  // opened instead.
  std::optional<RoundReport> advance() {
    if (!queue_.empty()) throw StateError("advance: queue is not empty");
    switch (phase_) {
      case Phase::stopped:
        throw StateError("session has stopped");
      case Phase::final_recheck: {
        phase_ = Phase::stopped;
        const auto [estimate, converged] = estimate_now();
        return close_round(estimate, true, converged, "none");
      }
      case Phase::double_check:
        return finish_round();
      case Phase::inspect:
        break;
    }
    if (history_.positive_count() == 0) {
      auto batch = sample_until_positive_batch();
      if (batch.empty()) {
        exhausted_ = true;
        phase_ = Phase::stopped;
        return close_round(std::nullopt, true, false, "none");
      }
      for (auto d : batch) enqueue({d, Purpose::inspect, 0});
      return close_round(std::nullopt, false, false, "initial");
    }
    train_round_model();
    if (config_.correction_mode == CorrectionMode::dispute || config_.correction_mode == CorrectionMode::dispute3) {
      auto plan = correction::dispute_plan(decisions_, history_, config_.n2(),
                                           config_.correction_mode == CorrectionMode::dispute3);
      for (const auto& c : plan.double_check_queue) enqueue({c.doc_id, Purpose::double_check, c.required_checks - 1});
      if (!queue_.empty()) {
        phase_ = Phase::double_check;
        return std::nullopt;
      }
    }
    return finish_round();
  }

  // Consumes the queue through `oracle(item, reviewer) -> Verdict` and
  // advances until the round closes. If the oracle throws, the failed item
  // stays queued and the session can be resumed.
  template <class Oracle>
  RoundReport run_round(Oracle&& oracle) {
    while (true) {
      while (!queue_.empty()) {
        const QueueItem item = queue_.front();
        const auto reviewer = reviewer_for(item);
        const Verdict v = oracle(item, reviewer);
        submit(item.doc_id, reviewer, v);
      }
      if (auto report = advance()) return *report;
    }
  }

  // --- building blocks, public for direct testing ---

  // Step 2: N1 unlabeled documents (random or crash-ordered).
  std::vector<std::size_t> initial_sample() {
    std::vector<std::size_t> pool;
    for (std::size_t d = 0; d < corpus_->size(); ++d)
      if (!history_.labeled(d) && !queued_[d]) pool.push_back(d);
    if (pool.empty()) throw ExhaustedError("no unlabeled documents remain");
    const std::size_t take = std::min(config_.n1, pool.size());
    if (config_.sampling_mode == SamplingMode::crash) {
      auto crash = [&](std::size_t d) { return corpus_->documents[d].crash_count.value_or(0); };
      std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end(),
                        [&](std::size_t a, std::size_t b) {
                          if (crash(a) != crash(b)) return crash(a) > crash(b);
                          return a < b;
                        });
      pool.resize(take);
      return pool;
    }
    for (std::size_t k = 0; k < take; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
      std::swap(pool[k], pool[pick(rng_)]);
    }
    pool.resize(take);
    return pool;
  }

  TrainingSet assemble_training_set() {
    const std::size_t n_pos = history_.positive_count();
    if (n_pos == 0) throw StateError("assemble_training_set: no labeled positives");
    TrainingSet ts;
    std::vector<std::size_t> negatives;
    for (std::size_t d = 0; d < corpus_->size(); ++d) {
      if (!history_.labeled(d)) continue;
      if (history_.positive(d)) {
        ts.docs.push_back(d);
        ts.labels.push_back(1);
      } else {
        negatives.push_back(d);
      }
    }
    auto unlabeled = history_.unlabeled();
    const auto cap = static_cast<std::size_t>(std::floor(config_.presumptive_cap * static_cast<double>(corpus_->size())));
    const std::size_t n_presumed = std::min({history_.labeled_count(), cap, unlabeled.size()});
    for (std::size_t k = 0; k < n_presumed; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, unlabeled.size() - 1);
      std::swap(unlabeled[k], unlabeled[pick(rng_)]);
    }
    ts.presumptive.assign(unlabeled.begin(), unlabeled.begin() + static_cast<std::ptrdiff_t>(n_presumed));
    negatives.insert(negatives.end(), ts.presumptive.begin(), ts.presumptive.end());

    if (n_pos >= config_.n3 && negatives.size() > n_pos) {
      TrainingSet full = ts;
      for (auto d : negatives) {
        full.docs.push_back(d);
        full.labels.push_back(-1);
      }
      const auto provisional = fit(full, 0);
      std::vector<double> neg_decision;
      neg_decision.reserve(negatives.size());
      for (auto d : negatives) neg_decision.push_back(provisional.decision(matrix_->rows.row(d)));
      negatives = undersample_negatives(std::move(negatives), neg_decision, n_pos);
      ts.undersampled = true;
    }
    for (auto d : negatives) {
      ts.docs.push_back(d);
      ts.labels.push_back(-1);
    }
    return ts;
  }

  // Step 8: next N1 unlabeled documents by the current strategy.
  std::vector<std::size_t> query() const {
    if (!model_) throw StateError("query: no trained model");
    std::vector<std::size_t> pool;
    for (std::size_t d = 0; d < corpus_->size(); ++d)
      if (!history_.labeled(d) && !queued_[d]) pool.push_back(d);
    return rank_candidates(std::move(pool), decisions_, certainty_, config_.n1);
  }

  const std::vector<double>& decisions() const noexcept { return decisions_; }

  // --- persistence ---

  nlohmann::json snapshot() const {
    using nlohmann::json;
    json events = json::array();
    for (const auto& e : history_.events())
      events.push_back({{"doc_id", e.doc_id},
                        {"reviewer", e.reviewer},
                        {"verdict", to_string(e.verdict)},
                        {"purpose", to_string(e.purpose)},
                        {"round", e.round}});
    json queue = json::array();
    for (const auto& q : queue_)
      queue.push_back({{"doc_id", q.doc_id}, {"purpose", to_string(q.purpose)}, {"remaining_checks", q.remaining_checks}});
    json reports = json::array();
    for (const auto& r : reports_) reports.push_back(report_to_json(r));
    std::ostringstream rng;
    rng << rng_;
    json j = {{"config", to_json(config_)},
              {"round", round_},
              {"phase", to_string(phase_)},
              {"certainty", certainty_},
              {"exhausted", exhausted_},
              {"last_estimator_converged", last_estimator_converged_},
              {"rng", rng.str()},
              {"events", events},
              {"queue", queue},
              {"reports", reports},
              {"corpus_size", corpus_->size()}};
    j["known_total"] = known_total_ ? json(*known_total_) : json(nullptr);
    j["model"] = model_ ? json(svm::serialize(*model_)) : json(nullptr);
    return j;
  }

  static Session restore(const nlohmann::json& j, const Corpus& corpus, const FeatureMatrix& matrix) {
    std::optional<std::size_t> known;
    if (!j.at("known_total").is_null()) known = j.at("known_total").get<std::size_t>();
    if (j.at("corpus_size").get<std::size_t>() != corpus.size())
      throw IngestError("snapshot corpus size does not match the loaded corpus");
    Session s(corpus, matrix, config_from_json(j.at("config")), known, RestoreTag{});
    s.round_ = j.at("round").get<int>();
    s.phase_ = parse_phase(j.at("phase").get<std::string>());
    s.certainty_ = j.at("certainty").get<bool>();
    s.exhausted_ = j.at("exhausted").get<bool>();
    s.last_estimator_converged_ = j.at("last_estimator_converged").get<bool>();
    std::istringstream rng(j.at("rng").get<std::string>());
    rng >> s.rng_;
    for (const auto& e : j.at("events"))
      s.history_.add({e.at("doc_id").get<std::size_t>(), e.at("reviewer").get<std::string>(),
                      parse_verdict(e.at("verdict").get<std::string>()),
                      parse_purpose(e.at("purpose").get<std::string>()), e.at("round").get<int>()});
    for (const auto& q : j.at("queue"))
      s.enqueue({q.at("doc_id").get<std::size_t>(), parse_purpose(q.at("purpose").get<std::string>()),
                 q.at("remaining_checks").get<int>()});
    for (const auto& r : j.at("reports")) s.reports_.push_back(report_from_json(r));
    if (!j.at("model").is_null()) {
      s.model_ = svm::deserialize(j.at("model").get<std::string>());
      s.decisions_ = svm::decision_values(*s.model_, matrix.rows);
    }
    return s;
  }

  static nlohmann::json report_to_json(const RoundReport& r) {
    nlohmann::json j = {{"round", r.round},         {"events", r.events},       {"labeled", r.labeled},
                        {"positives", r.positives}, {"stop", r.stop},           {"exhausted", r.exhausted},
                        {"strategy", r.strategy},   {"estimator_converged", r.estimator_converged}};
    j["estimate"] = r.estimate ? nlohmann::json(*r.estimate) : nlohmann::json(nullptr);
    return j;
  }

  static RoundReport report_from_json(const nlohmann::json& j) {
    RoundReport r;
    r.round = j.at("round").get<int>();
    r.events = j.at("events").get<std::size_t>();
    r.labeled = j.at("labeled").get<std::size_t>();
    r.positives = j.at("positives").get<std::size_t>();
    r.stop = j.at("stop").get<bool>();
    r.exhausted = j.at("exhausted").get<bool>();
    r.strategy = j.at("strategy").get<std::string>();
    r.estimator_converged = j.at("estimator_converged").get<bool>();
    if (!j.at("estimate").is_null()) r.estimate = j.at("estimate").get<double>();
    return r;
  }

 private:
  struct RestoreTag {};

  Session(const Corpus& corpus, const FeatureMatrix& matrix, SessionConfig config,
          std::optional<std::size_t> known_total, RestoreTag)
      : corpus_(&corpus),
        matrix_(&matrix),
        config_(std::move(config)),
        known_total_(known_total),
        history_(corpus.size()),
        queued_(corpus.size(), false),
        rng_(config_.seed) {
    config_.validate();
  }

  void enqueue(QueueItem item) {
    if (queued_[item.doc_id]) throw StateError("document " + std::to_string(item.doc_id) + " is already queued");
    queued_[item.doc_id] = true;
    queue_.push_back(item);
  }

  // Double checks on documents already found vulnerable are dropped.
  void drop_stale_checks() {
    for (auto it = queue_.begin(); it != queue_.end();) {
      if (it->purpose == Purpose::double_check && history_.positive(it->doc_id)) {
        queued_[it->doc_id] = false;
        it = queue_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void fill_initial_queue() {
    for (auto d : initial_sample()) enqueue({d, Purpose::inspect, 0});
  }

  std::vector<std::size_t> sample_until_positive_batch() {
    try {
      return initial_sample();
    } catch (const ExhaustedError&) {
      return {};
    }
  }

  svm::Model fit(const TrainingSet& ts, int salt) const {
    std::vector<SparseRow> rows;
    rows.reserve(ts.docs.size());
    for (auto d : ts.docs) rows.push_back(matrix_->rows.row(d));
    svm::Params p;
    p.C = config_.svm_c;
    p.balanced = true;
    p.seed = config_.seed * 1000003ULL + static_cast<std::uint64_t>(round_) * 2ULL + static_cast<std::uint64_t>(salt);
    return svm::train(rows, ts.labels, matrix_->dim(), p);
  }

  void train_round_model() {
    auto ts = assemble_training_set();
    model_ = fit(ts, 1);
    decisions_ = svm::decision_values(*model_, matrix_->rows);
  }

  std::pair<std::optional<double>, bool> estimate_now() {
    if (!(config_.stop_rule == StopRule::semi || config_.estimate) || !model_) return {std::nullopt, false};
    estimator::SemiOptions opts;
    opts.max_iterations = config_.estimator_max_iterations;
    opts.reset_unlabeled = config_.estimator_reset;
    const auto trace = estimator::semi_estimate(decisions_, history_.labeled_mask(), history_.positive_mask(), opts);
    last_estimator_converged_ = trace.converged;
    return {trace.estimate, trace.converged};
  }

  std::optional<RoundReport> finish_round() {
    const std::size_t positives = history_.positive_count();
    const auto [estimate, converged] = estimate_now();

    bool stop = false;
    if (config_.correction_mode == CorrectionMode::cormack17) {
      if (history_.event_count() >= config_.knee_min_reviews) {
        const auto curve = correction::recall_curve(history_);
        const auto knee = correction::knee_stop(curve, config_.rho);
        if (knee.should_stop) {
          const auto reviewed_before = static_cast<std::size_t>(curve[knee.inflection].first);
          auto recheck = correction::knee_recheck_set(history_, reviewed_before);
          if (recheck.empty()) {
            phase_ = Phase::stopped;
            return close_round(estimate, true, converged, "none");
          }
          for (auto d : recheck) enqueue({d, Purpose::double_check, 0});
          phase_ = Phase::final_recheck;
          return close_round(estimate, false, converged, "knee_recheck");
        }
      }
    } else {
      switch (config_.stop_rule) {
        case StopRule::semi:
          // SEMI on a handful of positives returns R_E ~ |L_R|, which would
          // stop the session immediately.
          stop = positives >= config_.stop_min_positives && should_stop(positives, config_.target_recall, *estimate);
          break;
        case StopRule::known_total:
          stop = should_stop(positives, config_.target_recall, static_cast<double>(*known_total_));
          break;
        case StopRule::none:
          break;
      }
    }
    if (stop) {
      phase_ = Phase::stopped;
      return close_round(estimate, true, converged, "none");
    }
    if (positives >= config_.n3) certainty_ = true;
    auto next = query();
    if (next.empty()) {
      exhausted_ = true;
      phase_ = Phase::stopped;
      return close_round(estimate, true, converged, "none");
    }
    for (auto d : next) enqueue({d, Purpose::inspect, 0});
    phase_ = Phase::inspect;
    return close_round(estimate, false, converged, certainty_ ? "certainty" : "uncertainty");
  }

  RoundReport close_round(std::optional<double> estimate, bool stop, bool converged, std::string strategy) {
    RoundReport r;
    r.round = round_;
    r.events = history_.event_count();
    r.labeled = history_.labeled_count();
    r.positives = history_.positive_count();
    r.estimate = estimate;
    r.estimator_converged = converged;
    r.stop = stop;
    r.exhausted = exhausted_;
    r.strategy = std::move(strategy);
    reports_.push_back(r);
    ++round_;
    return r;
  }

  const Corpus* corpus_;
  const FeatureMatrix* matrix_;
  SessionConfig config_;
  std::optional<std::size_t> known_total_;
  LabelHistory history_;
  std::deque<QueueItem> queue_;
  std::vector<bool> queued_;
  std::mt19937_64 rng_;
  std::optional<svm::Model> model_;
  std::vector<double> decisions_;
  std::vector<RoundReport> reports_;
  Phase phase_ = Phase::inspect;
  int round_ = 0;
  bool certainty_ = false;
  bool exhausted_ = false;
  bool last_estimator_converged_ = false;
};

}  // namespace harmless
