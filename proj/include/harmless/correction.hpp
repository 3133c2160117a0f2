#pragma once

// False-negative correction strategies: DISPUTE, DISPUTE(3), two-person
// review and the knee stopping rule used by the Cormack'17 adaptation.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "harmless/features.hpp"
#include "harmless/review.hpp"
#include "harmless/svm.hpp"

namespace harmless::correction {

struct PlannedCheck {
  std::size_t doc_id = 0;
  int required_checks = 1;  // 1 for DISPUTE, up to 2 for DISPUTE(3)

  bool operator==(const PlannedCheck&) const = default;
};

struct CorrectionPlan {
  std::vector<PlannedCheck> double_check_queue;
  std::optional<bool> stop_override;  // set by the knee rule only
};

// Documents inspected exactly once whose verdict was non_vulnerable.
inline std::vector<std::size_t> single_review_negatives(const LabelHistory& history) {
  std::vector<std::size_t> out;
  for (std::size_t d = 0; d < history.size(); ++d)
    if (history.event_count(d) == 1 && !history.positive(d)) out.push_back(d);
  return out;
}

// Top `n2` candidates by decision value, descending; ties by ascending id.
// `decisions` is indexed by document id.
inline std::vector<std::size_t> dispute_select(std::span<const double> decisions,
                                               std::vector<std::size_t> candidates, std::size_t n2) {
  const std::size_t keep = std::min(n2, candidates.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (decisions[a] != decisions[b]) return decisions[a] > decisions[b];
    return a < b;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                    better);
  candidates.resize(keep);
  return candidates;
}

inline std::vector<std::size_t> dispute_select(const svm::Model& model, const FeatureMatrix& matrix,
                                               const std::vector<std::size_t>& candidates, std::size_t n2) {
  std::vector<double> decisions(matrix.size(), 0.0);
  for (auto c : candidates) decisions.at(c) = model.decision(matrix.rows.row(c));
  return dispute_select(decisions, candidates, n2);
}

inline CorrectionPlan dispute_plan(std::span<const double> decisions, const LabelHistory& history, std::size_t n2,
                                   bool triple) {
  CorrectionPlan plan;
  for (auto d : dispute_select(decisions, single_review_negatives(history), n2))
    plan.double_check_queue.push_back({d, triple ? 2 : 1});
  return plan;
}

// Two-person review: every singly-inspected negative goes back once for a
// second reviewer.
inline std::vector<std::size_t> two_person_queue(const LabelHistory& history) {
  return single_review_negatives(history);
}

struct KneeResult {
  bool should_stop = false;
  std::size_t inflection = 0;  // index into the curve
  double ratio = 0.0;
};

// Curve points are (reviewed count, positives found) in review order. The
// inflection point is the interior point farthest from the chord joining the
// first and last points (first such point on ties). Slopes:
//   before = (y_i - y_0) / (x_i - x_0)
//   after  = (y_end - y_i + 1) / (x_end - x_i)
inline KneeResult knee_stop(std::span<const std::pair<double, double>> curve, double rho) {
  KneeResult out;
  if (curve.size() < 3) return out;
  const auto [x0, y0] = curve.front();
  const auto [x1, y1] = curve.back();
  const double dx = x1 - x0, dy = y1 - y0;
  const double chord = std::hypot(dx, dy);
  if (chord == 0.0) return out;
  double best = -1.0;
  for (std::size_t k = 1; k + 1 < curve.size(); ++k) {
    const double dist = std::abs(dy * (curve[k].first - x0) - dx * (curve[k].second - y0)) / chord;
    if (dist > best) {
      best = dist;
      out.inflection = k;
    }
  }
  const auto [xi, yi] = curve[out.inflection];
  if (xi <= x0 || x1 <= xi) return out;
  const double before = (yi - y0) / (xi - x0);
  const double after = (y1 - yi + 1.0) / (x1 - xi);
  out.ratio = before / after;
  out.should_stop = out.ratio >= rho;
  return out;
}

// Recall curve of a history, one point per review event plus the origin.
inline std::vector<std::pair<double, double>> recall_curve(const LabelHistory& history) {
  std::vector<std::pair<double, double>> curve;
  curve.reserve(history.event_count() + 1);
  curve.emplace_back(0.0, 0.0);
  std::vector<bool> seen(history.size(), false);
  double positives = 0.0;
  double reviewed = 0.0;
  for (const auto& e : history.events()) {
    reviewed += 1.0;
    if (e.verdict == Verdict::vulnerable && !seen[e.doc_id]) {
      seen[e.doc_id] = true;
      positives += 1.0;
    }
    curve.emplace_back(reviewed, positives);
  }
  return curve;
}

// Documents whose first review precedes `reviewed_before` events and that are
// still negative: the re-review set after a knee stop.
inline std::vector<std::size_t> knee_recheck_set(const LabelHistory& history, std::size_t reviewed_before) {
  std::vector<std::size_t> out;
  std::vector<bool> seen(history.size(), false);
  const auto& ev = history.events();
  for (std::size_t k = 0; k < ev.size() && k < reviewed_before; ++k) {
    const auto d = ev[k].doc_id;
    if (seen[d]) continue;
    seen[d] = true;
    if (!history.positive(d) && history.event_count(d) == 1) out.push_back(d);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace harmless::correction
