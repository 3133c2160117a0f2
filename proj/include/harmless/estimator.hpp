#pragma once

// Recall estimation: the SEMI fixed-point estimator over classifier decision
// values, and the uniform-random-sampling baseline |E| * |L_R| / |L|.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "harmless/error.hpp"

namespace harmless::estimator {

// p(d) = sigmoid(slope * d + intercept)
struct LogisticFit {
  double slope = 0.0;
  double intercept = 0.0;
  int iterations = 0;
  bool converged = false;

  double operator()(double d) const noexcept {
    const double z = slope * d + intercept;
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }
};

struct LogisticOptions {
  double gradient_tolerance = 1e-6;
  int max_iterations = 1000;
};

namespace detail {

// log(1 + exp(z)) without overflow.
inline double softplus(double z) noexcept { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace detail

// Maximum-likelihood fit of a one-feature logistic regression by damped
// Newton iterations with backtracking. Convergence is declared when the
// gradient of the mean negative log-likelihood has norm below the tolerance.
// Sums run over the points in (d, y) order so the fit does not depend on the
// input order.
inline LogisticFit logistic_fit_1d(std::span<const double> d, std::span<const int> y,
                                   const LogisticOptions& opts = {}) {
  if (d.size() != y.size()) throw ArgumentError("logistic_fit_1d: length mismatch");
  const std::size_t n = d.size();
  std::size_t n_pos = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw ArgumentError("logistic_fit_1d: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(v);
  }
  if (n_pos == 0 || n_pos == n) throw TrainingError("logistic_fit_1d: both classes are required");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (d[a] != d[b]) return d[a] < d[b];
    return y[a] < y[b];
  });

  const double inv_n = 1.0 / static_cast<double>(n);
  auto loss = [&](double a, double c) {
    double s = 0.0;
    for (auto i : order) {
      const double z = a * d[i] + c;
      s += detail::softplus(z) - y[i] * z;
    }
    return s * inv_n;
  };

  LogisticFit fit;
  // Start from the intercept-only optimum.
  const double mean = static_cast<double>(n_pos) * inv_n;
  fit.intercept = std::log(mean / (1.0 - mean));
  double current = loss(fit.slope, fit.intercept);

  for (int it = 0; it < opts.max_iterations; ++it) {
    double ga = 0.0, gc = 0.0, haa = 0.0, hac = 0.0, hcc = 0.0;
    for (auto i : order) {
      const double p = fit(d[i]);
      const double r = p - y[i];
      const double w = p * (1.0 - p);
      ga += r * d[i];
      gc += r;
      haa += w * d[i] * d[i];
      hac += w * d[i];
      hcc += w;
    }
    ga *= inv_n;
    gc *= inv_n;
    haa *= inv_n;
    hac *= inv_n;
    hcc *= inv_n;
    fit.iterations = it;
    if (std::hypot(ga, gc) < opts.gradient_tolerance) {
      fit.converged = true;
      return fit;
    }
    // Levenberg damping keeps the step defined when the Hessian is near singular
    // (separable data drives p(1-p) towards zero).
    const double damp = 1e-12 + 1e-9 * (haa + hcc);
    const double a11 = haa + damp, a22 = hcc + damp;
    const double det = a11 * a22 - hac * hac;
    double da, dc;
    if (det > 0 && std::isfinite(det)) {
      da = -(a22 * ga - hac * gc) / det;
      dc = -(a11 * gc - hac * ga) / det;
    } else {
      da = -ga;
      dc = -gc;
    }
    double step = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const double na = fit.slope + step * da;
      const double nc = fit.intercept + step * dc;
      const double trial = loss(na, nc);
      if (trial <= current) {
        moved = trial < current || (na == fit.slope && nc == fit.intercept);
        fit.slope = na;
        fit.intercept = nc;
        current = trial;
        break;
      }
      step *= 0.5;
    }
    if (!moved) {
      // No descent possible at double precision; the gradient is as small as it gets.
      fit.iterations = it + 1;
      return fit;
    }
  }
  fit.iterations = opts.max_iterations;
  return fit;
}

// Assigns temporary positives among unlabeled candidates. `probabilities[k]`
// belongs to `unlabeled[k]`; `y` is indexed by document id. Candidates are
// visited by descending probability (ties: ascending id) while probability
// mass accumulates; each time the running count reaches the next integer
// target, the first candidate of the current window becomes positive and the
// window restarts.
inline void temporary_label(std::span<const double> probabilities, std::span<const std::size_t> unlabeled,
                            std::vector<int>& y) {
  if (probabilities.size() != unlabeled.size()) throw ArgumentError("temporary_label: length mismatch");
  std::vector<std::size_t> order(unlabeled.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (probabilities[a] != probabilities[b]) return probabilities[a] > probabilities[b];
    return unlabeled[a] < unlabeled[b];
  });
  double count = 0.0;
  double target = 1.0;
  bool window_open = false;
  std::size_t window_first = 0;
  for (auto k : order) {
    count += probabilities[k];
    if (!window_open) {
      window_first = unlabeled[k];
      window_open = true;
    }
    if (count >= target) {
      y[window_first] = 1;
      target += 1.0;
      window_open = false;
    }
  }
}

struct SemiOptions {
  int max_iterations = 50;
  // Clear temporary labels of unlabeled documents before each relabeling pass.
  bool reset_unlabeled = true;
  LogisticOptions logistic;
};

struct EstimatorTrace {
  std::vector<double> iterations;  // |R_E| after each pass
  double estimate = 0.0;
  bool converged = false;
};

// `decisions` holds the classifier's decision value for every document;
// `labeled` and `positive` are per-document flags (positive implies labeled).
inline EstimatorTrace semi_estimate(std::span<const double> decisions, const std::vector<bool>& labeled,
                                    const std::vector<bool>& positive, const SemiOptions& opts = {}) {
  const std::size_t n = decisions.size();
  if (labeled.size() != n || positive.size() != n) throw ArgumentError("semi_estimate: length mismatch");
  std::vector<int> y(n, 0);
  std::vector<std::size_t> unlabeled;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (positive[i]) {
      if (!labeled[i]) throw ArgumentError("semi_estimate: positive document is not labeled");
      y[i] = 1;
      ++n_pos;
    }
    if (!labeled[i]) unlabeled.push_back(i);
  }
  if (n_pos == 0) throw ArgumentError("semi_estimate: at least one labeled positive is required");

  EstimatorTrace trace;
  const double labeled_positives = static_cast<double>(n_pos);
  if (unlabeled.empty()) {
    trace.iterations.push_back(labeled_positives);
    trace.estimate = labeled_positives;
    trace.converged = true;
    return trace;
  }
  const auto [lo, hi] = std::minmax_element(decisions.begin(), decisions.end());
  if (*lo == *hi) {
    trace.estimate = labeled_positives;
    trace.converged = false;
    return trace;
  }

  double last = 0.0;
  double current = labeled_positives;
  std::vector<double> probs(unlabeled.size());
  for (int pass = 0; pass < opts.max_iterations && current != last; ++pass) {
    LogisticFit fit;
    try {
      fit = logistic_fit_1d(decisions, y, opts.logistic);
    } catch (const TrainingError&) {
      // Every document temporarily positive: nothing left to discriminate.
      trace.estimate = current;
      trace.converged = false;
      return trace;
    }
    for (std::size_t k = 0; k < unlabeled.size(); ++k) probs[k] = fit(decisions[unlabeled[k]]);
    if (opts.reset_unlabeled)
      for (auto i : unlabeled) y[i] = 0;
    temporary_label(probs, unlabeled, y);
    last = current;
    current = static_cast<double>(std::accumulate(y.begin(), y.end(), std::size_t{0}));
    trace.iterations.push_back(current);
  }
  trace.estimate = current;
  trace.converged = current == last;
  return trace;
}

inline double uniform_random_estimate(std::size_t pool_size, std::size_t labeled, std::size_t positives) {
  if (labeled == 0) throw ArgumentError("uniform_random_estimate: no labeled documents");
  return static_cast<double>(pool_size) * static_cast<double>(positives) / static_cast<double>(labeled);
}

}  // namespace harmless::estimator
