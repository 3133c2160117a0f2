#pragma once

// Repeated end-to-end simulations against ground truth, the no-learning
// baselines, and the summary tables built from them.
//
//   recall     = |L_R & R| / |R|
//   cost       = review events / |E|   (re-reviews counted)
//   estimation = R_E / |R|

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "harmless/config.hpp"
#include "harmless/corpus.hpp"
#include "harmless/engine.hpp"
#include "harmless/estimator.hpp"
#include "harmless/features.hpp"
#include "harmless/oracle.hpp"
#include "harmless/stats.hpp"
#include "harmless/text.hpp"

namespace harmless::sim {

inline const std::vector<int>& default_targets() {
  static const std::vector<int> targets = {60, 70, 80, 85, 90, 95, 99, 100};
  return targets;
}

struct RoundPoint {
  int round = 0;
  std::size_t reviewed = 0;   // review events
  std::size_t labeled = 0;    // |L|
  std::size_t positives = 0;  // |L_R|
  std::size_t true_found = 0; // |L_R & R|
  std::optional<double> estimate;
  double cost = 0.0;
  double recall = 0.0;
  std::optional<double> estimation;

  bool operator==(const RoundPoint&) const = default;
};

struct RunMetrics {
  std::vector<RoundPoint> series;
  std::map<int, std::optional<double>> cost_at;  // target percent -> cost, nullopt = unreachable
  double final_recall = 0.0;
  double final_cost = 0.0;
  bool stopped_by_rule = false;
  std::size_t true_positives = 0;
  std::uint64_t seed = 0;

  bool operator==(const RunMetrics&) const = default;
};

inline void fill_cost_at(RunMetrics& run, const std::vector<int>& targets) {
  run.cost_at.clear();
  for (int t : targets) {
    std::optional<double> cost;
    const double goal = t / 100.0 - 1e-12;
    for (const auto& p : run.series) {
      if (p.recall >= goal) {
        cost = p.cost;
        break;
      }
    }
    run.cost_at[t] = cost;
  }
  if (!run.series.empty()) {
    run.final_recall = run.series.back().recall;
    run.final_cost = run.series.back().cost;
  }
}

inline std::uint64_t oracle_seed_for(std::uint64_t session_seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(session_seed), static_cast<std::uint32_t>(session_seed >> 32),
                    0x5eedU};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// One full engine run. `oracle.seed` is used as given.
inline RunMetrics run_once(const Corpus& corpus, const FeatureMatrix& matrix, const std::string& category,
                           const SessionConfig& config, const OracleConfig& oracle_config,
                           const std::vector<int>& targets = default_targets()) {
  const auto& truth = corpus.positives(category);
  if (truth.empty()) throw ConfigError("category", "category '" + category + "' has no true positives");
  Session session(corpus, matrix, config, truth.size());
  SimulatedOracle oracle(corpus, category, oracle_config);
  RunMetrics run;
  run.true_positives = truth.size();
  run.seed = config.seed;
  const double n_docs = static_cast<double>(corpus.size());
  const double n_true = static_cast<double>(truth.size());
  std::size_t found = 0;
  std::vector<bool> counted(corpus.size(), false);
  while (!session.stopped()) {
    const auto report = session.run_round([&](const QueueItem& item, const std::string&) { return oracle(item.doc_id); });
    for (std::size_t d : truth) {
      if (!counted[d] && session.history().positive(d)) {
        counted[d] = true;
        ++found;
      }
    }
    RoundPoint p;
    p.round = report.round;
    p.reviewed = report.events;
    p.labeled = report.labeled;
    p.positives = report.positives;
    p.true_found = found;
    p.estimate = report.estimate;
    p.cost = static_cast<double>(report.events) / n_docs;
    p.recall = static_cast<double>(found) / n_true;
    if (report.estimate) p.estimation = *report.estimate / n_true;
    run.series.push_back(p);
    if (report.stop) run.stopped_by_rule = !report.exhausted;
  }
  fill_cost_at(run, targets);
  return run;
}

// Runs `repeats` independent simulations with session seed base_seed + r.
// Repeats are spread over `threads` workers (0 = hardware concurrency).
inline std::vector<RunMetrics> run_simulation(const Corpus& corpus, const FeatureMatrix& matrix,
                                              const std::string& category, const SessionConfig& config,
                                              const OracleConfig& oracle_config, int repeats,
                                              const std::vector<int>& targets = default_targets(),
                                              unsigned threads = 0) {
  if (repeats < 1) throw ArgumentError("run_simulation: repeats must be >= 1");
  if (corpus.positives(category).empty())
    throw ConfigError("category", "category '" + category + "' has no true positives");
  std::vector<RunMetrics> runs(static_cast<std::size_t>(repeats));
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr error;
  auto worker = [&] {
    while (true) {
      const int r = next.fetch_add(1);
      if (r >= repeats) return;
      try {
        SessionConfig c = config;
        c.seed = config.seed + static_cast<std::uint64_t>(r);
        OracleConfig o = oracle_config;
        o.seed = oracle_seed_for(c.seed);
        runs[static_cast<std::size_t>(r)] = run_once(corpus, matrix, category, c, o, targets);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(repeats));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return runs;
}

enum class BaselineMode { random, crash };

// No-learning baselines: a fixed inspection order consumed in batches of n1.
// Random order reports the uniform-sampling estimate |E| |L_R| / |L|. Crash
// order covers only files with a nonzero crash count; targets beyond its
// coverage are unreachable.
inline RunMetrics run_baseline(const Corpus& corpus, const std::string& category, BaselineMode mode, std::uint64_t seed,
                               std::size_t n1 = 100, const std::vector<int>& targets = default_targets()) {
  const auto& truth = corpus.positives(category);
  if (truth.empty()) throw ConfigError("category", "category '" + category + "' has no true positives");
  if (n1 == 0) throw ArgumentError("run_baseline: n1 must be >= 1");
  std::vector<std::size_t> order;
  if (mode == BaselineMode::random) {
    order.resize(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    if (!corpus.has_crash_counts()) throw ConfigError("mode", "crash baseline requires crash counts");
    for (const auto& d : corpus.documents)
      if (d.crash_count.value_or(0) > 0) order.push_back(d.doc_id);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return corpus.documents[a].crash_count.value_or(0) > corpus.documents[b].crash_count.value_or(0);
    });
  }
  RunMetrics run;
  run.true_positives = truth.size();
  run.seed = seed;
  const double n_docs = static_cast<double>(corpus.size());
  const double n_true = static_cast<double>(truth.size());
  std::size_t found = 0;
  int round = 0;
  for (std::size_t start = 0; start < order.size(); start += n1, ++round) {
    const std::size_t end = std::min(order.size(), start + n1);
    for (std::size_t k = start; k < end; ++k) found += truth.count(order[k]);
    RoundPoint p;
    p.round = round;
    p.reviewed = p.labeled = end;
    p.positives = p.true_found = found;
    p.cost = static_cast<double>(end) / n_docs;
    p.recall = static_cast<double>(found) / n_true;
    if (mode == BaselineMode::random) {
      p.estimate = estimator::uniform_random_estimate(corpus.size(), end, found);
      p.estimation = *p.estimate / n_true;
    }
    run.series.push_back(p);
  }
  fill_cost_at(run, targets);
  return run;
}

inline std::vector<RunMetrics> run_baselines(const Corpus& corpus, const std::string& category, BaselineMode mode,
                                             int repeats, std::uint64_t base_seed, std::size_t n1 = 100,
                                             const std::vector<int>& targets = default_targets()) {
  std::vector<RunMetrics> runs;
  for (int r = 0; r < repeats; ++r)
    runs.push_back(run_baseline(corpus, category, mode, base_seed + static_cast<std::uint64_t>(r), n1, targets));
  return runs;
}

// --- summaries ---

struct Cell {
  double median = 0.0;
  double iqr = 0.0;
};

inline Cell cell_of(const std::vector<double>& values) { return {stats::median(values), stats::iqr(values)}; }

// "20 (2)": median and IQR as whole percentages.
inline std::string format_cell(const std::optional<Cell>& c) {
  if (!c) return "n/a";
  std::ostringstream out;
  out << std::lround(c->median * 100.0) << " (" << std::lround(c->iqr * 100.0) << ")";
  return out.str();
}

struct Summary {
  std::map<int, std::optional<Cell>> cost_at;  // nullopt when any run misses the target
  Cell final_recall;
  Cell final_cost;
  std::size_t runs = 0;
};

inline Summary summarize(const std::vector<RunMetrics>& runs) {
  if (runs.empty()) throw ArgumentError("summarize: no runs");
  Summary s;
  s.runs = runs.size();
  for (const auto& [target, _] : runs.front().cost_at) {
    std::vector<double> costs;
    bool all = true;
    for (const auto& r : runs) {
      auto it = r.cost_at.find(target);
      if (it == r.cost_at.end() || !it->second) {
        all = false;
        break;
      }
      costs.push_back(*it->second);
    }
    s.cost_at[target] = all ? std::optional<Cell>(cell_of(costs)) : std::nullopt;
  }
  std::vector<double> recalls, costs;
  for (const auto& r : runs) {
    recalls.push_back(r.final_recall);
    costs.push_back(r.final_cost);
  }
  s.final_recall = cell_of(recalls);
  s.final_cost = cell_of(costs);
  return s;
}

struct Relative {
  Cell recall;  // observed / baseline median
  Cell cost;
};

// Per-run final recall and cost divided by the baseline runs' medians.
inline Relative relative_to(const std::vector<RunMetrics>& observed, const std::vector<RunMetrics>& baseline) {
  const auto base = summarize(baseline);
  if (base.final_recall.median <= 0.0 || base.final_cost.median <= 0.0)
    throw ArgumentError("relative_to: baseline medians must be positive");
  std::vector<double> rr, rc;
  for (const auto& r : observed) {
    rr.push_back(r.final_recall / base.final_recall.median);
    rc.push_back(r.final_cost / base.final_cost.median);
  }
  return {cell_of(rr), cell_of(rc)};
}

// Share of injected false negatives recovered, from a relative recall at
// human false-negative rate e.
inline double false_negative_coverage(double relative_recall, double error_rate) {
  return (relative_recall - (1.0 - error_rate)) / ((1.0 - error_rate) * error_rate);
}

// --- files ---

inline void write_run_csv(const RunMetrics& run, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << std::setprecision(10);
  out << "round,reviewed,labeled,positives,true_found,estimate,cost,recall,estimation\n";
  for (const auto& p : run.series) {
    out << p.round << ',' << p.reviewed << ',' << p.labeled << ',' << p.positives << ',' << p.true_found << ',';
    if (p.estimate) out << *p.estimate;
    out << ',' << p.cost << ',' << p.recall << ',';
    if (p.estimation) out << *p.estimation;
    out << '\n';
  }
  if (!out) throw IngestError("cannot write " + path.string());
}

inline RunMetrics read_run_csv(const std::filesystem::path& path, const std::vector<int>& targets = default_targets()) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto records = text::parse_csv(ss.str());
  if (records.empty()) throw IngestError(path.string() + ": empty run file");
  RunMetrics run;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& f = records[r].fields;
    if (f.size() != 9) throw IngestError(path.string() + " line " + std::to_string(records[r].line) + ": expected 9 fields");
    try {
      RoundPoint p;
      p.round = std::stoi(f[0]);
      p.reviewed = std::stoull(f[1]);
      p.labeled = std::stoull(f[2]);
      p.positives = std::stoull(f[3]);
      p.true_found = std::stoull(f[4]);
      if (!f[5].empty()) p.estimate = std::stod(f[5]);
      p.cost = std::stod(f[6]);
      p.recall = std::stod(f[7]);
      if (!f[8].empty()) p.estimation = std::stod(f[8]);
      run.series.push_back(p);
    } catch (const std::exception&) {
      throw IngestError(path.string() + " line " + std::to_string(records[r].line) + ": malformed value");
    }
  }
  fill_cost_at(run, targets);
  return run;
}

inline void write_summary_csv(const Summary& s, const std::filesystem::path& path,
                              const std::optional<Relative>& relative = std::nullopt) {
  std::ofstream out(path);
  out << std::setprecision(10);
  out << "metric,target,median,iqr,cell\n";
  for (const auto& [t, c] : s.cost_at) {
    out << "cost_at_recall," << t << ',';
    if (c) out << c->median << ',' << c->iqr << ',' << format_cell(c) << '\n';
    else out << ",,n/a\n";
  }
  out << "final_recall,," << s.final_recall.median << ',' << s.final_recall.iqr << ',' << format_cell(s.final_recall)
      << '\n';
  out << "final_cost,," << s.final_cost.median << ',' << s.final_cost.iqr << ',' << format_cell(s.final_cost) << '\n';
  if (relative) {
    out << "relative_recall,," << relative->recall.median << ',' << relative->recall.iqr << ','
        << format_cell(relative->recall) << '\n';
    out << "relative_cost,," << relative->cost.median << ',' << relative->cost.iqr << ','
        << format_cell(relative->cost) << '\n';
  }
  if (!out) throw IngestError("cannot write " + path.string());
}

// Estimation-vs-cost line plot, one polyline per run plus the y = 1 line.
inline void write_estimation_svg(const std::vector<RunMetrics>& runs, const std::filesystem::path& path) {
  constexpr double W = 640, H = 400, M = 50;
  double y_max = 2.0;
  for (const auto& r : runs)
    for (const auto& p : r.series)
      if (p.estimation) y_max = std::max(y_max, std::min(*p.estimation, 10.0));
  auto sx = [&](double c) { return M + std::min(c, 1.0) * (W - 2 * M); };
  auto sy = [&](double e) { return H - M - std::min(e, y_max) / y_max * (H - 2 * M); };
  std::ofstream out(path);
  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << M << "\" y1=\"" << H - M << "\" x2=\"" << W - M << "\" y2=\"" << H - M
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << M << "\" y1=\"" << M << "\" x2=\"" << M << "\" y2=\"" << H - M << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << M << "\" y1=\"" << sy(1.0) << "\" x2=\"" << W - M << "\" y2=\"" << sy(1.0)
      << "\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">cost</text>\n";
  out << "<text x=\"15\" y=\"" << H / 2 << "\" transform=\"rotate(-90 15 " << H / 2
      << ")\" text-anchor=\"middle\">estimation</text>\n";
  for (const auto& r : runs) {
    out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-opacity=\"0.5\" points=\"";
    for (const auto& p : r.series)
      if (p.estimation) out << sx(p.cost) << ',' << sy(*p.estimation) << ' ';
    out << "\"/>\n";
  }
  out << "</svg>\n";
  if (!out) throw IngestError("cannot write " + path.string());
}

}  // namespace harmless::sim
