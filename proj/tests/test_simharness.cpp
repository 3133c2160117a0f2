#include <catch_amalgamated.hpp>

#include "harmless/simharness.hpp"
#include "harmless/synthetic.hpp"
#include "support.hpp"

using namespace harmless;
using namespace harmless::sim;
using Catch::Approx;

namespace {

Corpus synth(std::size_t docs, double rate, std::uint64_t seed) {
  synthetic::Options opt;
  opt.documents = docs;
  opt.positive_rate = rate;
  opt.seed = seed;
  return synthetic::generate(opt);
}

}  // namespace

TEST_CASE("percentiles and cells") {
  const std::vector<double> v = {10, 12, 14};
  CHECK(stats::median(v) == 12.0);
  CHECK(stats::iqr(v) == 2.0);
  CHECK(stats::percentile({1, 2, 3, 4}, 0.25) == Approx(1.75));
  CHECK(stats::iqr({0.42}) == 0.0);
  CHECK(format_cell(Cell{0.20, 0.02}) == "20 (2)");
  CHECK(format_cell(std::nullopt) == "n/a");
}

TEST_CASE("relative metrics and false-negative coverage") {
  CHECK(0.74 / 0.96 == Approx(0.7708).epsilon(1e-3));
  CHECK(false_negative_coverage(0.74, 0.5) == Approx(0.96));
  CHECK(false_negative_coverage(0.5, 0.5) == Approx(0.0));
  CHECK(false_negative_coverage(1.0, 0.5) == Approx(2.0));

  RunMetrics base1, base2, obs;
  base1.final_recall = 0.96;
  base1.final_cost = 0.2;
  base2 = base1;
  obs.final_recall = 0.74;
  obs.final_cost = 0.3;
  const auto rel = relative_to({obs}, {base1, base2});
  CHECK(rel.recall.median == Approx(0.74 / 0.96));
  CHECK(rel.cost.median == Approx(1.5));
}

TEST_CASE("cost at target uses the first round reaching it") {
  RunMetrics r;
  r.series = {{0, 10, 10, 1, 1, {}, 0.1, 0.5, {}}, {1, 20, 20, 2, 2, {}, 0.2, 0.8, {}},
              {2, 30, 30, 2, 2, {}, 0.3, 0.8, {}}};
  fill_cost_at(r, {50, 80, 90});
  CHECK(*r.cost_at[50] == 0.1);
  CHECK(*r.cost_at[80] == 0.2);
  CHECK_FALSE(r.cost_at[90].has_value());
  CHECK(r.final_recall == 0.8);
  CHECK(r.final_cost == 0.3);
  const auto s = summarize({r, r});
  CHECK_FALSE(s.cost_at.at(90).has_value());
  CHECK(s.cost_at.at(80)->median == 0.2);
}

TEST_CASE("random baseline is roughly linear") {
  const auto corpus = synth(1000, 0.05, 21);
  const auto runs = run_baselines(corpus, "All", BaselineMode::random, 30, 100, 10);
  const auto s = summarize(runs);
  for (int t : {60, 80}) {
    REQUIRE(s.cost_at.at(t).has_value());
    CHECK(std::abs(s.cost_at.at(t)->median - t / 100.0) <= 0.06);
  }
  for (const auto& r : runs) {
    CHECK(r.final_recall == 1.0);
    CHECK(r.final_cost == 1.0);
    for (const auto& p : r.series) REQUIRE(p.estimation.has_value());
  }
}

TEST_CASE("crash baseline") {
  SECTION("perfect ordering finds all positives first") {
    const auto corpus = test_support::make_corpus({"a", "b", "c", "d", "e", "f"}, {1, 4}, {0, 9, 1, 0, 7, 0});
    const auto run = run_baseline(corpus, "All", BaselineMode::crash, 0, 2);
    REQUIRE(run.cost_at.at(100).has_value());
    CHECK(*run.cost_at.at(100) == Approx(2.0 / 6.0));
    CHECK(run.series.size() == 2);
    CHECK_FALSE(run.series.front().estimation.has_value());
  }
  SECTION("targets beyond crash coverage are unreachable") {
    const auto corpus = test_support::make_corpus({"a", "b", "c", "d"}, {0, 1, 2}, {3, 0, 0, 1});
    const auto run = run_baseline(corpus, "All", BaselineMode::crash, 0, 1);
    CHECK(run.final_recall == Approx(1.0 / 3.0));
    CHECK_FALSE(run.cost_at.at(60).has_value());
    CHECK(format_cell(summarize({run}).cost_at.at(60)) == "n/a");
  }
  SECTION("needs crash counts") {
    const auto corpus = test_support::make_corpus({"a", "b"}, {0});
    CHECK_THROWS_AS(run_baseline(corpus, "All", BaselineMode::crash, 0), ConfigError);
  }
}

TEST_CASE("simulations are deterministic and validated") {
  const auto corpus = synth(300, 0.07, 5);
  const auto matrix = featurize(corpus, FeatureMode::text, 300);
  SessionConfig c;
  c.n1 = 20;
  c.seed = 9;
  const auto a = run_simulation(corpus, matrix, "All", c, {0.2, 0}, 2, default_targets(), 1);
  const auto b = run_simulation(corpus, matrix, "All", c, {0.2, 0}, 2, default_targets(), 2);
  CHECK(a == b);
  CHECK(a[0].seed == 9);
  CHECK(a[1].seed == 10);
  CHECK_THROWS_AS(run_simulation(corpus, matrix, "Nothing", c, {0.0, 0}, 1), ConfigError);
  CHECK_THROWS_AS(run_simulation(corpus, matrix, "All", c, {0.0, 0}, 0), ArgumentError);
  CHECK_THROWS_AS(run_baseline(corpus, "Nothing", BaselineMode::random, 0), ConfigError);

  for (const auto& r : a) {
    double prev_recall = 0.0;
    for (const auto& p : r.series) {
      CHECK(p.recall >= prev_recall);
      prev_recall = p.recall;
      if (p.estimate) CHECK(*p.estimate >= static_cast<double>(p.positives) - 1e-9);
      CHECK(p.true_found <= p.positives);
    }
  }
}

TEST_CASE("active learning beats random order on a small corpus") {
  const auto corpus = synth(200, 0.1, 17);
  const auto matrix = featurize(corpus, FeatureMode::text, 300);
  SessionConfig c;
  c.n1 = 10;
  c.seed = 1;
  c.stop_rule = StopRule::none;
  const auto engine = summarize(run_simulation(corpus, matrix, "All", c, {0.0, 0}, 5, {100}, 1));
  const auto random = summarize(run_baselines(corpus, "All", BaselineMode::random, 30, 1, 10, {100}));
  REQUIRE(engine.cost_at.at(100).has_value());
  REQUIRE(random.cost_at.at(100).has_value());
  CHECK(engine.cost_at.at(100)->median < random.cost_at.at(100)->median);
}

TEST_CASE("run CSV round trip and summary output") {
  const auto corpus = synth(200, 0.1, 4);
  const auto runs = run_baselines(corpus, "All", BaselineMode::random, 3, 8, 25);
  test_support::TempDir dir;
  write_run_csv(runs[0], dir / "run.csv");
  const auto back = read_run_csv(dir / "run.csv");
  REQUIRE(back.series.size() == runs[0].series.size());
  for (std::size_t i = 0; i < back.series.size(); ++i) {
    CHECK(back.series[i].reviewed == runs[0].series[i].reviewed);
    CHECK(back.series[i].recall == Approx(runs[0].series[i].recall));
    CHECK(back.series[i].estimation.has_value() == runs[0].series[i].estimation.has_value());
  }
  CHECK(back.cost_at == runs[0].cost_at);

  test_support::write_file(dir / "bad.csv", "header\n1,2,3\n");
  CHECK_THROWS_AS(read_run_csv(dir / "bad.csv"), IngestError);

  const auto s = summarize(runs);
  write_summary_csv(s, dir / "summary.csv", relative_to(runs, runs));
  std::ifstream in(dir / "summary.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "metric,target,median,iqr,cell");
  write_estimation_svg(runs, dir / "est.svg");
  CHECK(std::filesystem::file_size(dir / "est.svg") > 0);
}
