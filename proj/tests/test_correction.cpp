#include <catch_amalgamated.hpp>

#include "harmless/correction.hpp"

using namespace harmless;
using namespace harmless::correction;
using Catch::Approx;

namespace {

ReviewEvent ev(std::size_t doc, Verdict v, const std::string& reviewer = "r1",
               Purpose p = Purpose::inspect) {
  return {doc, reviewer, v, p, 1};
}

std::vector<std::pair<double, double>> knee_curve() {
  std::vector<std::pair<double, double>> c;
  for (int x = 0; x <= 100; ++x) c.emplace_back(x, std::min(x, 10));
  return c;
}

}  // namespace

TEST_CASE("dispute selects the top candidates") {
  const std::vector<double> decisions = {0.7, -0.3, 0.9};  // a, b, c
  CHECK(dispute_select(decisions, {0, 1, 2}, 2) == std::vector<std::size_t>{2, 0});
  CHECK(dispute_select(decisions, {0, 1, 2}, 0).empty());
  CHECK(dispute_select(decisions, {}, 5).empty());
  CHECK(dispute_select(decisions, {1, 0}, 5) == std::vector<std::size_t>{0, 1});
  const std::vector<double> tied = {0.5, 0.5, 0.5};
  CHECK(dispute_select(tied, {2, 0, 1}, 2) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("dispute plan uses singly-inspected negatives only") {
  LabelHistory h(5);
  h.add(ev(0, Verdict::non_vulnerable));
  h.add(ev(1, Verdict::vulnerable));
  h.add(ev(2, Verdict::non_vulnerable));
  h.add(ev(2, Verdict::non_vulnerable, "r2", Purpose::double_check));
  h.add(ev(3, Verdict::non_vulnerable));
  const std::vector<double> decisions = {0.1, 5.0, 4.0, 0.3, 9.0};
  const auto plan = dispute_plan(decisions, h, 10, false);
  CHECK(plan.double_check_queue == std::vector<PlannedCheck>{{3, 1}, {0, 1}});
  const auto plan3 = dispute_plan(decisions, h, 1, true);
  CHECK(plan3.double_check_queue == std::vector<PlannedCheck>{{3, 2}});
  for (const auto& c : plan.double_check_queue) CHECK_FALSE(h.positive(c.doc_id));
  CHECK_FALSE(plan.stop_override.has_value());
}

TEST_CASE("two-person queue") {
  LabelHistory h(6);
  h.add(ev(0, Verdict::non_vulnerable));
  h.add(ev(1, Verdict::non_vulnerable));
  h.add(ev(2, Verdict::non_vulnerable));
  CHECK(two_person_queue(h) == std::vector<std::size_t>{0, 1, 2});
  h.add(ev(1, Verdict::non_vulnerable, "r2", Purpose::double_check));
  h.add(ev(3, Verdict::vulnerable));
  CHECK(two_person_queue(h) == std::vector<std::size_t>{0, 2});
}

TEST_CASE("history never flips a positive back") {
  LabelHistory h(2);
  h.add(ev(0, Verdict::non_vulnerable));
  CHECK_FALSE(h.positive(0));
  h.add(ev(0, Verdict::vulnerable, "r2", Purpose::double_check));
  CHECK(h.positive(0));
  h.add(ev(0, Verdict::non_vulnerable, "r3", Purpose::double_check));
  CHECK(h.positive(0));
  CHECK(h.positive_count() == 1);
  CHECK(h.reviewers(0) == std::set<std::string>{"r1", "r2", "r3"});
  CHECK_THROWS_AS(h.add(ev(9, Verdict::vulnerable)), ArgumentError);
}

TEST_CASE("knee rule") {
  SECTION("sharp knee") {
    const auto c = knee_curve();
    const auto r = knee_stop(c, 6.0);
    CHECK(c[r.inflection].first == 10.0);
    CHECK(r.ratio == Approx((10.0 / 10.0) / (1.0 / 90.0)).epsilon(1e-12));
    CHECK(r.ratio == Approx(90.0).epsilon(1e-12));
    CHECK(r.should_stop);
    CHECK_FALSE(knee_stop(c, 100.0).should_stop);
  }
  SECTION("linear curve") {
    std::vector<std::pair<double, double>> c;
    for (int x = 0; x <= 50; ++x) c.emplace_back(x, 0.5 * x);
    const auto r = knee_stop(c, 6.0);
    CHECK_FALSE(r.should_stop);
    CHECK(r.ratio < 6.0);
  }
  SECTION("too short") {
    const std::vector<std::pair<double, double>> two = {{0, 0}, {10, 5}};
    CHECK_FALSE(knee_stop(two, 6.0).should_stop);
    CHECK_FALSE(knee_stop({}, 6.0).should_stop);
  }
  SECTION("flat curve") {
    const std::vector<std::pair<double, double>> flat = {{0, 0}, {1, 0}, {2, 0}, {3, 0}};
    CHECK_FALSE(knee_stop(flat, 6.0).should_stop);
  }
}

TEST_CASE("recall curve and re-check set") {
  LabelHistory h(5);
  h.add(ev(0, Verdict::non_vulnerable));
  h.add(ev(1, Verdict::vulnerable));
  h.add(ev(2, Verdict::non_vulnerable));
  h.add(ev(0, Verdict::vulnerable, "r2", Purpose::double_check));
  h.add(ev(3, Verdict::non_vulnerable));
  const auto curve = recall_curve(h);
  const std::vector<std::pair<double, double>> expected = {{0, 0}, {1, 0}, {2, 1}, {3, 1}, {4, 2}, {5, 2}};
  CHECK(curve == expected);
  CHECK(knee_recheck_set(h, 3) == std::vector<std::size_t>{2});
  CHECK(knee_recheck_set(h, 5) == std::vector<std::size_t>{2, 3});
  CHECK(knee_recheck_set(h, 0).empty());
}
