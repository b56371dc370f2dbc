#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include "probid/auction_sim.hpp"
#include "probid/core_types.hpp"

using namespace probid;

namespace {

bool has_violation(const ValidationResult& r, const std::string& msg) {
  return std::any_of(r.violations.begin(), r.violations.end(), [&](const Violation& v) { return v.message == msg; });
}

Trajectory simple_trajectory(std::vector<double> costs, double budget) {
  std::vector<Step> steps;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    steps.push_back({static_cast<int>(i) + 1, StateVector{}, 1.0, 0.5, costs[i]});
  }
  return Trajectory::from_steps({budget, 2.0, 48, RewardMode::dense}, std::move(steps));
}

// Independent oracle: recursive include/exclude enumeration that tracks the
// best value only.
double brute_force_value(const AllocationInstance& inst) {
  double best = 0.0;
  std::function<void(std::size_t, double, double, double)> rec = [&](std::size_t i, double v, double c, double p) {
    if (i == inst.items.size()) {
      if (c <= inst.budget && c <= inst.ratio_cap * p) best = std::max(best, v);
      return;
    }
    rec(i + 1, v, c, p);
    const AllocationItem& it = inst.items[i];
    rec(i + 1, v + it.value, c + it.cost, p + it.conversion);
  };
  rec(0, 0.0, 0.0, 0.0);
  return best;
}

AllocationInstance random_instance(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AllocationInstance inst;
  for (std::size_t i = 0; i < n; ++i) {
    // Some exact zeros exercise the zero-cost and zero-conversion branches.
    const double c = u(rng) < 0.1 ? 0.0 : 3.0 * u(rng);
    const double p = u(rng) < 0.1 ? 0.0 : u(rng);
    inst.items.push_back({2.0 * u(rng), c, p});
  }
  inst.budget = 0.5 + 0.4 * static_cast<double>(n) * u(rng);
  inst.ratio_cap = 0.5 + 3.0 * u(rng);
  return inst;
}

}  // namespace

TEST(ValidateTrajectory, EmptyTrajectory) {
  const Trajectory t = Trajectory::from_steps({10.0, 1.0, 48, RewardMode::dense}, {});
  EXPECT_TRUE(has_violation(validate_trajectory(t), "empty trajectory"));
}

TEST(ValidateTrajectory, BudgetExceededAtBoundary) {
  const Trajectory t = simple_trajectory({0.5, 0.500001}, 1.0);
  const ValidationResult r = validate_trajectory(t);
  EXPECT_TRUE(has_violation(r, "budget exceeded"));
  EXPECT_TRUE(has_violation(r, "step cost exceeds remaining budget"));
  EXPECT_EQ(r.violations.front().step, 2);
}

TEST(ValidateTrajectory, GeneratedEpisodeIsValid) {
  MarketModel market;
  market.seed = 17;
  const Trajectory t =
      run_episode([](const StateVector&, const EpisodeContext&) { return 12.0; }, {800.0, 8.0, 48, RewardMode::dense}, market);
  EXPECT_EQ(t.length(), 48);
  EXPECT_TRUE(validate_trajectory(t).ok());
}

TEST(ValidateTrajectory, ReportsFieldViolationsWithSteps) {
  Trajectory t = simple_trajectory({0.1, 0.1, 0.1}, 10.0);
  t.steps[1].action = -1.0;
  t.steps[2].index = 7;
  t.steps[0].state[3] = std::numeric_limits<double>::infinity();
  t.total_reward += 1.0;
  const ValidationResult r = validate_trajectory(t);
  EXPECT_TRUE(has_violation(r, "negative or non-finite action"));
  EXPECT_TRUE(has_violation(r, "step index out of sequence"));
  EXPECT_TRUE(has_violation(r, "non-finite state feature"));
  EXPECT_TRUE(has_violation(r, "total_reward does not match step rewards"));
  Trajectory longer = simple_trajectory(std::vector<double>(5, 0.1), 10.0);
  longer.campaign.horizon = 4;
  EXPECT_TRUE(has_violation(validate_trajectory(longer), "trajectory longer than horizon"));
}

TEST(ValidateTrajectory, RealizedRatio) {
  const Trajectory t = simple_trajectory({1.0, 2.0}, 10.0);
  EXPECT_DOUBLE_EQ(t.realized_ratio(), 3.0);
  const Trajectory none = Trajectory::from_steps({10.0, 1.0, 48, RewardMode::dense}, {{1, {}, 0.0, 0.0, 0.0}});
  EXPECT_TRUE(std::isinf(none.realized_ratio()));
}

TEST(CampaignConfig, Validation) {
  EXPECT_THROW((CampaignConfig{0.0, 1.0, 48, RewardMode::dense}.validate()), ConfigError);
  EXPECT_THROW((CampaignConfig{1.0, -1.0, 48, RewardMode::dense}.validate()), ConfigError);
  EXPECT_THROW((CampaignConfig{1.0, 1.0, 0, RewardMode::dense}.validate()), ConfigError);
  EXPECT_EQ(parse_reward_mode("sparse"), RewardMode::sparse);
  EXPECT_THROW(parse_reward_mode("medium"), ConfigError);
}

TEST(Allocation, WorkedExample) {
  const AllocationInstance inst{{{1, 1, 1}, {2, 3, 1}}, 3.0, 2.0};
  const AllocationResult exact = solve_allocation_exact(inst);
  EXPECT_EQ(exact.selection, (std::vector<bool>{true, false}));
  EXPECT_EQ(exact.value, 1.0);
  const AllocationResult greedy = solve_allocation_greedy(inst);
  EXPECT_EQ(greedy.selection, exact.selection);
  EXPECT_EQ(greedy.value, 1.0);
}

TEST(Allocation, ZeroCostItemAlwaysSelected) {
  const AllocationInstance inst{{{1, 0, 0}}, 0.0, 0.0};
  EXPECT_EQ(solve_allocation_exact(inst).value, 1.0);
  EXPECT_EQ(solve_allocation_greedy(inst).value, 1.0);
}

TEST(Allocation, ZeroBudgetSelectsNothing) {
  const AllocationInstance inst{{{1, 1, 1}, {5, 0.5, 1}}, 0.0, 10.0};
  const AllocationResult r = solve_allocation_exact(inst);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.selection, (std::vector<bool>{false, false}));
}

TEST(Allocation, GreedyIdenticalItems) {
  AllocationInstance inst;
  inst.items.assign(8, {1, 1, 1});
  inst.budget = 5.0;
  inst.ratio_cap = 2.0;
  const AllocationResult g = solve_allocation_greedy(inst);
  EXPECT_EQ(g.value, 5.0);
  EXPECT_EQ(std::count(g.selection.begin(), g.selection.end(), true), 5);
}

TEST(Allocation, SingleFeasibleItemSelectedByGreedy) {
  const AllocationInstance inst{{{3, 1, 1}}, 2.0, 2.0};
  EXPECT_EQ(solve_allocation_greedy(inst).selection, std::vector<bool>{true});
}

TEST(Allocation, TieBreakIsLexicographicallySmallest) {
  // Items 1 and 2 are interchangeable; only one fits.
  const AllocationInstance inst{{{1, 1, 1}, {1, 1, 1}}, 1.0, 5.0};
  EXPECT_EQ(solve_allocation_exact(inst).selection, (std::vector<bool>{false, true}));
}

TEST(Allocation, ExactMatchesEnumerationOracle) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 12);
    const AllocationInstance inst = random_instance(n, rng);
    const AllocationResult exact = solve_allocation_exact(inst);
    EXPECT_EQ(exact.value, brute_force_value(inst)) << "trial " << trial;
    EXPECT_TRUE(allocation_feasible(inst, exact.selection));
    const AllocationResult greedy = solve_allocation_greedy(inst);
    EXPECT_TRUE(allocation_feasible(inst, greedy.selection));
    EXPECT_LE(greedy.value, exact.value + 1e-12);
  }
}

TEST(Allocation, PermutationInvariantValue) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const AllocationInstance inst = random_instance(9, rng);
    std::vector<std::size_t> perm(inst.items.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    AllocationInstance shuffled = inst;
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled.items[i] = inst.items[perm[i]];
    EXPECT_NEAR(solve_allocation_exact(shuffled).value, solve_allocation_exact(inst).value, 1e-12);
  }
}

TEST(Allocation, ScalingKeepsSelection) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const AllocationInstance inst = random_instance(10, rng);
    AllocationInstance scaled = inst;
    for (auto& it : scaled.items) {
      it.value *= 4.0;
      it.cost *= 4.0;
    }
    scaled.budget *= 4.0;
    scaled.ratio_cap *= 4.0;
    EXPECT_EQ(solve_allocation_exact(scaled).selection, solve_allocation_exact(inst).selection);
  }
}

TEST(Allocation, RejectsOversizedInstances) {
  AllocationInstance inst;
  inst.items.assign(kMaxExactItems + 1, {1, 1, 1});
  inst.budget = 1.0;
  inst.ratio_cap = 1.0;
  EXPECT_THROW(solve_allocation_exact(inst), SizeError);
}
