#include <gtest/gtest.h>

#include <random>

#include "probid/cdpr.hpp"
#include "probid/dataset.hpp"

using namespace probid;

namespace {

ObjectivePoint pt(double c, double r) { return {r, c, r, c}; }

// Independent O(n^2) dominance check.
std::vector<std::size_t> brute_force_frontier(const std::vector<ObjectivePoint>& p) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < p.size() && !dominated; ++j) {
      const bool weak = p[j].c_norm <= p[i].c_norm && p[j].r_norm >= p[i].r_norm;
      const bool strict = p[j].c_norm < p[i].c_norm || p[j].r_norm > p[i].r_norm;
      dominated = weak && strict;
    }
    if (!dominated) out.push_back(i);
  }
  return out;
}

Trajectory traj_with(std::vector<double> rewards, std::vector<double> costs, double target = 2.0, int horizon = 48) {
  std::vector<Step> steps;
  for (std::size_t i = 0; i < rewards.size(); ++i) steps.push_back({static_cast<int>(i) + 1, {}, 1.0, rewards[i], costs[i]});
  return Trajectory::from_steps({1e6, target, horizon, RewardMode::dense}, std::move(steps));
}

}  // namespace

TEST(DualStream, SuffixSums) {
  const DualStreamContext d = build_dual_stream(traj_with({1, 2, 3}, {0, 0, 0}));
  EXPECT_EQ(d.rtg, (std::vector<double>{6, 5, 3}));
  EXPECT_EQ(d.ctg, (std::vector<double>{0, 0, 0}));
}

TEST(DualStream, RecursionExactOnGeneratedData) {
  const Dataset data = generate_dataset(30, MarketModel{}, CampaignSampler{}, default_mixture(), 7);
  for (const Trajectory& t : data.trajectories) {
    const DualStreamContext d = build_dual_stream(t);
    const std::size_t n = t.steps.size();
    EXPECT_EQ(d.rtg[n - 1], t.steps[n - 1].reward);
    EXPECT_EQ(d.ctg[n - 1], t.steps[n - 1].cost);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      EXPECT_EQ(d.rtg[i], d.rtg[i + 1] + t.steps[i].reward);
      EXPECT_EQ(d.ctg[i], d.ctg[i + 1] + t.steps[i].cost);
    }
    EXPECT_NEAR(d.rtg[0], t.total_reward, 1e-9 * (1.0 + t.total_reward));
    EXPECT_NEAR(d.ctg[0], t.total_cost, 1e-9 * (1.0 + t.total_cost));
  }
}

TEST(Pareto, IncomparablePair) {
  // Cheap and low-return versus expensive and high-return.
  const std::vector<ObjectivePoint> p{pt(0.1, 0.1), pt(0.9, 0.9)};
  EXPECT_EQ(pareto_frontier(p), (std::vector<std::size_t>{0, 1}));
  const std::vector<ObjectivePoint> q{pt(0.1, 0.9), pt(0.9, 0.1)};
  EXPECT_EQ(pareto_frontier(q), std::vector<std::size_t>{0});
}

TEST(Pareto, StrictlyCheaperEqualReturnDominates) {
  const std::vector<ObjectivePoint> p{pt(0.1, 0.9), pt(0.2, 0.9)};
  EXPECT_EQ(pareto_frontier(p), std::vector<std::size_t>{0});
}

TEST(Pareto, DuplicatesRetained) {
  const std::vector<ObjectivePoint> p{pt(0.3, 0.5), pt(0.3, 0.5), pt(0.4, 0.4)};
  EXPECT_EQ(pareto_frontier(p), (std::vector<std::size_t>{0, 1}));
}

TEST(Pareto, MatchesBruteForce) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ObjectivePoint> p;
    for (int i = 0; i < 200; ++i) {
      // Coarse grid on half the trials produces ties on both axes.
      double c = u(rng), r = u(rng);
      if (trial % 2) {
        c = std::round(c * 8) / 8;
        r = std::round(r * 8) / 8;
      }
      p.push_back(pt(c, r));
    }
    const auto f = pareto_frontier(p);
    EXPECT_EQ(f, brute_force_frontier(p)) << "trial " << trial;
    for (std::size_t a : f) {
      for (std::size_t b : f) {
        EXPECT_FALSE(p[a].c_norm <= p[b].c_norm && p[a].r_norm >= p[b].r_norm &&
                     (p[a].c_norm < p[b].c_norm || p[a].r_norm > p[b].r_norm));
      }
    }
  }
}

TEST(Pareto, NormalizationRangeAndConstantAxis) {
  std::vector<Trajectory> data{traj_with({1}, {5}), traj_with({3}, {5}), traj_with({2}, {5})};
  const auto p = objective_points(data);
  EXPECT_EQ(p[0].r_norm, 0.0);
  EXPECT_EQ(p[1].r_norm, 1.0);
  EXPECT_EQ(p[2].r_norm, 0.5);
  for (const auto& q : p) EXPECT_EQ(q.c_norm, 0.0);
  EXPECT_EQ(pareto_frontier(p), std::vector<std::size_t>{1});
}

TEST(Scores, Efficiency) {
  const std::vector<ObjectivePoint> front{pt(0.0, 1.0), pt(0.5, 1.0)};
  EXPECT_EQ(efficiency_score(front[0], front, 5.0), 1.0);
  EXPECT_NEAR(efficiency_score(pt(0.0, 0.5), front, 1.0), 0.6065306597126334, 1e-15);
  EXPECT_LT(efficiency_score(pt(0.0, 0.5), front, 1e4), 1e-300);
  double prev = 1.0;
  for (double d = 0.0; d <= 1.0; d += 0.1) {
    const double s = efficiency_score(d, 5.0);
    EXPECT_LE(s, prev);
    prev = s;
  }
}

TEST(Scores, Compliance) {
  EXPECT_EQ(compliance_score(4.0, 4.0, 2.0), 1.0);
  EXPECT_EQ(compliance_score(2.0, 4.0, 2.0), 1.0);
  EXPECT_NEAR(compliance_score(6.0, 4.0, 2.0), 4.0 / 9.0, 1e-15);
  EXPECT_EQ(compliance_score(std::numeric_limits<double>::infinity(), 4.0, 2.0), 1e-6);
  EXPECT_EQ(compliance_score(1e9, 1.0, 2.0), 1e-6);
  double prev = 1.0;
  for (double ratio = 1.0; ratio < 10.0; ratio += 0.25) {
    const double s = compliance_score(ratio, 2.0, 2.0);
    EXPECT_LE(s, prev);
    EXPECT_LE(compliance_score(ratio, 2.0, 3.0), s);
    prev = s;
  }
}

TEST(Scores, Richness) {
  EXPECT_EQ(richness_score(48, 48), 1.0);
  EXPECT_EQ(richness_score(24, 48), 0.5);
  EXPECT_EQ(richness_score(1, 48), 1.0 / 48.0);
  EXPECT_THROW(richness_score(0, 48), ConfigError);
  EXPECT_THROW(richness_score(49, 48), ConfigError);
}

TEST(Sampling, NormalizeQuality) {
  const std::vector<double> q{1.0, 3.0};
  EXPECT_EQ(normalize_quality(q), (std::vector<double>{0.25, 0.75}));
  const std::vector<double> scaled{7.0, 21.0};
  EXPECT_EQ(normalize_quality(scaled), normalize_quality(q));
  EXPECT_THROW(normalize_quality(std::vector<double>{0.0, 0.0}), ConfigError);
}

TEST(Sampling, IdenticalTrajectoriesUniform) {
  const std::vector<Trajectory> data(4, traj_with({1, 1}, {1, 1}));
  for (double p : sampling_distribution(data, {}).probabilities()) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(Sampling, ZeroValueTrajectoryKeepsSupport) {
  const std::vector<Trajectory> data{traj_with({0}, {0}), traj_with({2}, {1})};
  const SamplingTable t = sampling_distribution(data, {});
  EXPECT_EQ(t.scores[0].s_com, 1e-6);
  EXPECT_GT(t.scores[0].prob, 0.0);
}

TEST(Sampling, ComponentsMultiply) {
  const std::vector<Trajectory> data{traj_with({4, 4}, {4, 4}), traj_with({1}, {3}), traj_with({2, 2, 2}, {1, 1, 1})};
  FilterParams params;
  params.t_max = 4;
  const SamplingTable t = sampling_distribution(data, params);
  double sum = 0.0;
  for (const auto& s : t.scores) {
    EXPECT_DOUBLE_EQ(s.q, s.s_eff * s.s_com * s.s_len);
    EXPECT_GT(s.s_eff, 0.0);
    EXPECT_LE(s.s_eff, 1.0);
    sum += s.prob;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_EQ(t.scores[1].s_len, 0.25);
  EXPECT_NEAR(t.scores[1].s_com, (2.0 / 3.0) * (2.0 / 3.0), 1e-15);
}

TEST(Sampling, FrontierGetsMoreMassOnGeneratedData) {
  const Dataset data = generate_dataset(500, MarketModel{}, CampaignSampler{}, default_mixture(), 100);
  const SamplingTable t = sampling_distribution(data.trajectories, {});
  double on = 0.0, off = 0.0, total = 0.0;
  std::size_t n_on = 0, n_off = 0;
  for (std::size_t i = 0; i < t.scores.size(); ++i) {
    total += t.scores[i].prob;
    if (t.on_frontier[i]) {
      on += t.scores[i].prob;
      ++n_on;
    } else {
      off += t.scores[i].prob;
      ++n_off;
    }
  }
  ASSERT_GT(n_on, 0u);
  ASSERT_GT(n_off, 0u);
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_GT(on / static_cast<double>(n_on), off / static_cast<double>(n_off));
}

TEST(Sampling, DegenerateTargetsRejected) {
  FilterParams p;
  p.kappa = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.omega = 0.5;
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_THROW(sampling_distribution(std::vector<Trajectory>{}, {}), ConfigError);
}

TEST(Sampling, BatchSample) {
  Rng rng(1);
  const std::vector<double> certain{1.0, 0.0};
  for (std::size_t i : weighted_batch_sample(certain, 50, rng)) EXPECT_EQ(i, 0u);

  const std::vector<double> probs{0.25, 0.75};
  Rng a(42), b(42);
  const auto draws = weighted_batch_sample(probs, 100000, a);
  EXPECT_EQ(draws, weighted_batch_sample(probs, 100000, b));
  const double ones = static_cast<double>(std::count(draws.begin(), draws.end(), 1u)) / 100000.0;
  EXPECT_NEAR(ones, 0.75, 0.01);
  EXPECT_THROW(weighted_batch_sample(probs, 0, a), ConfigError);
}
