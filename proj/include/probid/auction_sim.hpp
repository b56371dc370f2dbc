#pragma once

// Single-agent stochastic market: per-step impression batches, proportional
// bidding b_i = lambda * v_i, second-price payment at the least winning cost,
// hard per-impression budget truncation, and the 16-feature state.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "probid/core_types.hpp"
#include "probid/rng.hpp"

namespace probid {

struct MarketModel {
  // Impressions per step ~ Poisson(Gamma(shape = dispersion, mean = impressions_mean)).
  double impressions_mean = 60.0;
  double impressions_dispersion = 25.0;
  // Impression value v ~ Beta(value_alpha, value_beta).
  double value_alpha = 2.0;
  double value_beta = 30.0;
  // lwc = profile[t] * lwc_scale * (lwc_value_offset + v) * LogNormal(-sigma^2/2, sigma).
  double lwc_scale = 12.0;
  double lwc_value_offset = 0.01;
  double lwc_sigma = 0.8;
  // Intraday multiplier; empty selects the default smooth unimodal curve.
  std::vector<double> lwc_profile;
  std::uint64_t seed = 0;

  /// Multiplier profile of length `horizon`.
  std::vector<double> profile(int horizon) const {
    if (!lwc_profile.empty()) {
      if (static_cast<int>(lwc_profile.size()) != horizon) {
        throw ConfigError("lwc_profile length " + std::to_string(lwc_profile.size()) + " does not match horizon " +
                          std::to_string(horizon));
      }
      return lwc_profile;
    }
    std::vector<double> p(static_cast<std::size_t>(horizon));
    for (int t = 0; t < horizon; ++t) {
      const double phase = (t + 0.5) / horizon;
      p[static_cast<std::size_t>(t)] = 0.7 + 0.6 * std::sin(std::numbers::pi * phase);
    }
    return p;
  }

  void validate(int horizon) const {
    if (!(impressions_mean > 0.0)) throw ConfigError("market.impressions_mean must be positive");
    if (!(impressions_dispersion > 0.0)) throw ConfigError("market.impressions_dispersion must be positive");
    if (!(value_alpha > 0.0) || !(value_beta > 0.0)) throw ConfigError("market value distribution parameters must be positive");
    if (!(lwc_scale > 0.0)) throw ConfigError("market.lwc_scale must be positive");
    if (!(lwc_value_offset >= 0.0)) throw ConfigError("market.lwc_value_offset must be nonnegative");
    if (!(lwc_sigma >= 0.0)) throw ConfigError("market.lwc_sigma must be nonnegative");
    for (double m : profile(horizon)) {
      if (!(m > 0.0)) throw ConfigError("market.lwc_profile entries must be positive");
    }
  }
};

/// Draws the impression batch of step t (1-based). The batch depends only on
/// (seed, t), never on the bidder's actions.
inline std::vector<Impression> draw_impressions(const MarketModel& market, int t, double profile_multiplier) {
  Rng rng = make_rng(market.seed, {kMarketStream, static_cast<std::uint64_t>(t)});
  std::gamma_distribution<double> intensity(market.impressions_dispersion,
                                            market.impressions_mean / market.impressions_dispersion);
  std::poisson_distribution<int> count_dist(std::max(intensity(rng), 1e-12));
  const int count = count_dist(rng);

  std::gamma_distribution<double> ga(market.value_alpha, 1.0);
  std::gamma_distribution<double> gb(market.value_beta, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = market.lwc_sigma;

  std::vector<Impression> batch(static_cast<std::size_t>(count));
  for (Impression& imp : batch) {
    const double x = ga(rng);
    const double y = gb(rng);
    imp.value = std::clamp(x / (x + y), 0.0, 1.0);
    imp.least_winning_cost = profile_multiplier * market.lwc_scale * (market.lwc_value_offset + imp.value) *
                             std::exp(s * z(rng) - 0.5 * s * s);
    imp.conversion_draw = u(rng);
  }
  return batch;
}

/// Per-step aggregates kept for the history features.
struct StepStats {
  double bid_mean = 0.0;
  double lwc_mean = 0.0;
  double pvalue_mean = 0.0;
  double conversions = 0.0;
  double win_rate = 0.0;
  double pv_num = 0.0;
};

struct EpisodeState {
  CampaignConfig campaign;
  MarketModel market;
  std::vector<double> profile;
  int t = 1;  // current step, 1-based; t == horizon + 1 once finished
  double budget_left = 0.0;
  double cum_reward = 0.0;
  double cum_cost = 0.0;
  long long wins = 0;
  long long participations = 0;
  std::vector<StepStats> history;
  std::vector<Impression> batch;  // impressions of the current step

  bool active() const { return t <= campaign.horizon; }
};

inline EpisodeState begin_episode(const CampaignConfig& campaign, const MarketModel& market) {
  campaign.validate();
  market.validate(campaign.horizon);
  EpisodeState ep;
  ep.campaign = campaign;
  ep.market = market;
  ep.profile = market.profile(campaign.horizon);
  ep.t = 1;
  ep.budget_left = campaign.budget;
  ep.batch = draw_impressions(market, 1, ep.profile[0]);
  return ep;
}

namespace detail {

template <class Field>
double history_mean(const std::vector<StepStats>& h, std::size_t window, Field field) {
  if (h.empty()) return 0.0;
  const std::size_t n = window == 0 ? h.size() : std::min(window, h.size());
  double sum = 0.0;
  for (std::size_t i = h.size() - n; i < h.size(); ++i) sum += field(h[i]);
  return sum / static_cast<double>(n);
}

template <class Field>
double history_sum(const std::vector<StepStats>& h, std::size_t window, Field field) {
  const std::size_t n = window == 0 ? h.size() : std::min(window, h.size());
  double sum = 0.0;
  for (std::size_t i = h.size() - n; i < h.size(); ++i) sum += field(h[i]);
  return sum;
}

}  // namespace detail

/// Feature order: time_left, budget_left, historical_bid_mean,
/// last_three_bid_mean, historical_LeastWinningCost_mean,
/// last_three_LeastWinningCost_mean, historical_pValues_mean,
/// last_three_pValues_mean, current_pValues_mean, historical_conversion_mean,
/// last_three_conversion_mean, historical_xi_mean, last_three_xi_mean,
/// current_pv_num, last_three_pv_num_total, historical_pv_num_total.
inline StateVector build_state(const EpisodeState& ep) {
  using detail::history_mean;
  using detail::history_sum;
  const auto& h = ep.history;
  double current_pvalue = 0.0;
  for (const Impression& imp : ep.batch) current_pvalue += imp.value;
  if (!ep.batch.empty()) current_pvalue /= static_cast<double>(ep.batch.size());

  auto bid = [](const StepStats& s) { return s.bid_mean; };
  auto lwc = [](const StepStats& s) { return s.lwc_mean; };
  auto pv = [](const StepStats& s) { return s.pvalue_mean; };
  auto conv = [](const StepStats& s) { return s.conversions; };
  auto xi = [](const StepStats& s) { return s.win_rate; };
  auto num = [](const StepStats& s) { return s.pv_num; };

  return StateVector{
      static_cast<double>(ep.campaign.horizon - ep.t + 1),
      ep.budget_left,
      history_mean(h, 0, bid),
      history_mean(h, 3, bid),
      history_mean(h, 0, lwc),
      history_mean(h, 3, lwc),
      history_mean(h, 0, pv),
      history_mean(h, 3, pv),
      current_pvalue,
      history_mean(h, 0, conv),
      history_mean(h, 3, conv),
      history_mean(h, 0, xi),
      history_mean(h, 3, xi),
      static_cast<double>(ep.batch.size()),
      history_sum(h, 3, num),
      history_sum(h, 0, num),
  };
}

struct StepOutcome {
  double reward = 0.0;
  double cost = 0.0;
  int wins = 0;
  int forfeited = 0;
};

/// Runs the auctions of the current step with bid multiplier `lambda` and
/// advances the episode. Winners pay the least winning cost in batch order; a
/// win whose payment exceeds the remaining budget is forfeited.
inline StepOutcome step(EpisodeState& ep, double lambda) {
  if (!ep.active()) throw Error("step called on a finished episode");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("bid multiplier must be finite and nonnegative");

  StepOutcome out;
  StepStats stats;
  for (const Impression& imp : ep.batch) {
    const double bid = lambda * imp.value;
    stats.bid_mean += bid;
    stats.lwc_mean += imp.least_winning_cost;
    stats.pvalue_mean += imp.value;
    if (bid < imp.least_winning_cost) continue;
    // Same association as the trajectory total (sum of per-step costs), so the
    // episode total can never exceed the budget by rounding.
    if (ep.cum_cost + (out.cost + imp.least_winning_cost) > ep.campaign.budget) {
      ++out.forfeited;
      continue;
    }
    out.cost += imp.least_winning_cost;
    ++out.wins;
    if (ep.campaign.reward_mode == RewardMode::dense) {
      out.reward += imp.value;
    } else if (imp.conversion_draw < imp.value) {
      out.reward += 1.0;
    }
  }
  const double n = static_cast<double>(ep.batch.size());
  if (n > 0) {
    stats.bid_mean /= n;
    stats.lwc_mean /= n;
    stats.pvalue_mean /= n;
    stats.win_rate = out.wins / n;
  }
  stats.pv_num = n;
  stats.conversions = out.reward;
  ep.history.push_back(stats);

  ep.cum_reward += out.reward;
  ep.cum_cost += out.cost;
  ep.wins += out.wins;
  ep.participations += static_cast<long long>(ep.batch.size());
  ep.budget_left = ep.campaign.budget - ep.cum_cost;
  ++ep.t;
  if (ep.active()) {
    ep.batch = draw_impressions(ep.market, ep.t, ep.profile[static_cast<std::size_t>(ep.t - 1)]);
  } else {
    ep.batch.clear();
  }
  return out;
}

/// Read-only view handed to episode callbacks.
struct EpisodeContext {
  int t = 1;
  int horizon = 1;
  double budget = 0.0;
  double cpa_target = 0.0;
  double budget_left = 0.0;
  double cum_reward = 0.0;
  double cum_cost = 0.0;
  double last_reward = 0.0;
  double last_cost = 0.0;
};

using StepPolicy = std::function<double(const StateVector&, const EpisodeContext&)>;

/// Runs up to `max_steps` steps (default: the full horizon) and returns the
/// resulting trajectory.
inline Trajectory run_episode(const StepPolicy& policy, const CampaignConfig& campaign, const MarketModel& market,
                              int max_steps = -1) {
  EpisodeState ep = begin_episode(campaign, market);
  const int limit = max_steps < 0 ? campaign.horizon : std::min(max_steps, campaign.horizon);
  std::vector<Step> steps;
  steps.reserve(static_cast<std::size_t>(limit));
  EpisodeContext ctx{1, campaign.horizon, campaign.budget, campaign.cpa_target, campaign.budget, 0, 0, 0, 0};
  for (int i = 0; i < limit; ++i) {
    ctx.t = ep.t;
    ctx.budget_left = ep.budget_left;
    ctx.cum_reward = ep.cum_reward;
    ctx.cum_cost = ep.cum_cost;
    Step s;
    s.index = ep.t;
    s.state = build_state(ep);
    s.action = policy(s.state, ctx);
    const StepOutcome out = step(ep, s.action);
    s.reward = out.reward;
    s.cost = out.cost;
    ctx.last_reward = out.reward;
    ctx.last_cost = out.cost;
    steps.push_back(s);
  }
  return Trajectory::from_steps(campaign, std::move(steps));
}

}  // namespace probid
