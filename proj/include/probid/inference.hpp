#pragma once

// Closed-loop pacing with dual-stream tokens and the Value / AR / ER / Score
// evaluation harness.

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "probid/auction_sim.hpp"
#include "probid/dataset.hpp"
#include "probid/parallel.hpp"
#include "probid/seqmodel.hpp"

namespace probid {

struct PacingState {
  double rtg_token = 0.0;
  double ctg_token = 0.0;
  ContextWindow context;
  double pending_action = 0.0;
  bool awaiting_feedback = false;
};

/// C_1 = B and R_1 = B / cpa_target.
inline PacingState init_pacing(const CampaignConfig& cfg) {
  cfg.validate();
  PacingState p;
  p.ctg_token = cfg.budget;
  p.rtg_token = cfg.budget / cfg.cpa_target;
  return p;
}

/// Appends (R_t, C_t, s_t) for step t, drops the oldest step once the window
/// is full, and returns the policy mean at the new step.
inline double act(const PolicyModel& model, PacingState& pacing, int t, const StateVector& state) {
  if (pacing.awaiting_feedback) throw Error("act called twice without observe");
  ContextWindow& ctx = pacing.context;
  if (ctx.size() >= static_cast<std::size_t>(model.config.context_steps)) {
    ctx.erase_front(ctx.size() - static_cast<std::size_t>(model.config.context_steps) + 1);
  }
  // The action slot of the current step is not visible to the policy output.
  ctx.push_back(t, pacing.rtg_token, pacing.ctg_token, state, 0.0);
  const double lambda = model.act_mean(ctx);
  ctx.actions.back() = lambda;
  pacing.pending_action = lambda;
  pacing.awaiting_feedback = true;
  return lambda;
}

/// R_{t+1} = R_t - r_t and C_{t+1} = C_t - c_t, passed through unclamped.
inline void observe(PacingState& pacing, double reward, double cost) {
  if (!pacing.context.actions.empty()) pacing.context.actions.back() = pacing.pending_action;
  pacing.rtg_token -= reward;
  pacing.ctg_token -= cost;
  pacing.awaiting_feedback = false;
}

struct EpisodeReport {
  double value = 0.0;
  double cost = 0.0;
  double realized_cpa = 0.0;  // inf when value is 0
  double ar = 0.0;
  bool exceeded = false;
  double score = 0.0;
};

/// Score = V * min(1, (1/AR)^gamma); an infinite AR scores 0.
inline double score_of(double value, double ar, double gamma = 2.0) {
  if (!std::isfinite(ar)) return 0.0;
  if (ar <= 1.0) return value;
  return value * std::min(1.0, std::pow(1.0 / ar, gamma));
}

inline EpisodeReport make_report(double value, double cost, double cpa_target, double gamma = 2.0) {
  EpisodeReport r;
  r.value = value;
  r.cost = cost;
  r.realized_cpa = value > 0.0 ? cost / value : std::numeric_limits<double>::infinity();
  r.ar = r.realized_cpa / cpa_target;
  r.exceeded = r.ar > 1.0;
  r.score = score_of(value, r.ar, gamma);
  return r;
}

struct EvalSummary {
  std::size_t episodes = 0;
  double mean_value = 0.0;
  double mean_cost = 0.0;
  double mean_ar = 0.0;  // over episodes with positive value
  double pooled_ar = 0.0;  // sum of costs / sum of (target * value)
  double exceed_rate = 0.0;
  double mean_score = 0.0;
  std::size_t zero_value_episodes = 0;
  std::vector<EpisodeReport> reports;
};

/// Pooled AR weights each episode's target by its value, so that it reduces
/// to total cost / total value / target when all targets agree.
inline EvalSummary aggregate(std::vector<EpisodeReport> reports, std::span<const double> targets) {
  EvalSummary s;
  s.episodes = reports.size();
  if (reports.empty()) return s;
  std::size_t finite = 0;
  double pooled_cost = 0.0, pooled_budgeted = 0.0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const EpisodeReport& r = reports[i];
    s.mean_value += r.value;
    s.mean_cost += r.cost;
    s.mean_score += r.score;
    if (r.exceeded) s.exceed_rate += 1.0;
    if (r.value > 0.0) {
      s.mean_ar += r.ar;
      ++finite;
    } else {
      ++s.zero_value_episodes;
    }
    pooled_cost += r.cost;
    pooled_budgeted += targets[i] * r.value;
  }
  const double n = static_cast<double>(reports.size());
  s.mean_value /= n;
  s.mean_cost /= n;
  s.mean_score /= n;
  s.exceed_rate /= n;
  s.mean_ar = finite > 0 ? s.mean_ar / static_cast<double>(finite) : std::numeric_limits<double>::infinity();
  s.pooled_ar = pooled_budgeted > 0.0 ? pooled_cost / pooled_budgeted : std::numeric_limits<double>::infinity();
  s.reports = std::move(reports);
  return s;
}

/// Metrics of logged trajectories, each scored against its own target.
inline EvalSummary score_trajectories(std::span<const Trajectory> data, double gamma = 2.0) {
  std::vector<EpisodeReport> reports;
  std::vector<double> targets;
  for (const Trajectory& t : data) {
    reports.push_back(make_report(t.total_reward, t.total_cost, t.campaign.cpa_target, gamma));
    targets.push_back(t.campaign.cpa_target);
  }
  return aggregate(std::move(reports), targets);
}

struct ModelEpisode {
  Trajectory trajectory;
  PacingState pacing;
  PacingState initial;
};

/// One closed-loop episode driven by the model's mean action.
inline ModelEpisode run_model_episode(const PolicyModel& model, const CampaignConfig& campaign,
                                      const MarketModel& market) {
  ModelEpisode out;
  EpisodeState ep = begin_episode(campaign, market);
  out.pacing = init_pacing(campaign);
  out.initial = out.pacing;
  std::vector<Step> steps;
  while (ep.active()) {
    Step s;
    s.index = ep.t;
    s.state = build_state(ep);
    s.action = act(model, out.pacing, ep.t, s.state);
    const StepOutcome o = step(ep, s.action);
    observe(out.pacing, o.reward, o.cost);
    s.reward = o.reward;
    s.cost = o.cost;
    steps.push_back(s);
  }
  out.trajectory = Trajectory::from_steps(campaign, std::move(steps));
  return out;
}

struct EvalConfig {
  std::size_t episodes = 100;
  std::uint64_t seed_base = 1'000'000;  // episode i uses market/campaign seed seed_base + i
  double score_gamma = 2.0;
  double budget_scale = 1.0;  // budget-percentage setting
  int threads = 1;

  void validate() const {
    if (episodes < 1) throw ConfigError("eval.episodes must be >= 1");
    if (!(score_gamma > 0.0)) throw ConfigError("eval.score_gamma must be positive");
    if (!(budget_scale > 0.0)) throw ConfigError("eval.budget_scale must be positive");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }
};

/// Evaluates an arbitrary controller factory over the episode set.
using ControllerFactory = std::function<StepPolicy(const CampaignConfig&, std::uint64_t seed)>;

inline CampaignConfig eval_campaign(const CampaignSampler& sampler, const EvalConfig& cfg, std::size_t i) {
  CampaignConfig c = sampler.sample(cfg.seed_base + i);
  c.budget *= cfg.budget_scale;
  return c;
}

inline EvalSummary evaluate_controller(const ControllerFactory& factory, const MarketModel& market,
                                       const CampaignSampler& sampler, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<EpisodeReport> reports(cfg.episodes);
  std::vector<double> targets(cfg.episodes);
  parallel_for(cfg.episodes, cfg.threads, [&](std::size_t i) {
    const CampaignConfig c = eval_campaign(sampler, cfg, i);
    MarketModel m = market;
    m.seed = cfg.seed_base + i;
    const Trajectory t = run_episode(factory(c, cfg.seed_base + i), c, m);
    reports[i] = make_report(t.total_reward, t.total_cost, c.cpa_target, cfg.score_gamma);
    targets[i] = c.cpa_target;
  });
  return aggregate(std::move(reports), targets);
}

inline EvalSummary evaluate(const PolicyModel& model, const MarketModel& market, const CampaignSampler& sampler,
                            const EvalConfig& cfg) {
  cfg.validate();
  std::vector<EpisodeReport> reports(cfg.episodes);
  std::vector<double> targets(cfg.episodes);
  parallel_for(cfg.episodes, cfg.threads, [&](std::size_t i) {
    const CampaignConfig c = eval_campaign(sampler, cfg, i);
    MarketModel m = market;
    m.seed = cfg.seed_base + i;
    const ModelEpisode e = run_model_episode(model, c, m);
    reports[i] = make_report(e.trajectory.total_reward, e.trajectory.total_cost, c.cpa_target, cfg.score_gamma);
    targets[i] = c.cpa_target;
  });
  return aggregate(std::move(reports), targets);
}

struct SweepRow {
  double target = 0.0;
  EvalSummary summary;
};

/// Same checkpoint and episode set under each CPA target.
inline std::vector<SweepRow> cpa_sensitivity_sweep(const PolicyModel& model, const MarketModel& market,
                                                   const CampaignSampler& sampler, std::span<const double> targets,
                                                   const EvalConfig& cfg) {
  std::vector<SweepRow> rows;
  for (double target : targets) {
    if (!(target > 0.0)) throw ConfigError("sweep targets must be positive");
    CampaignSampler s = sampler;
    s.cpa_low = s.cpa_high = target;
    rows.push_back({target, evaluate(model, market, s, cfg)});
  }
  return rows;
}

inline void write_sweep_csv(const std::string& path, std::span<const SweepRow> rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.precision(10);
  out << "target,value,ar,er,score\n";
  for (const SweepRow& r : rows) {
    out << r.target << ',' << r.summary.mean_value << ',' << r.summary.mean_ar << ',' << r.summary.exceed_rate << ','
        << r.summary.mean_score << '\n';
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

/// Per-episode rows plus a trailing summary row.
inline void write_eval_csv(const std::string& path, const EvalSummary& s) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.precision(10);
  out << "episode,value,cost,realized_cpa,ar,exceeded,score\n";
  for (std::size_t i = 0; i < s.reports.size(); ++i) {
    const EpisodeReport& r = s.reports[i];
    out << i << ',' << r.value << ',' << r.cost << ',' << r.realized_cpa << ',' << r.ar << ',' << (r.exceeded ? 1 : 0)
        << ',' << r.score << '\n';
  }
  out << "mean," << s.mean_value << ',' << s.mean_cost << ",," << s.mean_ar << ',' << s.exceed_rate << ','
      << s.mean_score << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace probid
