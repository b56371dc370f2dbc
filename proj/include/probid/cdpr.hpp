#pragma once

// Constraint-decoupled representation: return-to-go / cost-to-go streams and
// Pareto-prioritized sampling weights over a trajectory dataset.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "probid/core_types.hpp"
#include "probid/rng.hpp"

namespace probid {

struct DualStreamContext {
  std::vector<double> rtg;  // R_t = sum_{t' >= t} r_t'
  std::vector<double> ctg;  // C_t = sum_{t' >= t} c_t'
};

/// Suffix sums built backwards so that R_t == R_{t+1} + r_t holds exactly.
inline DualStreamContext build_dual_stream(const Trajectory& traj) {
  const std::size_t n = traj.steps.size();
  DualStreamContext ctx{std::vector<double>(n), std::vector<double>(n)};
  double r = 0.0;
  double c = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    r += traj.steps[i].reward;
    c += traj.steps[i].cost;
    ctx.rtg[i] = r;
    ctx.ctg[i] = c;
  }
  return ctx;
}

struct ObjectivePoint {
  double r = 0.0;
  double c = 0.0;
  double r_norm = 0.0;
  double c_norm = 0.0;
};

/// Min-max normalization over the given dataset. A constant axis maps to 0.
inline std::vector<ObjectivePoint> objective_points(std::span<const Trajectory> data) {
  std::vector<ObjectivePoint> pts;
  pts.reserve(data.size());
  for (const Trajectory& t : data) pts.push_back({t.total_reward, t.total_cost, 0.0, 0.0});
  if (pts.empty()) return pts;
  auto [rmin, rmax] = std::minmax_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.r < b.r; });
  auto [cmin, cmax] = std::minmax_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.c < b.c; });
  const double r_lo = rmin->r, r_span = rmax->r - rmin->r;
  const double c_lo = cmin->c, c_span = cmax->c - cmin->c;
  for (ObjectivePoint& p : pts) {
    p.r_norm = r_span > 0.0 ? (p.r - r_lo) / r_span : 0.0;
    p.c_norm = c_span > 0.0 ? (p.c - c_lo) / c_span : 0.0;
  }
  return pts;
}

/// Indices (ascending) of the non-dominated points: lower normalized cost and
/// higher normalized return are better. Coincident points are all kept.
inline std::vector<std::size_t> pareto_frontier(std::span<const ObjectivePoint> points) {
  const std::size_t n = points.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].c_norm != points[b].c_norm) return points[a].c_norm < points[b].c_norm;
    return points[a].r_norm > points[b].r_norm;
  });
  std::vector<std::size_t> frontier;
  double best_cheaper = -std::numeric_limits<double>::infinity();  // max return among strictly cheaper points
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    const double c = points[order[i]].c_norm;
    const double group_best = points[order[i]].r_norm;
    while (j < n && points[order[j]].c_norm == c) {
      const double r = points[order[j]].r_norm;
      if (r == group_best && best_cheaper < r) frontier.push_back(order[j]);
      ++j;
    }
    best_cheaper = std::max(best_cheaper, group_best);
    i = j;
  }
  std::sort(frontier.begin(), frontier.end());
  return frontier;
}

struct FilterParams {
  double kappa = 5.0;
  double omega = 2.0;
  int t_max = 0;  // 0: use the longest horizon in the dataset
  double compliance_floor = 1e-6;

  void validate() const {
    if (!(kappa > 0.0)) throw ConfigError("filter.kappa must be positive");
    if (!(omega >= 1.0)) throw ConfigError("filter.omega must be >= 1");
    if (t_max < 0) throw ConfigError("filter.t_max must be >= 0");
    if (!(compliance_floor > 0.0 && compliance_floor <= 1.0)) throw ConfigError("filter.compliance_floor must be in (0,1]");
  }
};

inline double distance_to_frontier(const ObjectivePoint& p, std::span<const ObjectivePoint> frontier) {
  double best = std::numeric_limits<double>::infinity();
  for (const ObjectivePoint& f : frontier) {
    best = std::min(best, std::hypot(p.r_norm - f.r_norm, p.c_norm - f.c_norm));
  }
  return best;
}

inline double efficiency_score(double distance, double kappa) { return std::exp(-kappa * distance); }

inline double efficiency_score(const ObjectivePoint& p, std::span<const ObjectivePoint> frontier, double kappa) {
  return efficiency_score(distance_to_frontier(p, frontier), kappa);
}

/// 1 when compliant, (target / ratio)^omega otherwise; never below `floor`
/// (an infinite ratio, i.e. zero acquired value, lands exactly on the floor).
inline double compliance_score(double ratio, double target, double omega, double floor = 1e-6) {
  if (ratio <= target) return 1.0;
  if (!std::isfinite(ratio)) return floor;
  return std::max(std::pow(target / ratio, omega), floor);
}

inline double richness_score(int length, int t_max) {
  if (length < 1 || length > t_max) throw ConfigError("richness_score requires 1 <= length <= t_max");
  return static_cast<double>(length) / static_cast<double>(t_max);
}

struct QualityScore {
  double s_eff = 0.0;
  double s_com = 0.0;
  double s_len = 0.0;
  double q = 0.0;
  double prob = 0.0;
};

/// Per-trajectory diagnostics behind the sampling distribution.
struct SamplingTable {
  std::vector<ObjectivePoint> points;
  std::vector<bool> on_frontier;
  std::vector<QualityScore> scores;

  std::vector<double> probabilities() const {
    std::vector<double> p;
    p.reserve(scores.size());
    for (const auto& s : scores) p.push_back(s.prob);
    return p;
  }
};

/// Normalizes quality values q into probabilities q_i / sum_j q_j.
inline std::vector<double> normalize_quality(std::span<const double> q) {
  double total = 0.0;
  for (double x : q) total += x;
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw ConfigError("sampling distribution is degenerate: all quality scores are zero");
  }
  std::vector<double> p(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) p[i] = q[i] / total;
  return p;
}

/// Each trajectory's ratio is scored against its own campaign target.
inline SamplingTable sampling_distribution(std::span<const Trajectory> data, const FilterParams& params) {
  params.validate();
  if (data.empty()) throw ConfigError("sampling distribution needs a nonempty dataset");
  SamplingTable table;
  table.points = objective_points(data);
  const std::vector<std::size_t> front_idx = pareto_frontier(table.points);
  std::vector<ObjectivePoint> front;
  table.on_frontier.assign(data.size(), false);
  for (std::size_t i : front_idx) {
    table.on_frontier[i] = true;
    front.push_back(table.points[i]);
  }
  int t_max = params.t_max;
  if (t_max == 0) {
    for (const Trajectory& t : data) t_max = std::max(t_max, t.campaign.horizon);
  }

  std::vector<double> q(data.size());
  table.scores.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    QualityScore& s = table.scores[i];
    s.s_eff = table.on_frontier[i] ? 1.0 : efficiency_score(table.points[i], front, params.kappa);
    s.s_com = compliance_score(data[i].realized_ratio(), data[i].campaign.cpa_target, params.omega,
                               params.compliance_floor);
    s.s_len = richness_score(data[i].length(), t_max);
    s.q = s.s_eff * s.s_com * s.s_len;
    q[i] = s.q;
  }
  const std::vector<double> p = normalize_quality(q);
  for (std::size_t i = 0; i < data.size(); ++i) table.scores[i].prob = p[i];
  return table;
}

/// I.i.d. categorical draws with replacement.
inline std::vector<std::size_t> weighted_batch_sample(std::span<const double> probs, std::size_t batch_size, Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
  std::vector<std::size_t> out(batch_size);
  for (auto& i : out) i = pick(rng);
  return out;
}

}  // namespace probid
