#pragma once

// Counterfactual regret optimization: outcome-predictor loss, full-episode
// utility, Boltzmann regret weights, regret-weighted regression and the
// training loop.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "probid/cdpr.hpp"
#include "probid/inference.hpp"
#include "probid/optim.hpp"
#include "probid/parallel.hpp"
#include "probid/seqmodel.hpp"

namespace probid {

struct CroParams {
  double gamma_u = 2.0;  // utility penalty exponent
  double tau = 0.0;      // Boltzmann temperature; 0 selects 0.1 x mean dataset return
  int k = 8;             // counterfactual candidates per step
  double eps = 1e-8;
  double alpha = 1.0;  // regret
  double beta = 1.0;   // predictor
  double eta = 0.01;   // entropy bonus
  bool detach_predictor = false;

  void validate() const {
    if (!(gamma_u >= 1.0)) throw ConfigError("cro.gamma_u must be >= 1");
    if (!(tau > 0.0)) throw ConfigError("cro.tau must be positive");
    if (k < 1) throw ConfigError("cro.k must be >= 1");
    if (!(eps > 0.0)) throw ConfigError("cro.eps must be positive");
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(eta >= 0.0)) throw ConfigError("cro loss coefficients must be nonnegative");
  }
};

/// Value and cost accumulated before step t.
struct EpisodePrefix {
  double h_r = 0.0;
  double h_c = 0.0;
};

/// Penalized full-episode utility. r_hat and c_hat are raw (de-standardized)
/// predictions of the remaining value and cost; negative r_hat counts as 0.
inline double utility(double r_hat, double c_hat, const EpisodePrefix& prefix, const CroParams& p, double target) {
  const double r_total = prefix.h_r + std::max(r_hat, 0.0);
  const double c_total = prefix.h_c + c_hat;
  const double rho = c_total / (r_total + p.eps);
  const double penalty = rho <= 0.0 ? 1.0 : std::min(std::pow(target / rho, p.gamma_u), 1.0);
  return penalty * r_total;
}

/// w_k = exp(D_k / tau) 1[D_k > 0] / (sum_j exp(D_j / tau) 1[D_j > 0] + eps)
/// with D_k = max(U_k - U_base, 0). Exponents are shifted by max D, so eps
/// acts on the shifted scale.
inline std::vector<double> regret_weights(std::span<const double> utilities, double u_base, const CroParams& p) {
  std::vector<double> w(utilities.size(), 0.0);
  double top = 0.0;
  bool any = false;
  for (double u : utilities) {
    const double d = u - u_base;
    if (d > 0.0) {
      top = any ? std::max(top, d) : d;
      any = true;
    }
  }
  if (!any) return w;
  double z = 0.0;
  for (std::size_t k = 0; k < utilities.size(); ++k) {
    const double d = utilities[k] - u_base;
    if (d > 0.0) {
      w[k] = std::exp((d - top) / p.tau);
      z += w[k];
    }
  }
  for (double& x : w) x /= z + p.eps;
  return w;
}

/// (1/T) sum_t sum_k w_tk (mu_t - a_tk)^2 with targets and weights constant.
inline ad::Var regret_loss(ad::Var mu, const Matrix& targets, const Matrix& weights) {
  if (targets.rows() != mu.rows() || weights.rows() != mu.rows() || targets.cols() != weights.cols()) {
    throw ad::ShapeError("regret_loss: shape mismatch");
  }
  ad::Tape& t = *mu.tape;
  const ad::Var diff = ad::sub(ad::broadcast_cols(mu, targets.cols()), t.constant(targets));
  return ad::scale(ad::sum(ad::mul_const(ad::square(diff), weights)), 1.0 / static_cast<double>(mu.rows()));
}

/// mean_t (r_hat - r)^2 + mean_t (c_hat - c)^2 on standardized scales.
inline ad::Var predictor_loss(ad::Var r_hat, ad::Var c_hat, const Matrix& r_target, const Matrix& c_target) {
  ad::Tape& t = *r_hat.tape;
  const ad::Var er = ad::mean(ad::square(ad::sub(r_hat, t.constant(r_target))));
  const ad::Var ec = ad::mean(ad::square(ad::sub(c_hat, t.constant(c_target))));
  return ad::add(er, ec);
}

// ---------------------------------------------------------------------------
// Training windows

struct TrainingWindow {
  ContextWindow context;
  std::vector<EpisodePrefix> prefix;
  Matrix rtg_target;  // standardized R_t (value from step t to the end)
  Matrix ctg_target;  // standardized C_t
  Matrix actions;     // raw logged actions
  double cpa_target = 1.0;

  std::size_t size() const { return context.size(); }
};

inline TrainingWindow make_window(const Trajectory& traj, std::size_t start, std::size_t len, const Normalization& norm) {
  if (len < 1 || start + len > traj.steps.size()) throw ConfigError("training window outside the trajectory");
  const DualStreamContext ds = build_dual_stream(traj);
  TrainingWindow w;
  w.cpa_target = traj.campaign.cpa_target;
  w.rtg_target.resize(static_cast<Eigen::Index>(len), 1);
  w.ctg_target.resize(static_cast<Eigen::Index>(len), 1);
  w.actions.resize(static_cast<Eigen::Index>(len), 1);
  double h_r = 0.0;
  double h_c = 0.0;
  for (std::size_t i = 0; i < start + len; ++i) {
    const Step& s = traj.steps[i];
    if (i >= start) {
      const auto j = static_cast<Eigen::Index>(i - start);
      w.context.push_back(s.index, ds.rtg[i], ds.ctg[i], s.state, s.action);
      w.prefix.push_back({h_r, h_c});
      w.rtg_target(j, 0) = ds.rtg[i] / norm.rtg_scale;
      w.ctg_target(j, 0) = ds.ctg[i] / norm.ctg_scale;
      w.actions(j, 0) = s.action;
    }
    h_r += s.reward;
    h_c += s.cost;
  }
  return w;
}

struct RegretTargets {
  Matrix actions;  // T x K candidate actions
  Matrix weights;  // T x K
  double frac_positive = 0.0;
  double mean_delta = 0.0;
};

/// Samples K clamped Gaussian candidates per step, scores each one and the
/// policy mean through the predictor head, and converts utility gains into
/// regret weights.
inline RegretTargets counterfactual_pass(const PolicyModel& model, const ForwardResult& fwd, const TrainingWindow& w,
                                         const CroParams& p, Rng& rng) {
  const std::size_t n = w.size();
  const auto k = static_cast<std::size_t>(p.k);
  const Matrix& mu = fwd.mu.value();
  const Matrix& sigma = fwd.sigma.value();
  std::normal_distribution<double> z(0.0, 1.0);

  std::vector<std::size_t> steps;
  std::vector<double> actions;
  steps.reserve(n * (k + 1));
  actions.reserve(n * (k + 1));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < k; ++j) {
      steps.push_back(i);
      actions.push_back(std::clamp(mu(r, 0) + sigma(r, 0) * z(rng), 0.0, model.config.action_bound));
    }
    steps.push_back(i);
    actions.push_back(mu(r, 0));
  }
  const Matrix pred = model.predict_with_action(fwd, w.context, steps, actions);

  RegretTargets out;
  out.actions.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  out.weights.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  std::vector<double> u(k);
  std::size_t positive_steps = 0;
  double delta_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto util = [&](std::size_t row) {
      const auto r = static_cast<Eigen::Index>(row);
      return utility(pred(r, 0) * model.norm.rtg_scale, pred(r, 1) * model.norm.ctg_scale, w.prefix[i], p,
                     w.cpa_target);
    };
    const std::size_t base_row = i * (k + 1) + k;
    const double u_base = util(base_row);
    bool any = false;
    for (std::size_t j = 0; j < k; ++j) {
      u[j] = util(i * (k + 1) + j);
      out.actions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = actions[i * (k + 1) + j];
      const double d = std::max(u[j] - u_base, 0.0);
      delta_sum += d;
      any = any || d > 0.0;
    }
    if (any) ++positive_steps;
    const std::vector<double> wk = regret_weights(u, u_base, p);
    for (std::size_t j = 0; j < k; ++j) out.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = wk[j];
  }
  out.frac_positive = static_cast<double>(positive_steps) / static_cast<double>(n);
  out.mean_delta = delta_sum / static_cast<double>(n * k);
  return out;
}

// ---------------------------------------------------------------------------
// Objective

enum class Objective { pro_bid, mse };

/// Terms that do not apply to an objective are NaN.
struct LossBreakdown {
  double nll = std::numeric_limits<double>::quiet_NaN();
  double regret = std::numeric_limits<double>::quiet_NaN();
  double pred = std::numeric_limits<double>::quiet_NaN();
  double entropy = std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  double frac_positive_regret = std::numeric_limits<double>::quiet_NaN();
  double mean_delta = std::numeric_limits<double>::quiet_NaN();
};

struct LossGraph {
  ad::Var total;
  LossBreakdown parts;
};

namespace detail {
inline void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw Error(std::string("non-finite ") + term + " loss");
}
}  // namespace detail

/// Combines the recorded terms. Policy terms use actions divided by the
/// dataset action scale. `targets` may be null when alpha is 0.
inline LossGraph assemble_loss(const PolicyModel& model, const ForwardResult& fwd, const TrainingWindow& w,
                               const RegretTargets* targets, const CroParams& p, Objective objective) {
  ad::Tape& tape = *fwd.mu.tape;
  const double inv_scale = 1.0 / model.norm.action_scale;
  const ad::Var mu = ad::scale(fwd.mu, inv_scale);
  const Matrix actions = w.actions * inv_scale;
  LossGraph g;
  if (objective == Objective::mse) {
    g.total = ad::mean(ad::square(ad::sub(mu, tape.constant(actions))));
    g.parts.total = g.total.scalar();
    detail::require_finite(g.parts.total, "mse");
    return g;
  }
  const ad::Var sigma = ad::scale(fwd.sigma, inv_scale);
  std::vector<ad::Var> terms;
  std::vector<double> coeffs;
  const ad::Var nll = nll_loss(mu, sigma, actions);
  g.parts.nll = nll.scalar();
  detail::require_finite(g.parts.nll, "nll");
  terms.push_back(nll);
  coeffs.push_back(1.0);
  if (p.alpha > 0.0) {
    if (targets == nullptr) throw Error("regret targets required when alpha > 0");
    const ad::Var reg = regret_loss(mu, targets->actions * inv_scale, targets->weights);
    g.parts.regret = reg.scalar();
    g.parts.frac_positive_regret = targets->frac_positive;
    g.parts.mean_delta = targets->mean_delta;
    detail::require_finite(g.parts.regret, "regret");
    terms.push_back(reg);
    coeffs.push_back(p.alpha);
  }
  const ad::Var pred = predictor_loss(fwd.r_hat, fwd.c_hat, w.rtg_target, w.ctg_target);
  g.parts.pred = pred.scalar();
  detail::require_finite(g.parts.pred, "predictor");
  if (p.beta > 0.0) {
    terms.push_back(pred);
    coeffs.push_back(p.beta);
  }
  const ad::Var h = entropy(sigma);
  g.parts.entropy = h.scalar();
  if (p.eta > 0.0) {
    terms.push_back(h);
    coeffs.push_back(-p.eta);
  }
  g.total = ad::combine(terms, coeffs);
  g.parts.total = g.total.scalar();
  detail::require_finite(g.parts.total, "total");
  return g;
}

/// Forward pass, counterfactual pass (when alpha > 0) and combined loss.
inline LossGraph total_loss(ad::Tape& tape, const PolicyModel& model, const TrainingWindow& w, const CroParams& p,
                            Objective objective, Rng& rng) {
  const ForwardResult fwd = model.forward(tape, w.context, p.detach_predictor);
  std::optional<RegretTargets> targets;
  if (objective == Objective::pro_bid && p.alpha > 0.0) targets = counterfactual_pass(model, fwd, w, p, rng);
  return assemble_loss(model, fwd, w, targets ? &*targets : nullptr, p, objective);
}

// ---------------------------------------------------------------------------
// Training

enum class Ablation { none, no_cdpr, no_cro, plain_dt };

inline std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::no_cdpr: return "no-cdpr";
    case Ablation::no_cro: return "no-cro";
    case Ablation::plain_dt: return "plain-dt";
  }
  return "unknown";
}

inline Ablation parse_ablation(std::string_view text) {
  if (text == "none") return Ablation::none;
  if (text == "no-cdpr") return Ablation::no_cdpr;
  if (text == "no-cro") return Ablation::no_cro;
  if (text == "plain-dt") return Ablation::plain_dt;
  throw ConfigError("unknown ablation '" + std::string(text) + "' (expected none, no-cdpr, no-cro, plain-dt)");
}

struct TrainConfig {
  int max_steps = 2000;
  int batch_size = 16;
  AdamConfig adam;
  std::uint64_t seed = 0;
  int eval_every = 0;  // 0: no periodic evaluation
  int threads = 1;

  static TrainConfig desk() { return TrainConfig{}; }

  static TrainConfig large() {
    TrainConfig c;
    c.max_steps = 200000;
    c.batch_size = 128;
    c.adam.learning_rate = 1e-5;
    return c;
  }

  void validate() const {
    if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (eval_every < 0) throw ConfigError("train.eval_every must be >= 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    adam.validate();
  }
};

/// Scales from the dataset: mean episode return and cost, mean action, and
/// per-feature state mean/std.
inline Normalization compute_normalization(std::span<const Trajectory> data) {
  Normalization n;
  double r = 0.0, c = 0.0, a = 0.0;
  std::size_t steps = 0;
  StateVector sum{}, sq{};
  for (const Trajectory& t : data) {
    r += t.total_reward;
    c += t.total_cost;
    for (const Step& s : t.steps) {
      a += s.action;
      for (std::size_t k = 0; k < kStateDim; ++k) {
        sum[k] += s.state[k];
        sq[k] += s.state[k] * s.state[k];
      }
      ++steps;
    }
  }
  const double m = static_cast<double>(std::max<std::size_t>(data.size(), 1));
  n.rtg_scale = r > 0.0 ? r / m : 1.0;
  n.ctg_scale = c > 0.0 ? c / m : 1.0;
  n.action_scale = a > 0.0 ? a / static_cast<double>(steps) : 1.0;
  if (steps > 0) {
    for (std::size_t k = 0; k < kStateDim; ++k) {
      const double mean = sum[k] / static_cast<double>(steps);
      const double var = std::max(sq[k] / static_cast<double>(steps) - mean * mean, 0.0);
      n.state_mean[k] = mean;
      n.state_scale[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
  }
  return n;
}

/// Sets the timestep table to the longest horizon and the action bound to the
/// largest logged action.
inline ModelConfig fit_model_config(ModelConfig cfg, std::span<const Trajectory> data) {
  int horizon = 1;
  double top = 0.0;
  for (const Trajectory& t : data) {
    horizon = std::max(horizon, t.campaign.horizon);
    for (const Step& s : t.steps) top = std::max(top, s.action);
  }
  cfg.horizon = horizon;
  cfg.with_action_bound(top > 0.0 ? top : 1.0);
  return cfg;
}

inline double mean_total_reward(std::span<const Trajectory> data) {
  if (data.empty()) return 0.0;
  double r = 0.0;
  for (const Trajectory& t : data) r += t.total_reward;
  return r / static_cast<double>(data.size());
}

struct MetricsRow {
  int step = 0;
  LossBreakdown loss;
  std::optional<EvalSummary> eval;
};

struct TrainResult {
  PolicyModel model;
  std::vector<MetricsRow> log;
  CroParams cro;  // with tau resolved
};

using Evaluator = std::function<EvalSummary(const PolicyModel&)>;

inline TrainResult train(std::span<const Trajectory> data, const ModelConfig& model_cfg, CroParams cro,
                         const FilterParams& filter, const TrainConfig& cfg, Ablation ablation = Ablation::none,
                         const Evaluator& evaluator = {}) {
  if (data.empty()) throw ConfigError("training dataset is empty");
  cfg.validate();
  if (cro.tau <= 0.0) cro.tau = 0.1 * std::max(mean_total_reward(data), 1e-6);
  Objective objective = Objective::pro_bid;
  bool uniform = false;
  ModelConfig mc = fit_model_config(model_cfg, data);
  switch (ablation) {
    case Ablation::none: break;
    case Ablation::no_cdpr:
      uniform = true;
      mc.use_cost_stream = false;
      break;
    case Ablation::no_cro: cro.alpha = 0.0; break;
    case Ablation::plain_dt:
      uniform = true;
      mc.use_cost_stream = false;
      objective = Objective::mse;
      cro.alpha = cro.beta = cro.eta = 0.0;
      break;
  }
  cro.validate();

  TrainResult result;
  result.cro = cro;
  result.model = PolicyModel::initialize(mc, compute_normalization(data), derive_seed(cfg.seed, {kInitStream}));
  PolicyModel& model = result.model;
  std::vector<double> probs;
  if (uniform) {
    probs.assign(data.size(), 1.0 / static_cast<double>(data.size()));
  } else {
    probs = sampling_distribution(data, filter).probabilities();
  }
  Adam opt(model.params, cfg.adam);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const auto window = static_cast<std::size_t>(mc.context_steps);

  for (int step = 1; step <= cfg.max_steps; ++step) {
    Rng batch_rng = make_rng(cfg.seed, {kBatchStream, static_cast<std::uint64_t>(step)});
    const std::vector<std::size_t> picks = weighted_batch_sample(probs, batch, batch_rng);
    std::vector<std::size_t> starts(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t len = data[picks[b]].steps.size();
      std::uniform_int_distribution<std::size_t> pos(0, len - std::min(len, window));
      starts[b] = pos(batch_rng);
    }

    std::vector<GradientSet> grads(batch);
    std::vector<LossBreakdown> parts(batch);
    parallel_for(batch, cfg.threads, [&](std::size_t b) {
      const Trajectory& traj = data[picks[b]];
      const TrainingWindow w = make_window(traj, starts[b], std::min(traj.steps.size(), window), model.norm);
      Rng rng = make_rng(cfg.seed, {kCounterfactualStream, static_cast<std::uint64_t>(step), b});
      ad::Tape tape;
      const LossGraph g = total_loss(tape, model, w, cro, objective, rng);
      tape.backward(g.total);
      grads[b] = GradientSet::zeros_like(model.params);
      grads[b].collect(tape);
      parts[b] = g.parts;
    });

    GradientSet total = GradientSet::zeros_like(model.params);
    MetricsRow row;
    row.step = step;
    row.loss = LossBreakdown{0, 0, 0, 0, 0, 0, 0};
    const double inv = 1.0 / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      total.add(grads[b], inv);
      row.loss.nll += parts[b].nll * inv;
      row.loss.regret += parts[b].regret * inv;
      row.loss.pred += parts[b].pred * inv;
      row.loss.entropy += parts[b].entropy * inv;
      row.loss.total += parts[b].total * inv;
      row.loss.frac_positive_regret += parts[b].frac_positive_regret * inv;
      row.loss.mean_delta += parts[b].mean_delta * inv;
    }
    opt.step(model.params, total);
    if (evaluator && cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.max_steps)) {
      row.eval = evaluator(model);
    }
    result.log.push_back(row);
  }
  return result;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.precision(10);
  auto field = [&](double v) {
    out << ',';
    if (std::isfinite(v)) out << v;
  };
  out << "step,nll,regret,pred,entropy,total,frac_positive_regret,eval_score,eval_ar,eval_er,eval_value\n";
  for (const MetricsRow& r : rows) {
    out << r.step;
    field(r.loss.nll);
    field(r.loss.regret);
    field(r.loss.pred);
    field(r.loss.entropy);
    field(r.loss.total);
    field(r.loss.frac_positive_regret);
    if (r.eval) {
      field(r.eval->mean_score);
      field(r.eval->mean_ar);
      field(r.eval->exceed_rate);
      field(r.eval->mean_value);
    } else {
      out << ",,,,";
    }
    out << '\n';
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace probid
