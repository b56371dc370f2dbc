#pragma once

// End-to-end steps shared by the command-line tool and the acceptance runner:
// dataset generation, training with an optional ablation, evaluation, and the
// CDPR diagnostic table.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "probid/config.hpp"
#include "probid/cro.hpp"
#include "probid/inference.hpp"

namespace probid {

/// Generates the configured dataset, with noise injection if requested.
/// Trajectory i uses market seed cfg.seed + i.
inline Dataset build_dataset(const ExperimentConfig& cfg) {
  Dataset data = generate_dataset(cfg.dataset_size, cfg.market, cfg.campaign, cfg.mixture, cfg.seed);
  if (cfg.noise_fraction > 0.0) data = inject_noise_trajectories(std::move(data), cfg.noise_fraction, cfg.market, cfg.seed);
  return data;
}

inline Evaluator make_evaluator(const ExperimentConfig& cfg) {
  return [cfg](const PolicyModel& m) { return evaluate(m, cfg.market, cfg.campaign, cfg.eval); };
}

inline TrainResult train_from_config(const ExperimentConfig& cfg, std::span<const Trajectory> data, Ablation ablation,
                                     bool periodic_eval = false) {
  return train(data, cfg.model, cfg.cro, cfg.filter, cfg.train, ablation,
               periodic_eval && cfg.train.eval_every > 0 ? make_evaluator(cfg) : Evaluator{});
}

inline EvalSummary evaluate_from_config(const ExperimentConfig& cfg, const PolicyModel& model) {
  return evaluate(model, cfg.market, cfg.campaign, cfg.eval);
}

struct KSweepRow {
  int k = 0;
  EvalSummary summary;
};

/// Trains the full model once per candidate count and evaluates each model.
inline std::vector<KSweepRow> sweep_k(const ExperimentConfig& cfg, std::span<const Trajectory> data) {
  std::vector<KSweepRow> rows;
  for (int k : cfg.sweep_k) {
    ExperimentConfig c = cfg;
    c.cro.k = k;
    const TrainResult r = train_from_config(c, data, Ablation::none);
    rows.push_back({k, evaluate_from_config(c, r.model)});
  }
  return rows;
}

inline void write_k_sweep_csv(const std::string& path, std::span<const KSweepRow> rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.precision(10);
  out << "k,value,ar,er,score\n";
  for (const KSweepRow& r : rows) {
    out << r.k << ',' << r.summary.mean_value << ',' << r.summary.mean_ar << ',' << r.summary.exceed_rate << ','
        << r.summary.mean_score << '\n';
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

inline void write_pareto_csv(const std::string& path, const SamplingTable& t) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.precision(10);
  out << "r,c,r_norm,c_norm,on_frontier,s_eff,s_com,s_len,q,prob\n";
  for (std::size_t i = 0; i < t.points.size(); ++i) {
    const ObjectivePoint& p = t.points[i];
    const QualityScore& s = t.scores[i];
    out << p.r << ',' << p.c << ',' << p.r_norm << ',' << p.c_norm << ',' << (t.on_frontier[i] ? 1 : 0) << ','
        << s.s_eff << ',' << s.s_com << ',' << s.s_len << ',' << s.q << ',' << s.prob << '\n';
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace probid
