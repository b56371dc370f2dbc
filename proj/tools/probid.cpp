#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "probid/pipeline.hpp"
#include "probid/plot.hpp"

namespace fs = std::filesystem;
using namespace probid;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
};

ExperimentConfig resolve_config(const GlobalOptions& g) {
  ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_config_file(g.config_path);
  std::vector<std::pair<std::string, std::string>> kv;
  for (const std::string& o : g.overrides) kv.push_back(parse_override(o));
  if (g.seed) kv.emplace_back("run.seed", std::to_string(*g.seed));
  if (g.out) kv.emplace_back("run.out", *g.out);
  if (g.threads) kv.emplace_back("run.threads", std::to_string(*g.threads));
  cfg = apply_settings(std::move(cfg), kv);
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const ExperimentConfig& cfg) {
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  save_config((out / "config.ini").string(), cfg);
  return out;
}

std::string or_default(const std::string& value, const fs::path& fallback) {
  return value.empty() ? fallback.string() : value;
}

std::vector<Trajectory> load_required_dataset(const std::string& path) {
  if (!fs::exists(path)) throw Error("dataset missing: '" + path + "' (run gen-data first or pass --data)");
  return load_dataset(path);
}

PolicyModel load_required_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw Error("checkpoint missing: '" + path + "' (run train first or pass --checkpoint)");
  return load_checkpoint(path);
}

void print_summary(const std::string& label, const EvalSummary& s) {
  std::printf("%s: episodes=%zu value=%.3f cost=%.3f ar=%.4f pooled_ar=%.4f er=%.3f score=%.3f\n", label.c_str(),
              s.episodes, s.mean_value, s.mean_cost, s.mean_ar, s.pooled_ar, s.exceed_rate, s.mean_score);
}

void cmd_gen_data(const GlobalOptions& g) {
  const ExperimentConfig cfg = resolve_config(g);
  const fs::path out = prepare_out(cfg);
  const Dataset data = build_dataset(cfg);
  save_dataset((out / "dataset.jsonl").string(), data.trajectories);
  const DatasetManifest m = summarize(data, cfg.seed);
  save_manifest((out / "manifest.json").string(), m);
  const auto [lo, hi] = m.ratio_range();
  const EvalSummary s = score_trajectories(data.trajectories, cfg.eval.score_gamma);
  std::printf("wrote %zu trajectories to %s (seeds %llu..%llu)\n", m.trajectory_count,
              (out / "dataset.jsonl").c_str(), static_cast<unsigned long long>(m.seed_first),
              static_cast<unsigned long long>(m.seed_last));
  std::printf("realized cpa range [%.4f, %.4f]\n", lo, hi);
  print_summary("behavior", s);
}

void cmd_train(const GlobalOptions& g, const std::string& data_path, const std::string& ablation_name) {
  const ExperimentConfig cfg = resolve_config(g);
  const Ablation ablation = parse_ablation(ablation_name);
  const std::vector<Trajectory> data = load_required_dataset(or_default(data_path, fs::path(cfg.out_dir) / "dataset.jsonl"));
  const fs::path out = prepare_out(cfg);
  const TrainResult r = train_from_config(cfg, data, ablation, true);
  save_checkpoint(r.model, (out / "checkpoint.bin").string());
  write_metrics_csv((out / "metrics.csv").string(), r.log);
  std::printf("trained %s for %d steps; checkpoint %s\n", std::string(to_string(ablation)).c_str(), cfg.train.max_steps,
              (out / "checkpoint.bin").c_str());
  if (!r.log.empty()) std::printf("final loss %.6f\n", r.log.back().loss.total);
}

void cmd_evaluate(const GlobalOptions& g, const std::string& ckpt_path) {
  const ExperimentConfig cfg = resolve_config(g);
  const PolicyModel model = load_required_checkpoint(or_default(ckpt_path, fs::path(cfg.out_dir) / "checkpoint.bin"));
  const fs::path out = prepare_out(cfg);
  const EvalSummary s = evaluate_from_config(cfg, model);
  write_eval_csv((out / "eval.csv").string(), s);
  print_summary("model", s);
}

void cmd_pareto(const GlobalOptions& g, const std::string& data_path) {
  const ExperimentConfig cfg = resolve_config(g);
  const std::vector<Trajectory> data = load_required_dataset(or_default(data_path, fs::path(cfg.out_dir) / "dataset.jsonl"));
  const fs::path out = prepare_out(cfg);
  const SamplingTable t = sampling_distribution(data, cfg.filter);
  write_pareto_csv((out / "pareto.csv").string(), t);
  std::size_t front = 0;
  for (bool b : t.on_frontier) front += b;
  std::printf("%zu trajectories, %zu on the frontier; wrote %s\n", data.size(), front, (out / "pareto.csv").c_str());
}

void cmd_sweep_cpa(const GlobalOptions& g, const std::vector<std::string>& ckpts, std::vector<std::string> labels) {
  const ExperimentConfig cfg = resolve_config(g);
  std::vector<std::string> paths = ckpts;
  if (paths.empty()) paths.push_back((fs::path(cfg.out_dir) / "checkpoint.bin").string());
  std::vector<PolicyModel> models;
  for (const std::string& p : paths) models.push_back(load_required_checkpoint(p));
  const fs::path out = prepare_out(cfg);
  std::vector<std::string> csvs;
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (labels.size() <= i) labels.push_back(models.size() == 1 ? "model" : "model" + std::to_string(i + 1));
    const auto rows = cpa_sensitivity_sweep(models[i], cfg.market, cfg.campaign, cfg.sweep_targets, cfg.eval);
    const fs::path csv = out / (models.size() == 1 ? "sweep_cpa.csv" : "sweep_cpa_" + labels[i] + ".csv");
    write_sweep_csv(csv.string(), rows);
    csvs.push_back(csv.string());
    for (const SweepRow& r : rows) print_summary(labels[i] + " target=" + std::to_string(r.target), r.summary);
  }
  plot_sweep_files(csvs, labels, "target", "score", (out / "sweep_cpa.svg").string());
}

void cmd_sweep_k(const GlobalOptions& g, const std::string& data_path) {
  const ExperimentConfig cfg = resolve_config(g);
  const std::vector<Trajectory> data = load_required_dataset(or_default(data_path, fs::path(cfg.out_dir) / "dataset.jsonl"));
  const fs::path out = prepare_out(cfg);
  const auto rows = sweep_k(cfg, data);
  write_k_sweep_csv((out / "sweep_k.csv").string(), rows);
  for (const KSweepRow& r : rows) print_summary("k=" + std::to_string(r.k), r.summary);
  plot_sweep_files({(out / "sweep_k.csv").string()}, {"full"}, "k", "score", (out / "sweep_k.svg").string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budget- and CPA-constrained bid pacing: data generation, training, evaluation and plots"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Run seed (dataset seeds and training)");
  app.add_option("--out", g.out, "Run output directory");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--set", g.overrides, "Override a config key, e.g. --set cro.k=16");

  std::string data_path, ckpt_path, ablation = "none";
  std::vector<std::string> ckpts, labels, inputs;
  std::string plot_kind = "scatter", pareto_csv, metric = "score", x_column = "target", plot_out;

  auto* gen = app.add_subcommand("gen-data", "Generate the logged dataset and manifest");
  auto* tr = app.add_subcommand("train", "Train a policy (optionally an ablation)");
  tr->add_option("--data", data_path, "Dataset file (default <out>/dataset.jsonl)");
  tr->add_option("--ablation", ablation, "none, no-cdpr, no-cro or plain-dt")
      ->check(CLI::IsMember({"none", "no-cdpr", "no-cro", "plain-dt"}));
  auto* ev = app.add_subcommand("evaluate", "Closed-loop evaluation of a checkpoint");
  ev->add_option("--checkpoint", ckpt_path, "Checkpoint (default <out>/checkpoint.bin)");
  auto* par = app.add_subcommand("pareto", "Write the CDPR diagnostic CSV");
  par->add_option("--data", data_path, "Dataset file (default <out>/dataset.jsonl)");
  auto* pl = app.add_subcommand("plot", "Render CSV outputs to SVG");
  pl->add_option("--kind", plot_kind, "scatter or sweep")->check(CLI::IsMember({"scatter", "sweep"}));
  pl->add_option("--pareto", pareto_csv, "Pareto CSV (scatter)");
  pl->add_option("--input", inputs, "Episode CSVs (scatter overlays) or sweep CSVs");
  pl->add_option("--label", labels, "Legend label per input");
  pl->add_option("--metric", metric, "Sweep y column");
  pl->add_option("--x", x_column, "Sweep x column");
  pl->add_option("--output", plot_out, "SVG path")->required();
  auto* scpa = app.add_subcommand("sweep-cpa", "Evaluate checkpoints across CPA targets");
  scpa->add_option("--checkpoint", ckpts, "Checkpoint(s); one series per checkpoint");
  scpa->add_option("--label", labels, "Label per checkpoint");
  auto* sk = app.add_subcommand("sweep-k", "Train and evaluate across counterfactual sample counts");
  sk->add_option("--data", data_path, "Dataset file (default <out>/dataset.jsonl)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) cmd_gen_data(g);
    else if (*tr) cmd_train(g, data_path, ablation);
    else if (*ev) cmd_evaluate(g, ckpt_path);
    else if (*par) cmd_pareto(g, data_path);
    else if (*pl) {
      if (plot_kind == "scatter") {
        if (pareto_csv.empty()) throw ConfigError("plot --kind scatter requires --pareto");
        plot_scatter_files(pareto_csv, inputs, labels, plot_out);
      } else {
        plot_sweep_files(inputs, labels, x_column, metric, plot_out);
      }
      std::printf("wrote %s\n", plot_out.c_str());
    } else if (*scpa) cmd_sweep_cpa(g, ckpts, labels);
    else if (*sk) cmd_sweep_k(g, data_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
