#pragma once

// Offline log generation from a mixture of behavior policies, the line-
// delimited trajectory file format, and the dataset manifest.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "probid/auction_sim.hpp"
#include "probid/core_types.hpp"
#include "probid/rng.hpp"

namespace probid {

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr int kGeneratorVersion = 1;

enum class BehaviorKind { constant_lambda, noisy_pid_pacer, random_walk_lambda };

inline std::string_view to_string(BehaviorKind kind) {
  switch (kind) {
    case BehaviorKind::constant_lambda: return "constant_lambda";
    case BehaviorKind::noisy_pid_pacer: return "noisy_pid_pacer";
    case BehaviorKind::random_walk_lambda: return "random_walk_lambda";
  }
  return "unknown";
}

inline BehaviorKind parse_behavior_kind(std::string_view text) {
  if (text == "constant_lambda") return BehaviorKind::constant_lambda;
  if (text == "noisy_pid_pacer") return BehaviorKind::noisy_pid_pacer;
  if (text == "random_walk_lambda") return BehaviorKind::random_walk_lambda;
  throw ConfigError("unknown behavior policy kind '" + std::string(text) + "'");
}

/// Logging policy. The starting multiplier is cpa_target * U[multiplier_low,
/// multiplier_high], drawn once per episode.
struct BehaviorPolicy {
  BehaviorKind kind = BehaviorKind::constant_lambda;
  double multiplier_low = 1.0;
  double multiplier_high = 1.0;
  double gain = 3.0;          // noisy_pid_pacer: log-lambda correction per unit spend-fraction error
  double walk_sigma = 0.15;   // random_walk_lambda: log-lambda step size
  double noise_scale = 0.0;   // multiplicative log-normal noise on the emitted lambda
  double early_stop_prob = 0.0;
  double max_multiplier = 10.0;  // emitted lambda capped at cpa_target * max_multiplier

  static BehaviorPolicy constant(double multiplier) {
    BehaviorPolicy p;
    p.kind = BehaviorKind::constant_lambda;
    p.multiplier_low = p.multiplier_high = multiplier;
    return p;
  }

  void validate() const {
    if (!(multiplier_low >= 0.0) || !(multiplier_high >= multiplier_low)) {
      throw ConfigError("behavior multipliers must satisfy 0 <= low <= high");
    }
    if (!(noise_scale >= 0.0)) throw ConfigError("behavior noise_scale must be nonnegative");
    if (!(walk_sigma >= 0.0)) throw ConfigError("behavior walk_sigma must be nonnegative");
    if (!(gain >= 0.0)) throw ConfigError("behavior gain must be nonnegative");
    if (!(early_stop_prob >= 0.0 && early_stop_prob < 1.0)) throw ConfigError("behavior early_stop_prob must be in [0,1)");
    if (!(max_multiplier > 0.0)) throw ConfigError("behavior max_multiplier must be positive");
  }
};

struct MixtureEntry {
  BehaviorPolicy policy;
  double weight = 1.0;
};

/// Per-trajectory campaign draw: budget and CPA target uniform in their ranges.
struct CampaignSampler {
  double budget_low = 400.0;
  double budget_high = 2000.0;
  double cpa_low = 6.0;
  double cpa_high = 12.0;
  int horizon = 48;
  RewardMode reward_mode = RewardMode::dense;

  static CampaignSampler fixed(const CampaignConfig& c) {
    return {c.budget, c.budget, c.cpa_target, c.cpa_target, c.horizon, c.reward_mode};
  }

  void validate() const {
    if (!(budget_low > 0.0) || budget_high < budget_low) throw ConfigError("campaign budget range invalid");
    if (!(cpa_low > 0.0) || cpa_high < cpa_low) throw ConfigError("campaign cpa range invalid");
    if (horizon < 1) throw ConfigError("campaign horizon must be >= 1");
  }

  CampaignConfig sample(std::uint64_t seed) const {
    Rng rng = make_rng(seed, {kCampaignStream});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    CampaignConfig c;
    c.budget = budget_low + (budget_high - budget_low) * u(rng);
    c.cpa_target = cpa_low + (cpa_high - cpa_low) * u(rng);
    c.horizon = horizon;
    c.reward_mode = reward_mode;
    return c;
  }
};

/// Mixed-quality logging population: fixed multipliers, spend-rate pacers and
/// drifting multipliers, some of them stopping early.
inline std::vector<MixtureEntry> default_mixture() {
  BehaviorPolicy constant;
  constant.kind = BehaviorKind::constant_lambda;
  constant.multiplier_low = 0.5;
  constant.multiplier_high = 2.5;
  constant.noise_scale = 0.1;
  constant.early_stop_prob = 0.01;

  BehaviorPolicy pacer;
  pacer.kind = BehaviorKind::noisy_pid_pacer;
  pacer.multiplier_low = 0.7;
  pacer.multiplier_high = 1.5;
  pacer.gain = 3.0;
  pacer.noise_scale = 0.2;

  BehaviorPolicy walk;
  walk.kind = BehaviorKind::random_walk_lambda;
  walk.multiplier_low = 0.4;
  walk.multiplier_high = 3.0;
  walk.walk_sigma = 0.2;
  walk.early_stop_prob = 0.01;

  return {{constant, 0.3}, {pacer, 0.4}, {walk, 0.3}};
}

/// Stateful per-episode controller for a behavior policy.
inline StepPolicy make_behavior_controller(const BehaviorPolicy& policy, const CampaignConfig& campaign,
                                           std::uint64_t seed) {
  Rng rng = make_rng(seed, {kPolicyStream});
  std::uniform_real_distribution<double> u(policy.multiplier_low, policy.multiplier_high);
  const double start = campaign.cpa_target * u(rng);
  const double cap = campaign.cpa_target * policy.max_multiplier;
  struct State {
    Rng rng;
    double log_lambda;
    bool zero;
  };
  State st{rng, std::log(std::max(start, 1e-300)), start <= 0.0};
  return [policy, cap, st](const StateVector&, const EpisodeContext& ctx) mutable -> double {
    if (st.zero) return 0.0;
    std::normal_distribution<double> z(0.0, 1.0);
    if (ctx.t > 1) {
      switch (policy.kind) {
        case BehaviorKind::constant_lambda: break;
        case BehaviorKind::noisy_pid_pacer: {
          const double planned = static_cast<double>(ctx.t - 1) / ctx.horizon;
          const double spent = ctx.cum_cost / ctx.budget;
          st.log_lambda += policy.gain * (planned - spent);
          break;
        }
        case BehaviorKind::random_walk_lambda: st.log_lambda += policy.walk_sigma * z(st.rng); break;
      }
    }
    st.log_lambda = std::min(st.log_lambda, std::log(cap));
    const double noise = policy.noise_scale > 0.0 ? policy.noise_scale * z(st.rng) : 0.0;
    return std::min(std::exp(st.log_lambda + noise), cap);
  };
}

struct Dataset {
  std::vector<Trajectory> trajectories;
  std::vector<std::uint64_t> seeds;        // market seed of each trajectory (may be empty after load)
  std::vector<std::string> policy_labels;  // behavior kind that produced each trajectory (may be empty)

  std::size_t size() const { return trajectories.size(); }
};

struct DatasetManifest {
  std::size_t trajectory_count = 0;
  int horizon = 0;
  RewardMode reward_mode = RewardMode::dense;
  std::uint64_t seed_first = 0;
  std::uint64_t seed_last = 0;
  int generator_version = kGeneratorVersion;
  struct Entry {
    double total_reward = 0.0;
    double total_cost = 0.0;
    double realized_ratio = 0.0;
    std::string policy;
  };
  std::vector<Entry> entries;

  std::pair<double, double> ratio_range() const {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const Entry& e : entries) {
      if (!std::isfinite(e.realized_ratio)) continue;
      lo = std::min(lo, e.realized_ratio);
      hi = std::max(hi, e.realized_ratio);
    }
    return {lo, hi};
  }
};

inline DatasetManifest summarize(const Dataset& data, std::uint64_t seed_first) {
  DatasetManifest m;
  m.trajectory_count = data.size();
  if (!data.trajectories.empty()) {
    m.horizon = data.trajectories.front().campaign.horizon;
    m.reward_mode = data.trajectories.front().campaign.reward_mode;
  }
  m.seed_first = seed_first;
  m.seed_last = data.size() == 0 ? seed_first : seed_first + data.size() - 1;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Trajectory& t = data.trajectories[i];
    m.entries.push_back({t.total_reward, t.total_cost, t.realized_ratio(),
                         i < data.policy_labels.size() ? data.policy_labels[i] : std::string{}});
  }
  return m;
}

inline std::vector<std::size_t> assign_mixture(std::size_t n, const std::vector<MixtureEntry>& mixture,
                                               std::uint64_t seed_base) {
  if (mixture.empty()) throw ConfigError("behavior mixture is empty");
  std::vector<double> weights;
  for (const MixtureEntry& e : mixture) {
    if (!(e.weight > 0.0) || !std::isfinite(e.weight)) throw ConfigError("behavior mixture weights must be positive");
    e.policy.validate();
    weights.push_back(e.weight);
  }
  Rng rng = make_rng(seed_base, {kMixtureStream});
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::vector<std::size_t> out(n);
  for (auto& k : out) k = pick(rng);
  return out;
}

inline Trajectory generate_trajectory(const BehaviorPolicy& policy, const MarketModel& market,
                                      const CampaignSampler& campaigns, std::uint64_t seed) {
  const CampaignConfig campaign = campaigns.sample(seed);
  MarketModel m = market;
  m.seed = seed;
  int max_steps = campaign.horizon;
  if (policy.early_stop_prob > 0.0) {
    Rng rng = make_rng(seed, {kLengthStream});
    std::geometric_distribution<int> stop(policy.early_stop_prob);
    max_steps = std::min(campaign.horizon, 1 + stop(rng));
  }
  return run_episode(make_behavior_controller(policy, campaign, seed), campaign, m, max_steps);
}

/// Generates n trajectories with market seeds seed_base + i.
inline Dataset generate_dataset(std::size_t n, const MarketModel& market, const CampaignSampler& campaigns,
                                const std::vector<MixtureEntry>& mixture, std::uint64_t seed_base) {
  if (n < 1) throw ConfigError("dataset size must be >= 1");
  campaigns.validate();
  const std::vector<std::size_t> assignment = assign_mixture(n, mixture, seed_base);
  Dataset data;
  data.trajectories.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const BehaviorPolicy& policy = mixture[assignment[i]].policy;
    const std::uint64_t seed = seed_base + i;
    data.trajectories.push_back(generate_trajectory(policy, market, campaigns, seed));
    data.seeds.push_back(seed);
    data.policy_labels.emplace_back(to_string(policy.kind));
  }
  return data;
}

/// Deliberately inefficient logging policy used for noise injection.
inline BehaviorPolicy noise_behavior() {
  BehaviorPolicy p;
  p.kind = BehaviorKind::random_walk_lambda;
  p.multiplier_low = 0.3;
  p.multiplier_high = 4.0;
  p.walk_sigma = 0.5;
  p.noise_scale = 0.6;
  return p;
}

/// Replaces floor(fraction * n) randomly chosen trajectories with noisy ones
/// replayed in the same market and campaign.
inline Dataset inject_noise_trajectories(Dataset data, double fraction, const MarketModel& market,
                                         std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("noise fraction must be in [0,1]");
  const std::size_t n = data.size();
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (count == 0) return data;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, {kNoiseStream});
  std::shuffle(idx.begin(), idx.end(), rng);
  const BehaviorPolicy noisy = noise_behavior();
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t i = idx[j];
    const std::uint64_t mseed = i < data.seeds.size() ? data.seeds[i] : derive_seed(seed, {kNoiseStream, i});
    const CampaignConfig campaign = data.trajectories[i].campaign;
    MarketModel m = market;
    m.seed = mseed;
    const std::uint64_t pseed = derive_seed(mseed, {kNoiseStream});
    data.trajectories[i] = run_episode(make_behavior_controller(noisy, campaign, pseed), campaign, m);
    if (i < data.policy_labels.size()) data.policy_labels[i] = "noise";
  }
  return data;
}

// ---------------------------------------------------------------------------
// Trajectory file: one JSON record per line.

inline std::string serialize_trajectory(const Trajectory& traj) {
  using nlohmann::ordered_json;
  ordered_json steps = ordered_json::array();
  for (const Step& s : traj.steps) {
    ordered_json st = ordered_json::array();
    for (double x : s.state) st.push_back(x);
    steps.push_back(ordered_json{{"t", s.index}, {"state", std::move(st)}, {"action", s.action},
                                 {"reward", s.reward}, {"cost", s.cost}});
  }
  ordered_json rec{{"version", kDatasetSchemaVersion},
                   {"campaign",
                    {{"budget", traj.campaign.budget},
                     {"cpa_target", traj.campaign.cpa_target},
                     {"horizon", traj.campaign.horizon},
                     {"reward_mode", std::string(to_string(traj.campaign.reward_mode))}}},
                   {"steps", std::move(steps)}};
  return rec.dump();
}

inline Trajectory parse_trajectory(const std::string& line) {
  const nlohmann::json rec = nlohmann::json::parse(line);
  const int version = rec.at("version").get<int>();
  if (version != kDatasetSchemaVersion) {
    throw ConfigError("unsupported dataset schema version " + std::to_string(version));
  }
  const auto& c = rec.at("campaign");
  CampaignConfig campaign{c.at("budget").get<double>(), c.at("cpa_target").get<double>(), c.at("horizon").get<int>(),
                          parse_reward_mode(c.at("reward_mode").get<std::string>())};
  std::vector<Step> steps;
  for (const auto& s : rec.at("steps")) {
    Step st;
    st.index = s.at("t").get<int>();
    const auto& state = s.at("state");
    if (!state.is_array() || state.size() != kStateDim) {
      throw ConfigError("state must have " + std::to_string(kStateDim) + " features");
    }
    for (std::size_t k = 0; k < kStateDim; ++k) st.state[k] = state[k].get<double>();
    st.action = s.at("action").get<double>();
    st.reward = s.at("reward").get<double>();
    st.cost = s.at("cost").get<double>();
    steps.push_back(st);
  }
  return Trajectory::from_steps(campaign, std::move(steps));
}

inline void save_dataset(const std::string& path, const std::vector<Trajectory>& trajectories) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  for (const Trajectory& t : trajectories) out << serialize_trajectory(t) << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

inline std::vector<Trajectory> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset '" + path + "'");
  std::vector<Trajectory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Trajectory traj;
    try {
      traj = parse_trajectory(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": parse error: " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const ValidationResult v = validate_trajectory(traj);
    if (!v.ok()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": invalid trajectory: " + v.violations.front().message);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
  using nlohmann::ordered_json;
  ordered_json entries = ordered_json::array();
  for (const auto& e : m.entries) {
    ordered_json ratio = std::isfinite(e.realized_ratio) ? ordered_json(e.realized_ratio) : ordered_json(nullptr);
    entries.push_back(ordered_json{{"total_reward", e.total_reward},
                                   {"total_cost", e.total_cost},
                                   {"realized_ratio", ratio},
                                   {"policy", e.policy}});
  }
  ordered_json doc{{"trajectory_count", m.trajectory_count},
                   {"horizon", m.horizon},
                   {"reward_mode", std::string(to_string(m.reward_mode))},
                   {"seed_first", m.seed_first},
                   {"seed_last", m.seed_last},
                   {"generator_version", m.generator_version},
                   {"trajectories", std::move(entries)}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << doc.dump(2) << '\n';
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest '" + path + "'");
  const nlohmann::json doc = nlohmann::json::parse(in);
  DatasetManifest m;
  m.trajectory_count = doc.at("trajectory_count").get<std::size_t>();
  m.horizon = doc.at("horizon").get<int>();
  m.reward_mode = parse_reward_mode(doc.at("reward_mode").get<std::string>());
  m.seed_first = doc.at("seed_first").get<std::uint64_t>();
  m.seed_last = doc.at("seed_last").get<std::uint64_t>();
  m.generator_version = doc.at("generator_version").get<int>();
  for (const auto& e : doc.at("trajectories")) {
    const auto& r = e.at("realized_ratio");
    m.entries.push_back({e.at("total_reward").get<double>(), e.at("total_cost").get<double>(),
                         r.is_null() ? std::numeric_limits<double>::infinity() : r.get<double>(),
                         e.at("policy").get<std::string>()});
  }
  if (m.entries.size() != m.trajectory_count) throw ConfigError("manifest count does not match its records");
  return m;
}

}  // namespace probid
