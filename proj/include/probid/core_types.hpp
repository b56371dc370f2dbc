#pragma once

// Shared domain records for the bidding laboratory: campaigns, trajectories,
// validation, and the exact/greedy allocation solvers used as primal oracles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace probid {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed user input: configuration files, CLI values, datasets.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::size_t kStateDim = 16;
using StateVector = std::array<double, kStateDim>;

enum class RewardMode { dense, sparse };

inline std::string_view to_string(RewardMode mode) {
  return mode == RewardMode::dense ? "dense" : "sparse";
}

inline RewardMode parse_reward_mode(std::string_view text) {
  if (text == "dense") return RewardMode::dense;
  if (text == "sparse") return RewardMode::sparse;
  throw ConfigError("unknown reward_mode '" + std::string(text) + "' (expected dense|sparse)");
}

struct Impression {
  double value = 0.0;               // predicted conversion probability, in [0, 1]
  double least_winning_cost = 0.0;  // market clearing price
  double conversion_draw = 0.0;     // pre-sampled uniform for sparse rewards
};

struct CampaignConfig {
  double budget = 1.0;
  double cpa_target = 1.0;
  int horizon = 48;
  RewardMode reward_mode = RewardMode::dense;

  void validate() const {
    if (!(budget > 0.0) || !std::isfinite(budget)) throw ConfigError("campaign budget must be positive");
    if (!(cpa_target > 0.0) || !std::isfinite(cpa_target)) throw ConfigError("campaign cpa_target must be positive");
    if (horizon < 1) throw ConfigError("campaign horizon must be >= 1");
  }

  friend bool operator==(const CampaignConfig&, const CampaignConfig&) = default;
};

struct Step {
  int index = 1;  // 1-based step number t
  StateVector state{};
  double action = 0.0;
  double reward = 0.0;
  double cost = 0.0;

  friend bool operator==(const Step&, const Step&) = default;
};

struct Trajectory {
  CampaignConfig campaign;
  std::vector<Step> steps;
  double total_reward = 0.0;
  double total_cost = 0.0;

  /// Builds a trajectory with totals accumulated in step order.
  static Trajectory from_steps(const CampaignConfig& campaign, std::vector<Step> steps) {
    Trajectory traj{campaign, std::move(steps), 0.0, 0.0};
    for (const Step& s : traj.steps) {
      traj.total_reward += s.reward;
      traj.total_cost += s.cost;
    }
    return traj;
  }

  int length() const { return static_cast<int>(steps.size()); }

  /// Realized cost per unit of value; +inf when no value was acquired.
  double realized_ratio() const {
    if (total_reward <= 0.0) return std::numeric_limits<double>::infinity();
    return total_cost / total_reward;
  }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct Violation {
  std::string message;
  int step = -1;  // 1-based step index, or -1 for trajectory-level findings
};

struct ValidationResult {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

inline ValidationResult validate_trajectory(const Trajectory& traj) {
  ValidationResult result;
  auto flag = [&](std::string msg, int step = -1) { result.violations.push_back({std::move(msg), step}); };

  const CampaignConfig& c = traj.campaign;
  if (!(c.budget > 0.0)) flag("budget not positive");
  if (!(c.cpa_target > 0.0)) flag("cpa_target not positive");
  if (c.horizon < 1) flag("horizon < 1");
  if (traj.steps.empty()) {
    flag("empty trajectory");
    return result;
  }
  if (traj.length() > c.horizon) flag("trajectory longer than horizon");

  double reward_sum = 0.0;
  double cost_sum = 0.0;
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const Step& s = traj.steps[i];
    const int t = static_cast<int>(i) + 1;
    if (s.index != t) flag("step index out of sequence", t);
    for (double x : s.state) {
      if (!std::isfinite(x)) {
        flag("non-finite state feature", t);
        break;
      }
    }
    if (!(s.action >= 0.0) || !std::isfinite(s.action)) flag("negative or non-finite action", t);
    if (!(s.reward >= 0.0) || !std::isfinite(s.reward)) flag("negative or non-finite reward", t);
    if (!(s.cost >= 0.0) || !std::isfinite(s.cost)) flag("negative or non-finite cost", t);
    if (cost_sum + s.cost > c.budget) flag("step cost exceeds remaining budget", t);
    reward_sum += s.reward;
    cost_sum += s.cost;
  }
  if (reward_sum != traj.total_reward) flag("total_reward does not match step rewards");
  if (cost_sum != traj.total_cost) flag("total_cost does not match step costs");
  if (traj.total_cost > c.budget) flag("budget exceeded");
  return result;
}

// ---------------------------------------------------------------------------
// Allocation: the impression-selection problem with one budget constraint and
// one ratio (CPA) constraint.

struct AllocationItem {
  double value = 0.0;
  double cost = 0.0;
  double conversion = 0.0;
};

struct AllocationInstance {
  std::vector<AllocationItem> items;
  double budget = 0.0;
  double ratio_cap = 0.0;
};

struct AllocationResult {
  std::vector<bool> selection;
  double value = 0.0;
};

inline constexpr std::size_t kMaxExactItems = 24;

inline bool allocation_feasible(const AllocationInstance& inst, const std::vector<bool>& selection) {
  double cost = 0.0;
  double conversions = 0.0;
  for (std::size_t i = 0; i < inst.items.size(); ++i) {
    if (!selection[i]) continue;
    cost += inst.items[i].cost;
    conversions += inst.items[i].conversion;
  }
  return cost <= inst.budget && cost <= inst.ratio_cap * conversions;
}

inline double allocation_value(const AllocationInstance& inst, const std::vector<bool>& selection) {
  double value = 0.0;
  for (std::size_t i = 0; i < inst.items.size(); ++i) {
    if (selection[i]) value += inst.items[i].value;
  }
  return value;
}

/// Exhaustive search over all 2^n selections. Among optimal selections the
/// lexicographically smallest bit-vector (x_1 most significant) is returned.
inline AllocationResult solve_allocation_exact(const AllocationInstance& inst) {
  const std::size_t n = inst.items.size();
  if (n > kMaxExactItems) {
    throw SizeError("exact allocation supports at most " + std::to_string(kMaxExactItems) + " impressions, got " +
                    std::to_string(n));
  }
  AllocationResult best{std::vector<bool>(n, false), 0.0};
  std::uint64_t best_mask = 0;
  const std::uint64_t count = std::uint64_t{1} << n;
  // Iterating masks in increasing order with x_1 as the most significant bit
  // visits bit-vectors in lexicographic order, so strict improvement keeps the
  // smallest optimal one.
  for (std::uint64_t mask = 1; mask < count; ++mask) {
    double value = 0.0;
    double cost = 0.0;
    double conversions = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if ((mask >> (n - 1 - i)) & 1U) {
        value += inst.items[i].value;
        cost += inst.items[i].cost;
        conversions += inst.items[i].conversion;
      }
    }
    if (cost > inst.budget || cost > inst.ratio_cap * conversions) continue;
    if (value > best.value) {
      best.value = value;
      best_mask = mask;
    }
  }
  for (std::size_t i = 0; i < n; ++i) best.selection[i] = ((best_mask >> (n - 1 - i)) & 1U) != 0;
  best.value = allocation_value(inst, best.selection);
  return best;
}

/// Heuristic reference for large instances: value-per-cost order, zero-cost
/// items first, accepting an item only if both constraints stay satisfied.
inline AllocationResult solve_allocation_greedy(const AllocationInstance& inst) {
  const std::size_t n = inst.items.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key_less = [&](std::size_t a, std::size_t b) {
    const AllocationItem& x = inst.items[a];
    const AllocationItem& y = inst.items[b];
    const bool x_free = x.cost == 0.0;
    const bool y_free = y.cost == 0.0;
    if (x_free != y_free) return x_free;
    if (x_free) return x.value > y.value;
    return x.value / x.cost > y.value / y.cost;
  };
  std::stable_sort(order.begin(), order.end(), key_less);

  AllocationResult result{std::vector<bool>(n, false), 0.0};
  double cost = 0.0;
  double conversions = 0.0;
  for (std::size_t i : order) {
    const AllocationItem& item = inst.items[i];
    const double next_cost = cost + item.cost;
    const double next_conv = conversions + item.conversion;
    if (next_cost <= inst.budget && next_cost <= inst.ratio_cap * next_conv) {
      cost = next_cost;
      conversions = next_conv;
      result.selection[i] = true;
    }
  }
  result.value = allocation_value(inst, result.selection);
  return result;
}

}  // namespace probid
