#pragma once

// Experiment configuration: a sectioned INI file with typed values, dotted
// command-line overrides, and a snapshot of the effective settings.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "probid/cdpr.hpp"
#include "probid/cro.hpp"
#include "probid/dataset.hpp"
#include "probid/inference.hpp"

namespace probid {

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  int threads = 1;

  MarketModel market;
  CampaignSampler campaign;

  std::size_t dataset_size = 500;
  double noise_fraction = 0.0;
  std::vector<MixtureEntry> mixture = default_mixture();

  FilterParams filter;
  CroParams cro;
  std::string model_preset = "desk";
  ModelConfig model = ModelConfig::desk();
  TrainConfig train = TrainConfig::desk();
  EvalConfig eval;
  std::vector<double> sweep_targets{5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0};
  std::vector<int> sweep_k{1, 2, 4, 8, 16};

  /// Run-level settings pushed into the module configs.
  void sync() {
    train.seed = seed;
    train.threads = threads;
    eval.threads = threads;
  }

  void validate() const {
    campaign.validate();
    market.validate(campaign.horizon);
    if (dataset_size < 1) throw ConfigError("dataset.n must be >= 1");
    if (!(noise_fraction >= 0.0 && noise_fraction <= 1.0)) throw ConfigError("dataset.noise_fraction must be in [0,1]");
    assign_mixture(1, mixture, 0);
    filter.validate();
    CroParams c = cro;
    if (c.tau == 0.0) c.tau = 1.0;  // 0 means "derive from the dataset"
    c.validate();
    model.validate();
    train.validate();
    eval.validate();
    if (threads < 1) throw ConfigError("run.threads must be >= 1");
    for (double t : sweep_targets) {
      if (!(t > 0.0)) throw ConfigError("sweep.targets must be positive");
    }
    for (int k : sweep_k) {
      if (k < 1) throw ConfigError("sweep.k must be >= 1");
    }
  }
};

namespace detail {

// std::uint64_t is std::size_t or unsigned long long depending on the platform.
using FieldRef = std::variant<double*, int*, std::size_t*, unsigned long long*, bool*, std::string*, RewardMode*,
                              std::vector<double>*, std::vector<int>*>;

struct Field {
  std::string key;  // "section.name"
  FieldRef ref;
};

inline std::vector<Field> config_fields(ExperimentConfig& c) {
  std::vector<Field> f{
      {"run.seed", &c.seed},
      {"run.out", &c.out_dir},
      {"run.threads", &c.threads},

      {"market.impressions_mean", &c.market.impressions_mean},
      {"market.impressions_dispersion", &c.market.impressions_dispersion},
      {"market.value_alpha", &c.market.value_alpha},
      {"market.value_beta", &c.market.value_beta},
      {"market.lwc_scale", &c.market.lwc_scale},
      {"market.lwc_value_offset", &c.market.lwc_value_offset},
      {"market.lwc_sigma", &c.market.lwc_sigma},
      {"market.lwc_profile", &c.market.lwc_profile},

      {"campaign.budget_low", &c.campaign.budget_low},
      {"campaign.budget_high", &c.campaign.budget_high},
      {"campaign.cpa_low", &c.campaign.cpa_low},
      {"campaign.cpa_high", &c.campaign.cpa_high},
      {"campaign.horizon", &c.campaign.horizon},
      {"campaign.reward_mode", &c.campaign.reward_mode},

      {"dataset.n", &c.dataset_size},
      {"dataset.noise_fraction", &c.noise_fraction},

      {"filter.kappa", &c.filter.kappa},
      {"filter.omega", &c.filter.omega},
      {"filter.t_max", &c.filter.t_max},
      {"filter.compliance_floor", &c.filter.compliance_floor},

      {"cro.gamma", &c.cro.gamma_u},
      {"cro.tau", &c.cro.tau},
      {"cro.k", &c.cro.k},
      {"cro.eps", &c.cro.eps},
      {"cro.alpha", &c.cro.alpha},
      {"cro.beta", &c.cro.beta},
      {"cro.eta", &c.cro.eta},
      {"cro.detach_predictor", &c.cro.detach_predictor},

      {"model.preset", &c.model_preset},
      {"model.d_model", &c.model.d_model},
      {"model.n_layers", &c.model.n_layers},
      {"model.n_heads", &c.model.n_heads},
      {"model.ffn_mult", &c.model.ffn_mult},
      {"model.context_steps", &c.model.context_steps},
      {"model.init_std", &c.model.init_std},

      {"train.steps", &c.train.max_steps},
      {"train.batch_size", &c.train.batch_size},
      {"train.learning_rate", &c.train.adam.learning_rate},
      {"train.beta1", &c.train.adam.beta1},
      {"train.beta2", &c.train.adam.beta2},
      {"train.adam_eps", &c.train.adam.eps},
      {"train.weight_decay", &c.train.adam.weight_decay},
      {"train.clip_norm", &c.train.adam.clip_norm},
      {"train.eval_every", &c.train.eval_every},

      {"eval.episodes", &c.eval.episodes},
      {"eval.seed_base", &c.eval.seed_base},
      {"eval.score_gamma", &c.eval.score_gamma},
      {"eval.budget_scale", &c.eval.budget_scale},

      {"sweep.targets", &c.sweep_targets},
      {"sweep.k", &c.sweep_k},
  };
  const char* names[] = {"constant", "pacer", "walk"};
  for (std::size_t i = 0; i < c.mixture.size() && i < 3; ++i) {
    const std::string p = std::string("behavior.") + names[i] + "_";
    BehaviorPolicy& b = c.mixture[i].policy;
    f.push_back({p + "weight", &c.mixture[i].weight});
    f.push_back({p + "low", &b.multiplier_low});
    f.push_back({p + "high", &b.multiplier_high});
    f.push_back({p + "gain", &b.gain});
    f.push_back({p + "walk_sigma", &b.walk_sigma});
    f.push_back({p + "noise", &b.noise_scale});
    f.push_back({p + "early_stop", &b.early_stop_prob});
  }
  return f;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  return value;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a == std::string::npos) continue;
    out.push_back(parse_number<T>(key, item.substr(a, b - a + 1)));
  }
  return out;
}

inline void assign(const Field& f, const std::string& text) {
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::string>) {
          *p = text;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (text == "true" || text == "1") *p = true;
          else if (text == "false" || text == "0") *p = false;
          else throw ConfigError(f.key + ": expected true or false, got '" + text + "'");
        } else if constexpr (std::is_same_v<T, RewardMode>) {
          try {
            *p = parse_reward_mode(text);
          } catch (const ConfigError&) {
            throw ConfigError(f.key + ": expected dense or sparse, got '" + text + "'");
          }
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
          *p = parse_list<double>(f.key, text);
        } else if constexpr (std::is_same_v<T, std::vector<int>>) {
          *p = parse_list<int>(f.key, text);
        } else {
          *p = parse_number<T>(f.key, text);
        }
      },
      f.ref);
}

inline std::string format(const Field& f) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::string>) {
          return *p;
        } else if constexpr (std::is_same_v<T, bool>) {
          return *p ? "true" : "false";
        } else if constexpr (std::is_same_v<T, RewardMode>) {
          return std::string(to_string(*p));
        } else if constexpr (std::is_same_v<T, std::vector<double>> || std::is_same_v<T, std::vector<int>>) {
          std::ostringstream ss;
          ss.precision(17);
          for (std::size_t i = 0; i < p->size(); ++i) ss << (i ? "," : "") << (*p)[i];
          return ss.str();
        } else {
          std::ostringstream ss;
          ss.precision(17);
          ss << *p;
          return ss.str();
        }
      },
      f.ref);
}

inline ModelConfig model_preset(const std::string& name) {
  if (name == "desk") return ModelConfig::desk();
  if (name == "large") return ModelConfig::large();
  if (name == "tiny") return ModelConfig::tiny();
  throw ConfigError("model.preset: unknown preset '" + name + "' (expected desk, large or tiny)");
}

}  // namespace detail

/// Keys every config file must define.
inline const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys{"run.seed", "run.out", "dataset.n"};
  return keys;
}

/// Applies `key=value` pairs on top of `base`. Unknown keys are errors. The
/// model preset is applied before the individual model keys.
inline ExperimentConfig apply_settings(ExperimentConfig base, const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "model.preset") {
      base.model = detail::model_preset(value);
      base.model_preset = value;
    }
  }
  std::vector<detail::Field> fields = detail::config_fields(base);
  for (const auto& [key, value] : kv) {
    if (key == "model.preset") continue;
    auto it = std::find_if(fields.begin(), fields.end(), [&](const detail::Field& f) { return f.key == key; });
    if (it == fields.end()) throw ConfigError("unknown config key '" + key + "'");
    detail::assign(*it, value);
  }
  base.sync();
  return base;
}

/// Parses "section.key=value".
inline std::pair<std::string, std::string> parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "' is not of the form section.key=value");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

inline ExperimentConfig load_config(std::istream& in, const std::string& source = "<config>") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ": " + e.message() + " at line " + std::to_string(e.line()));
  }
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(source + ": key '" + section + "' must be inside a section");
    }
    for (const auto& [key, value] : body) kv.emplace_back(section + "." + key, value.data());
  }
  for (const std::string& key : required_config_keys()) {
    if (std::none_of(kv.begin(), kv.end(), [&](const auto& p) { return p.first == key; })) {
      throw ConfigError(source + ": missing required key '" + key + "'");
    }
  }
  try {
    return apply_settings(ExperimentConfig{}, kv);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return load_config(in, path);
}

/// Writes every setting, so the snapshot alone reproduces the run.
inline void write_config(std::ostream& out, ExperimentConfig cfg) {
  std::string section;
  for (const detail::Field& f : detail::config_fields(cfg)) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    out << f.key.substr(dot + 1) << " = " << detail::format(f) << '\n';
  }
}

inline void save_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_config(out, cfg);
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace probid
