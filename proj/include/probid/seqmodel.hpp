#pragma once

// Causal transformer over interleaved (R_t, C_t, s_t, a_t) tokens with a
// Gaussian action head (read at the s_t token) and an outcome predictor head
// (read at the a_t token).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "probid/autograd.hpp"
#include "probid/core_types.hpp"
#include "probid/rng.hpp"

namespace probid {

using ad::Matrix;

inline constexpr int kTokensPerStep = 4;

struct ModelConfig {
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_mult = 4;
  int context_steps = 16;  // max steps in the attention window
  int horizon = 48;        // size of the timestep embedding table
  double action_bound = 100.0;
  double sigma_floor = 0.1;
  double sigma_cap = 50.0;
  bool use_cost_stream = true;
  double init_std = 0.02;

  /// Desktop-scale default used by the experiments.
  static ModelConfig desk() { return ModelConfig{}; }

  /// Larger backbone (8 layers, 16 heads) for long runs.
  static ModelConfig large() {
    ModelConfig c;
    c.d_model = 128;
    c.n_layers = 8;
    c.n_heads = 16;
    c.context_steps = 48;
    return c;
  }

  /// Gradient-check scale.
  static ModelConfig tiny() {
    ModelConfig c;
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ffn_mult = 2;
    c.context_steps = 4;
    c.horizon = 4;
    c.init_std = 0.3;
    return c;
  }

  /// Sets the action bound and derives the sigma range from it.
  ModelConfig& with_action_bound(double bound) {
    action_bound = bound;
    sigma_floor = 1e-3 * bound;
    sigma_cap = 0.5 * bound;
    return *this;
  }

  void validate() const {
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) throw ConfigError("model.d_model must be divisible by model.n_heads");
    if (n_layers < 0) throw ConfigError("model.n_layers must be >= 0");
    if (ffn_mult < 1) throw ConfigError("model.ffn_mult must be >= 1");
    if (context_steps < 1) throw ConfigError("model.context_steps must be >= 1");
    if (horizon < 1) throw ConfigError("model.horizon must be >= 1");
    if (!(action_bound > 0.0)) throw ConfigError("model.action_bound must be positive");
    if (!(sigma_floor > 0.0) || !(sigma_floor < sigma_cap)) throw ConfigError("model sigma range requires 0 < floor < cap");
  }
};

/// Dataset statistics used to standardize the model inputs.
struct Normalization {
  double rtg_scale = 1.0;
  double ctg_scale = 1.0;
  double action_scale = 1.0;
  StateVector state_mean{};
  StateVector state_scale = filled(1.0);

  static StateVector filled(double v) {
    StateVector s;
    s.fill(v);
    return s;
  }
};

struct NamedTensor {
  std::string name;
  Matrix value;
};

class ParameterSet {
 public:
  std::size_t add(std::string name, Matrix value) {
    if (index_.contains(name)) throw ConfigError("duplicate tensor name '" + name + "'");
    index_[name] = tensors_.size();
    tensors_.push_back({std::move(name), std::move(value)});
    return tensors_.size() - 1;
  }

  std::size_t size() const { return tensors_.size(); }
  NamedTensor& operator[](std::size_t i) { return tensors_[i]; }
  const NamedTensor& operator[](std::size_t i) const { return tensors_[i]; }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing tensor '" + name + "'");
    return it->second;
  }
  Matrix& at(const std::string& name) { return tensors_[index(name)].value; }
  const Matrix& at(const std::string& name) const { return tensors_[index(name)].value; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::vector<NamedTensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Gradients aligned slot-for-slot with a ParameterSet.
struct GradientSet {
  std::vector<Matrix> grads;

  static GradientSet zeros_like(const ParameterSet& ps) {
    GradientSet g;
    for (const auto& t : ps) g.grads.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    return g;
  }

  void add(const GradientSet& other, double weight = 1.0) {
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += weight * other.grads[i];
  }

  void collect(const ad::Tape& tape) {
    tape.for_each_parameter_grad([&](std::size_t slot, const Matrix& g) { grads[slot] += g; });
  }

  double norm() const {
    double s = 0.0;
    for (const auto& g : grads) s += g.squaredNorm();
    return std::sqrt(s);
  }

  /// Throws naming the first tensor whose gradient is not finite.
  void check_finite(const ParameterSet& ps) const {
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!grads[i].allFinite()) throw Error("non-finite gradient in tensor '" + ps[i].name + "'");
    }
  }
};

/// One window of consecutive steps in raw (unstandardized) units.
struct ContextWindow {
  std::vector<int> timesteps;  // absolute 1-based step numbers
  std::vector<double> rtg;
  std::vector<double> ctg;
  std::vector<StateVector> states;
  std::vector<double> actions;

  std::size_t size() const { return timesteps.size(); }

  void push_back(int t, double r, double c, const StateVector& s, double a) {
    timesteps.push_back(t);
    rtg.push_back(r);
    ctg.push_back(c);
    states.push_back(s);
    actions.push_back(a);
  }

  void erase_front(std::size_t count) {
    auto drop = [count](auto& v) { v.erase(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(count)); };
    drop(timesteps);
    drop(rtg);
    drop(ctg);
    drop(states);
    drop(actions);
  }
};

/// Outputs of one recorded forward pass. mu and sigma are in raw action units;
/// r_hat and c_hat are standardized by the rtg/ctg scales.
struct ForwardResult {
  ad::Var mu;
  ad::Var sigma;
  ad::Var r_hat;
  ad::Var c_hat;
  std::vector<Matrix> keys;    // per layer, projected keys of every token
  std::vector<Matrix> values;  // per layer, projected values of every token
};

class PolicyModel {
 public:
  ModelConfig config;
  Normalization norm;
  ParameterSet params;

  PolicyModel() = default;

  /// Fresh model: projection weights ~ N(0, init_std), biases 0, norms at identity.
  static PolicyModel initialize(const ModelConfig& config, const Normalization& norm, std::uint64_t seed) {
    config.validate();
    PolicyModel m;
    m.config = config;
    m.norm = norm;
    Rng rng = make_rng(seed, {kInitStream});
    std::normal_distribution<double> nd(0.0, config.init_std);
    const int d = config.d_model;
    const int hidden = d * config.ffn_mult;
    auto randn = [&](int r, int c) {
      Matrix w(r, c);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = nd(rng);
      return w;
    };
    auto zeros = [](int r, int c) { return Matrix::Zero(r, c).eval(); };
    auto ones = [](int r, int c) { return Matrix::Ones(r, c).eval(); };
    ParameterSet& p = m.params;
    p.add("embed.rtg.w", randn(1, d));
    p.add("embed.rtg.b", zeros(1, d));
    p.add("embed.ctg.w", randn(1, d));
    p.add("embed.ctg.b", zeros(1, d));
    p.add("embed.state.w", randn(static_cast<int>(kStateDim), d));
    p.add("embed.state.b", zeros(1, d));
    p.add("embed.action.w", randn(1, d));
    p.add("embed.action.b", zeros(1, d));
    p.add("embed.time", randn(config.horizon, d));
    p.add("embed.ln.g", ones(1, d));
    p.add("embed.ln.b", zeros(1, d));
    for (int l = 0; l < config.n_layers; ++l) {
      const std::string b = "block" + std::to_string(l) + ".";
      p.add(b + "ln1.g", ones(1, d));
      p.add(b + "ln1.b", zeros(1, d));
      for (const char* w : {"wq", "wk", "wv", "wo"}) {
        p.add(b + "attn." + w, randn(d, d));
        p.add(b + "attn.b" + std::string(w + 1), zeros(1, d));
      }
      p.add(b + "ln2.g", ones(1, d));
      p.add(b + "ln2.b", zeros(1, d));
      p.add(b + "ffn.w1", randn(d, hidden));
      p.add(b + "ffn.b1", zeros(1, hidden));
      p.add(b + "ffn.w2", randn(hidden, d));
      p.add(b + "ffn.b2", zeros(1, d));
    }
    p.add("final.ln.g", ones(1, d));
    p.add("final.ln.b", zeros(1, d));
    p.add("head.action.w", randn(d, 2));
    p.add("head.action.b", zeros(1, 2));
    p.add("head.predictor.w", randn(d, 2));
    p.add("head.predictor.b", zeros(1, 2));
    return m;
  }

  double sigma_map(double raw) const {
    const double s = raw >= 0 ? 1.0 / (1.0 + std::exp(-raw)) : std::exp(raw) / (1.0 + std::exp(raw));
    return config.sigma_floor + (config.sigma_cap - config.sigma_floor) * s;
  }

  /// Records the forward pass on `tape`. Parameters enter as leaves aliasing
  /// `params`, so the model must outlive the tape. With `detach_predictor`
  /// the predictor head sees a constant copy of the backbone features.
  ForwardResult forward(ad::Tape& tape, const ContextWindow& w, bool detach_predictor = false) const {
    const auto n = static_cast<Eigen::Index>(w.size());
    if (n < 1) throw ad::ShapeError("forward: empty context window");
    if (n > config.context_steps) throw ad::ShapeError("forward: window longer than context_steps");
    if (w.rtg.size() != w.size() || w.ctg.size() != w.size() || w.states.size() != w.size() ||
        w.actions.size() != w.size()) {
      throw ad::ShapeError("forward: context streams have different lengths");
    }

    std::vector<ad::Var> pv(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) pv[i] = tape.parameter(params[i].value, i);
    auto P = [&](const std::string& name) { return pv[params.index(name)]; };

    Matrix rtg(n, 1), ctg(n, 1), act(n, 1), st(n, static_cast<Eigen::Index>(kStateDim));
    std::vector<Eigen::Index> time_idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      const int t = w.timesteps[u];
      if (t < 1 || t > config.horizon) throw ad::ShapeError("forward: timestep outside the embedding table");
      time_idx[u] = t - 1;
      rtg(i, 0) = w.rtg[u] / norm.rtg_scale;
      ctg(i, 0) = config.use_cost_stream ? w.ctg[u] / norm.ctg_scale : 0.0;
      act(i, 0) = w.actions[u] / norm.action_scale;
      for (std::size_t k = 0; k < kStateDim; ++k) {
        st(i, static_cast<Eigen::Index>(k)) = (w.states[u][k] - norm.state_mean[k]) / norm.state_scale[k];
      }
    }
    if (!rtg.allFinite() || !ctg.allFinite() || !act.allFinite() || !st.allFinite()) {
      throw Error("forward: non-finite input");
    }

    const ad::Var time = ad::gather_rows(P("embed.time"), time_idx);
    auto embed = [&](Matrix x, const char* name) {
      const std::string base = std::string("embed.") + name;
      return ad::add(ad::linear(tape.constant(std::move(x)), P(base + ".w"), P(base + ".b")), time);
    };
    const ad::Var tokens[kTokensPerStep] = {embed(std::move(rtg), "rtg"), embed(std::move(ctg), "ctg"),
                                            embed(std::move(st), "state"), embed(std::move(act), "action")};
    ad::Var x = ad::layer_norm(ad::interleave_rows(tokens), P("embed.ln.g"), P("embed.ln.b"));

    ForwardResult out;
    for (int l = 0; l < config.n_layers; ++l) {
      const std::string b = "block" + std::to_string(l) + ".";
      const ad::Var h = ad::layer_norm(x, P(b + "ln1.g"), P(b + "ln1.b"));
      const ad::Var q = ad::linear(h, P(b + "attn.wq"), P(b + "attn.bq"));
      const ad::Var k = ad::linear(h, P(b + "attn.wk"), P(b + "attn.bk"));
      const ad::Var v = ad::linear(h, P(b + "attn.wv"), P(b + "attn.bv"));
      out.keys.push_back(k.value());
      out.values.push_back(v.value());
      const ad::Var attn = ad::causal_attention(q, k, v, config.n_heads);
      x = ad::add(x, ad::linear(attn, P(b + "attn.wo"), P(b + "attn.bo")));
      const ad::Var h2 = ad::layer_norm(x, P(b + "ln2.g"), P(b + "ln2.b"));
      const ad::Var f = ad::linear(ad::gelu(ad::linear(h2, P(b + "ffn.w1"), P(b + "ffn.b1"))), P(b + "ffn.w2"),
                                   P(b + "ffn.b2"));
      x = ad::add(x, f);
    }
    x = ad::layer_norm(x, P("final.ln.g"), P("final.ln.b"));

    const ad::Var at_state = ad::select_rows(x, 2, kTokensPerStep, n);
    ad::Var at_action = ad::select_rows(x, 3, kTokensPerStep, n);
    if (detach_predictor) at_action = tape.constant(at_action.value());
    const ad::Var policy = ad::linear(at_state, P("head.action.w"), P("head.action.b"));
    const ad::Var pred = ad::linear(at_action, P("head.predictor.w"), P("head.predictor.b"));
    out.mu = ad::scale(ad::sigmoid(ad::column(policy, 0)), config.action_bound);
    out.sigma = ad::add_scalar(ad::scale(ad::sigmoid(ad::column(policy, 1)), config.sigma_cap - config.sigma_floor),
                               config.sigma_floor);
    out.r_hat = ad::column(pred, 0);
    out.c_hat = ad::column(pred, 1);
    return out;
  }

  /// Predictor outputs (standardized, one row per query) at the action token
  /// of window step steps[j] when that token carries actions[j] in place of
  /// the logged action. Earlier tokens are reused from `fwd`, which is exact
  /// under causal attention.
  Matrix predict_with_action(const ForwardResult& fwd, const ContextWindow& w, std::span<const std::size_t> steps,
                             std::span<const double> actions) const {
    const auto m = static_cast<Eigen::Index>(steps.size());
    const int d = config.d_model;
    const int heads = config.n_heads;
    const int dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix x(m, d);
    for (Eigen::Index j = 0; j < m; ++j) {
      const std::size_t i = steps[static_cast<std::size_t>(j)];
      const double a = actions[static_cast<std::size_t>(j)] / norm.action_scale;
      x.row(j) = a * params.at("embed.action.w").row(0) + params.at("embed.action.b").row(0) +
                 params.at("embed.time").row(w.timesteps[i] - 1);
    }
    x = layer_norm_rows(x, params.at("embed.ln.g"), params.at("embed.ln.b"));

    for (int l = 0; l < config.n_layers; ++l) {
      const std::string b = "block" + std::to_string(l) + ".";
      const Matrix h = layer_norm_rows(x, params.at(b + "ln1.g"), params.at(b + "ln1.b"));
      const Matrix q = (h * params.at(b + "attn.wq")).rowwise() + params.at(b + "attn.bq").row(0);
      const Matrix k = (h * params.at(b + "attn.wk")).rowwise() + params.at(b + "attn.bk").row(0);
      const Matrix v = (h * params.at(b + "attn.wv")).rowwise() + params.at(b + "attn.bv").row(0);
      const Matrix& keys = fwd.keys[static_cast<std::size_t>(l)];
      const Matrix& vals = fwd.values[static_cast<std::size_t>(l)];
      Matrix attn(m, d);
      for (int hd = 0; hd < heads; ++hd) {
        const auto qh = q.middleCols(hd * dh, dh);
        const auto kh = k.middleCols(hd * dh, dh);
        const auto vh = v.middleCols(hd * dh, dh);
        // Scores against every cached token; entries past each query's own
        // position are zeroed after the softmax.
        Matrix s = (qh * keys.middleCols(hd * dh, dh).transpose()) * inv_sqrt;
        Eigen::VectorXd self = qh.cwiseProduct(kh).rowwise().sum() * inv_sqrt;
        for (Eigen::Index j = 0; j < m; ++j) {
          const auto pos = static_cast<Eigen::Index>(steps[static_cast<std::size_t>(j)]) * kTokensPerStep + 3;
          auto row = s.row(j).head(pos).array();
          const double mx = pos > 0 ? std::max(row.maxCoeff(), self(j)) : self(j);
          row = (row - mx).exp();
          self(j) = std::exp(self(j) - mx);
          const double z = row.sum() + self(j);
          row /= z;
          self(j) /= z;
          s.row(j).tail(s.cols() - pos).setZero();
        }
        attn.middleCols(hd * dh, dh).noalias() = s * vals.middleCols(hd * dh, dh);
        attn.middleCols(hd * dh, dh) += self.asDiagonal() * vh;
      }
      x += (attn * params.at(b + "attn.wo")).rowwise() + params.at(b + "attn.bo").row(0);
      const Matrix h2 = layer_norm_rows(x, params.at(b + "ln2.g"), params.at(b + "ln2.b"));
      Matrix f = (h2 * params.at(b + "ffn.w1")).rowwise() + params.at(b + "ffn.b1").row(0);
      x += (ad::gelu_value(f) * params.at(b + "ffn.w2")).rowwise() + params.at(b + "ffn.b2").row(0);
    }
    x = layer_norm_rows(x, params.at("final.ln.g"), params.at("final.ln.b"));
    return (x * params.at("head.predictor.w")).rowwise() + params.at("head.predictor.b").row(0);
  }

  /// Action mean at the last step of the window (inference path).
  double act_mean(const ContextWindow& w) const {
    ad::Tape tape(false);
    const ForwardResult f = forward(tape, w);
    return f.mu.value()(f.mu.rows() - 1, 0);
  }

 private:
  static Matrix layer_norm_rows(const Matrix& x, const Matrix& g, const Matrix& b) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mu = x.row(i).mean();
      const double var = (x.row(i).array() - mu).square().mean();
      const double inv = 1.0 / std::sqrt(var + ad::kLayerNormEps);
      out.row(i) = ((x.row(i).array() - mu) * inv) * g.row(0).array() + b.row(0).array();
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Policy likelihood terms

inline constexpr double kHalfLogTwoPi = 0.91893853320467274178;  // 0.5 * log(2 pi)

/// Mean Gaussian negative log-likelihood of `actions` (n x 1 constants).
inline ad::Var nll_loss(ad::Var mu, ad::Var sigma, const Matrix& actions) {
  ad::Tape& t = *mu.tape;
  const ad::Var a = t.constant(actions);
  const ad::Var z = ad::div(ad::sub(a, mu), sigma);
  const ad::Var per_step = ad::add_scalar(ad::add(ad::log(sigma), ad::scale(ad::square(z), 0.5)), kHalfLogTwoPi);
  return ad::mean(per_step);
}

/// Mean differential entropy 0.5 * log(2 pi e sigma^2).
inline ad::Var entropy(ad::Var sigma) {
  return ad::add_scalar(ad::mean(ad::log(sigma)), kHalfLogTwoPi + 0.5);
}

// ---------------------------------------------------------------------------
// Checkpoint: "PROBIDCK", u32 version, u64 tensor count, then per tensor
// u32 name length, name bytes, u32 rank, u64 dims, f64 values; all little-endian.

inline constexpr char kCheckpointMagic[8] = {'P', 'R', 'O', 'B', 'I', 'D', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class T>
void write_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw CheckpointError("checkpoint truncated");
  return value;
}

inline Matrix scalar_tensor(double v) { return Matrix::Constant(1, 1, v); }

}  // namespace detail

/// All tensors stored in a checkpoint: parameters, then normalization
/// statistics and model configuration as named tensors.
inline std::vector<NamedTensor> checkpoint_tensors(const PolicyModel& model) {
  using detail::scalar_tensor;
  std::vector<NamedTensor> out(model.params.begin(), model.params.end());
  const Normalization& n = model.norm;
  out.push_back({"norm.rtg_scale", scalar_tensor(n.rtg_scale)});
  out.push_back({"norm.ctg_scale", scalar_tensor(n.ctg_scale)});
  out.push_back({"norm.action_scale", scalar_tensor(n.action_scale)});
  Matrix mean(1, static_cast<Eigen::Index>(kStateDim)), scale(1, static_cast<Eigen::Index>(kStateDim));
  for (std::size_t k = 0; k < kStateDim; ++k) {
    mean(0, static_cast<Eigen::Index>(k)) = n.state_mean[k];
    scale(0, static_cast<Eigen::Index>(k)) = n.state_scale[k];
  }
  out.push_back({"norm.state_mean", mean});
  out.push_back({"norm.state_scale", scale});
  const ModelConfig& c = model.config;
  out.push_back({"config.d_model", scalar_tensor(c.d_model)});
  out.push_back({"config.n_layers", scalar_tensor(c.n_layers)});
  out.push_back({"config.n_heads", scalar_tensor(c.n_heads)});
  out.push_back({"config.ffn_mult", scalar_tensor(c.ffn_mult)});
  out.push_back({"config.context_steps", scalar_tensor(c.context_steps)});
  out.push_back({"config.horizon", scalar_tensor(c.horizon)});
  out.push_back({"config.action_bound", scalar_tensor(c.action_bound)});
  out.push_back({"config.sigma_floor", scalar_tensor(c.sigma_floor)});
  out.push_back({"config.sigma_cap", scalar_tensor(c.sigma_cap)});
  out.push_back({"config.use_cost_stream", scalar_tensor(c.use_cost_stream ? 1.0 : 0.0)});
  out.push_back({"config.init_std", scalar_tensor(c.init_std)});
  return out;
}

inline void write_checkpoint(std::ostream& out, const PolicyModel& model) {
  const std::vector<NamedTensor> tensors = checkpoint_tensors(model);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(out, kCheckpointVersion);
  detail::write_le<std::uint64_t>(out, tensors.size());
  for (const NamedTensor& t : tensors) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_le<std::uint32_t>(out, 2);
    detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index i = 0; i < t.value.size(); ++i) detail::write_le<double>(out, t.value.data()[i]);
  }
}

inline void save_checkpoint(const PolicyModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  write_checkpoint(out, model);
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

inline PolicyModel read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in) throw CheckpointError("checkpoint truncated");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw CheckpointError("bad checkpoint magic");
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = detail::read_le<std::uint64_t>(in);
  std::map<std::string, Matrix> extra;
  std::vector<NamedTensor> tensors;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::read_le<std::uint32_t>(in);
    if (len > 4096) throw CheckpointError("implausible tensor name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw CheckpointError("checkpoint truncated");
    const auto rank = detail::read_le<std::uint32_t>(in);
    if (rank < 1 || rank > 2) throw CheckpointError("tensor '" + name + "' has unsupported rank");
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t r = 0; r < rank; ++r) dims[r] = detail::read_le<std::uint64_t>(in);
    if (rank == 1) std::swap(dims[0], dims[1]);
    if (dims[0] * dims[1] > (std::uint64_t{1} << 32)) throw CheckpointError("tensor '" + name + "' too large");
    Matrix value(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
    for (Eigen::Index k = 0; k < value.size(); ++k) value.data()[k] = detail::read_le<double>(in);
    tensors.push_back({std::move(name), std::move(value)});
  }

  PolicyModel model;
  auto take = [&](const std::string& name) -> double {
    for (const auto& t : tensors) {
      if (t.name == name) return t.value(0, 0);
    }
    throw CheckpointError("checkpoint is missing '" + name + "'");
  };
  ModelConfig& c = model.config;
  c.d_model = static_cast<int>(take("config.d_model"));
  c.n_layers = static_cast<int>(take("config.n_layers"));
  c.n_heads = static_cast<int>(take("config.n_heads"));
  c.ffn_mult = static_cast<int>(take("config.ffn_mult"));
  c.context_steps = static_cast<int>(take("config.context_steps"));
  c.horizon = static_cast<int>(take("config.horizon"));
  c.action_bound = take("config.action_bound");
  c.sigma_floor = take("config.sigma_floor");
  c.sigma_cap = take("config.sigma_cap");
  c.use_cost_stream = take("config.use_cost_stream") != 0.0;
  c.init_std = take("config.init_std");
  Normalization& n = model.norm;
  n.rtg_scale = take("norm.rtg_scale");
  n.ctg_scale = take("norm.ctg_scale");
  n.action_scale = take("norm.action_scale");
  for (const auto& t : tensors) {
    if (t.name == "norm.state_mean" || t.name == "norm.state_scale") {
      if (t.value.size() != static_cast<Eigen::Index>(kStateDim)) throw CheckpointError("bad state statistics");
      StateVector& dst = t.name == "norm.state_mean" ? n.state_mean : n.state_scale;
      for (std::size_t k = 0; k < kStateDim; ++k) dst[k] = t.value.data()[k];
    } else if (!t.name.starts_with("norm.") && !t.name.starts_with("config.")) {
      model.params.add(t.name, t.value);
    }
  }
  // Shapes must match a freshly initialized model of the stored configuration.
  const PolicyModel reference = PolicyModel::initialize(c, n, 0);
  if (reference.params.size() != model.params.size()) throw CheckpointError("checkpoint tensor set does not match its configuration");
  for (const auto& t : reference.params) {
    const Matrix& got = model.params.at(t.name);
    if (got.rows() != t.value.rows() || got.cols() != t.value.cols()) {
      throw CheckpointError("tensor '" + t.name + "' has the wrong shape");
    }
  }
  return model;
}

inline PolicyModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace probid
