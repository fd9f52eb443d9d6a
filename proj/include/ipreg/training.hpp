#pragma once

// Empirical risk minimization for null-space and residual networks:
//   (1/N) Σ ‖x_i − Φ_θ(z_i)‖² + weight_decay·‖θ‖²
// with full-batch gradient descent, momentum and step halving.

#include "ipreg/io.hpp"
#include "ipreg/nets.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ipreg {

struct TrainingPair {
  Vector target; // x_i, the desired reconstruction
  Vector input;  // z_i, the network input
};

struct Dataset {
  std::vector<TrainingPair> pairs;

  explicit Dataset(std::vector<TrainingPair> p) : pairs(std::move(p)) {
    if (pairs.empty()) throw ConfigError("Dataset: no pairs");
    for (const auto& q : pairs) {
      require_dim("Dataset target", pairs.front().target.size(), q.target.size());
      require_dim("Dataset input", pairs.front().input.size(), q.input.size());
    }
  }
  std::size_t size() const { return pairs.size(); }
};

using Reconstructor = std::function<Vector(const Vector&)>;

/// Pairs (x_i, B(A x_i)).
inline Dataset make_training_pairs(const Operator& op, const Reconstructor& reconstructor,
                                   const std::vector<Vector>& signals) {
  if (signals.empty()) throw ConfigError("make_training_pairs: no signals");
  std::vector<TrainingPair> pairs;
  pairs.reserve(signals.size());
  for (const auto& x : signals) {
    require_dim("make_training_pairs", op.in_dim(), x.size());
    pairs.push_back({x, reconstructor(op.apply(x))});
  }
  return Dataset(std::move(pairs));
}

enum class NetKind { NullSpace, Residual };

/// Φ = Id + P N (null-space) or Id + N (residual).
struct CorrectionNet {
  NetKind kind = NetKind::Residual;
  FeedforwardNet base;
  std::optional<ProjectionHandle> projection;

  static CorrectionNet residual(FeedforwardNet n) {
    if (n.in_dim() != n.out_dim())
      throw DimensionError("CorrectionNet: net must be square", n.in_dim(), n.out_dim());
    return {NetKind::Residual, std::move(n), std::nullopt};
  }
  static CorrectionNet null_space(const NullSpaceNet& n) {
    return {NetKind::NullSpace, n.base, n.projection};
  }
  NullSpaceNet as_null_space() const {
    if (kind != NetKind::NullSpace || !projection)
      throw ConfigError("CorrectionNet: not a null-space network");
    return NullSpaceNet(base, *projection);
  }

  Vector correction_map(const Vector& v) const {
    return kind == NetKind::NullSpace ? projection->apply(v) : v;
  }
  Vector operator()(const Vector& z) const { return z + correction_map(base(z)); }
};

struct RiskTerms {
  double data = 0.0;
  double penalty = 0.0;
  double total() const { return data + penalty; }
};

inline RiskTerms empirical_risk(const CorrectionNet& net, const Dataset& data,
                                double weight_decay) {
  RiskTerms t;
  for (const auto& p : data.pairs) t.data += (p.target - net(p.input)).squaredNorm();
  t.data /= static_cast<double>(data.size());
  t.penalty = weight_decay * net.base.params().squaredNorm();
  return t;
}

inline RiskTerms empirical_risk(NetKind kind, const NullSpaceNet& net, const Dataset& data,
                                double weight_decay) {
  CorrectionNet c = kind == NetKind::NullSpace ? CorrectionNet::null_space(net)
                                               : CorrectionNet::residual(net.base);
  return empirical_risk(c, data, weight_decay);
}

struct RiskEvaluation {
  RiskTerms terms;
  Vector grad; // w.r.t. θ
};

/// Risk and its gradient over the pairs with the given indices (all when
/// `subset` is empty). The data term is averaged over the subset.
inline RiskEvaluation risk_and_gradient(const CorrectionNet& net, const Dataset& data,
                                        double weight_decay,
                                        const std::vector<std::size_t>& subset = {}) {
  RiskEvaluation ev;
  const Vector theta = net.base.params();
  ev.grad = Vector::Zero(theta.size());
  const std::size_t count = subset.empty() ? data.size() : subset.size();
  const double scale = 1.0 / static_cast<double>(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto& p = data.pairs[subset.empty() ? k : subset[k]];
    ForwardResult fw = net_forward(net.base, p.input);
    const Vector residual = p.input + net.correction_map(fw.output) - p.target;
    ev.terms.data += residual.squaredNorm();
    // P is symmetric, so the chain rule through P applies P to the residual.
    const Vector g_out = 2.0 * scale * net.correction_map(residual);
    ev.grad += net_backward(net.base, fw.cache, g_out).grad_params;
  }
  ev.terms.data *= scale;
  ev.terms.penalty = weight_decay * theta.squaredNorm();
  ev.grad += 2.0 * weight_decay * theta;
  return ev;
}

struct TrainConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-6;
  int epochs = 200;
  int batch = 0; // 0: full batch
  std::uint64_t seed = 0;
  int max_halvings = 30;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("train: learning_rate must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw ConfigError("train: weight_decay must be non-negative");
    if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
    if (batch < 0) throw ConfigError("train: batch must be non-negative");
    if (max_halvings < 0) throw ConfigError("train: max_halvings must be non-negative");
  }
};

struct LossRecord {
  int epoch;
  double risk;
  double data_term;
  double penalty_term;
};

using LossTrace = std::vector<LossRecord>;

/// Objective for the generic optimizer: returns terms and gradient at θ for
/// the listed sample indices (all when empty).
using ParamObjective =
    std::function<RiskEvaluation(const Vector& theta, const std::vector<std::size_t>& subset)>;

struct MomentumResult {
  Vector theta;
  LossTrace trace;
};

/// Gradient descent with momentum. A step that increases the full risk is
/// halved (up to max_halvings times); if no halving helps the step is
/// dropped and the velocity reset, so the recorded risk never increases.
inline MomentumResult minimize_with_momentum(const ParamObjective& objective, Vector theta,
                                             std::size_t sample_count, const TrainConfig& cfg) {
  cfg.validate();
  MomentumResult res;
  RiskEvaluation current = objective(theta, {});
  if (!std::isfinite(current.terms.total()))
    throw NumericalError("train: non-finite initial loss");
  res.trace.push_back({0, current.terms.total(), current.terms.data, current.terms.penalty});

  const bool minibatch = cfg.batch > 0 && static_cast<std::size_t>(cfg.batch) < sample_count;
  std::vector<std::size_t> order(sample_count);
  for (std::size_t i = 0; i < sample_count; ++i) order[i] = i;
  if (minibatch) {
    Rng rng(cfg.seed);
    for (std::size_t i = sample_count; i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.index(static_cast<Index>(i)))]);
  }
  std::size_t cursor = 0;

  Vector velocity = Vector::Zero(theta.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Vector grad = current.grad;
    if (minibatch) {
      std::vector<std::size_t> subset;
      for (int b = 0; b < cfg.batch; ++b) {
        subset.push_back(order[cursor]);
        cursor = (cursor + 1) % sample_count;
      }
      grad = objective(theta, subset).grad;
    }
    if (!grad.allFinite()) throw NumericalError("train: non-finite gradient");
    const Vector step = cfg.momentum * velocity - cfg.learning_rate * grad;
    bool accepted = false;
    double factor = 1.0;
    for (int h = 0; h <= cfg.max_halvings; ++h, factor *= 0.5) {
      const Vector candidate = theta + factor * step;
      RiskEvaluation trial = objective(candidate, {});
      if (!std::isfinite(trial.terms.total())) continue;
      if (trial.terms.total() <= current.terms.total()) {
        theta = candidate;
        velocity = factor * step;
        current = std::move(trial);
        accepted = true;
        break;
      }
    }
    if (!accepted) velocity.setZero();
    res.trace.push_back({epoch, current.terms.total(), current.terms.data, current.terms.penalty});
  }
  res.theta = std::move(theta);
  return res;
}

struct TrainResult {
  CorrectionNet net;
  LossTrace trace;
};

inline TrainResult train(const CorrectionNet& net, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  require_dim("train: input", net.base.in_dim(), data.pairs.front().input.size());
  require_dim("train: target", net.base.out_dim(), data.pairs.front().target.size());
  CorrectionNet work = net;
  ParamObjective objective = [&](const Vector& theta, const std::vector<std::size_t>& subset) {
    work.base.set_params(theta);
    return risk_and_gradient(work, data, cfg.weight_decay, subset);
  };
  MomentumResult m = minimize_with_momentum(objective, net.base.params(), data.size(), cfg);
  work.base.set_params(m.theta);
  return {std::move(work), std::move(m.trace)};
}

inline TrainResult train(NetKind kind, const NullSpaceNet& net, const Dataset& data,
                         const TrainConfig& cfg) {
  CorrectionNet c = kind == NetKind::NullSpace ? CorrectionNet::null_space(net)
                                               : CorrectionNet::residual(net.base);
  return train(c, data, cfg);
}

inline io::CsvWriter loss_trace_csv(const LossTrace& trace, const std::string& config_hash) {
  io::CsvWriter w(config_hash, {"epoch", "risk", "data_term", "penalty_term"});
  for (const auto& r : trace) w.row(r.epoch, r.risk, r.data_term, r.penalty_term);
  return w;
}

} // namespace ipreg
