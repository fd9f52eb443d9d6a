#pragma once

// Unrolled iterative schemes: variational-network gradient steps, cascade
// data-consistency blocks, MODL blocks and the inversion-free INDIE blocks
//
//   x_{n+1} = (Aᵀ(y − A x_n) + α N(x_n) + C x_n) / (α + C),
//
// which minimize the majorizing surrogate
//   L_n(x) = ‖Ax − y‖² + α‖x − N(x_n)‖² + C‖x − x_n‖² − ‖A(x − x_n)‖².

#include "ipreg/geometry.hpp"
#include "ipreg/nets.hpp"
#include "ipreg/training.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ipreg {

// ---------------------------------------------------------------------------
// Variational networks
// ---------------------------------------------------------------------------

/// Potential with derivative a·tanh(t/b) (value a·b·log cosh(t/b)), the
/// quadratic t²/2, or zero.
struct Potential {
  enum class Kind { LogCosh, Identity, Zero };
  Kind kind = Kind::LogCosh;
  double a = 1.0;
  double b = 1.0;

  static Potential log_cosh(double a, double b) {
    if (!(b > 0)) throw ConfigError("Potential: b must be positive");
    return {Kind::LogCosh, a, b};
  }
  static Potential identity() { return {Kind::Identity, 1.0, 1.0}; }
  static Potential zero() { return {Kind::Zero, 0.0, 1.0}; }

  double value(double t) const {
    switch (kind) {
    case Kind::LogCosh: {
      const double u = std::abs(t / b);
      return a * b * (u + std::log1p(std::exp(-2.0 * u)) - std::log(2.0));
    }
    case Kind::Identity: return 0.5 * t * t;
    case Kind::Zero: return 0.0;
    }
    return 0.0;
  }
  double derivative(double t) const {
    switch (kind) {
    case Kind::LogCosh: return a * std::tanh(t / b);
    case Kind::Identity: return t;
    case Kind::Zero: return 0.0;
    }
    return 0.0;
  }
};

struct VarNetTerm {
  Operator kernel;
  Potential potential;
};

/// One cycle c: regularizer terms φ_i(K̄_i x) and data terms ψ_i(K_i(Ax − y)).
struct VarNetCycle {
  std::vector<VarNetTerm> regularizer;
  std::vector<VarNetTerm> data;
};

struct VarNetParams {
  std::vector<VarNetCycle> cycles;
  std::vector<double> steps; // η_n; the last entry repeats
  double alpha = 1.0;

  std::size_t cycle_of(int n) const { return static_cast<std::size_t>(n) % cycles.size(); }
  double step(int n) const {
    return steps[std::min(static_cast<std::size_t>(n), steps.size() - 1)];
  }

  void validate(const Operator& op) const {
    if (cycles.empty()) throw ConfigError("VarNetParams: no cycles");
    if (steps.empty()) throw ConfigError("VarNetParams: no step sizes");
    if (!(alpha >= 0)) throw ConfigError("VarNetParams: alpha must be non-negative");
    for (const auto& c : cycles) {
      for (const auto& t : c.regularizer) {
        require_dim("VarNetParams: regularizer kernel", op.in_dim(), t.kernel.in_dim());
        if (t.potential.kind == Potential::Kind::LogCosh && !(t.potential.b > 0))
          throw ConfigError("VarNetParams: b must be positive");
      }
      for (const auto& t : c.data) {
        require_dim("VarNetParams: data kernel", op.out_dim(), t.kernel.in_dim());
        if (t.potential.kind == Potential::Kind::LogCosh && !(t.potential.b > 0))
          throw ConfigError("VarNetParams: b must be positive");
      }
    }
  }
};

/// T_c(x) = Σ_i Σ_j φ_i((K̄_i x)_j) + α Σ_i Σ_j ψ_i((K_i(Ax − y))_j).
inline double varnet_objective(const VarNetParams& params, std::size_t c, const Operator& op,
                               const Vector& y, const Vector& x) {
  const VarNetCycle& cyc = params.cycles.at(c);
  double v = 0.0;
  for (const auto& t : cyc.regularizer) {
    const Vector kx = t.kernel.apply(x);
    for (Index j = 0; j < kx.size(); ++j) v += t.potential.value(kx[j]);
  }
  const Vector r = op.apply(x) - y;
  for (const auto& t : cyc.data) {
    const Vector kr = t.kernel.apply(r);
    for (Index j = 0; j < kr.size(); ++j) v += params.alpha * t.potential.value(kr[j]);
  }
  return v;
}

/// ∇T_c(x) = Σ_i K̄_iᵀ φ′_i(K̄_i x) + α Aᵀ Σ_i K_iᵀ ψ′_i(K_i(Ax − y)).
inline Vector varnet_gradient(const VarNetParams& params, std::size_t c, const Operator& op,
                              const Vector& y, const Vector& x) {
  const VarNetCycle& cyc = params.cycles.at(c);
  Vector g = Vector::Zero(x.size());
  for (const auto& t : cyc.regularizer)
    g += t.kernel.adjoint(t.kernel.apply(x).unaryExpr(
        [&](double s) { return t.potential.derivative(s); }));
  const Vector r = op.apply(x) - y;
  Vector gd = Vector::Zero(r.size());
  for (const auto& t : cyc.data)
    gd += t.kernel.adjoint(t.kernel.apply(r).unaryExpr(
        [&](double s) { return t.potential.derivative(s); }));
  if (!cyc.data.empty()) g += params.alpha * op.adjoint(gd);
  return g;
}

/// x_{n+1} = x_n − η_n ∇T_{c(n)}(x_n), c(n) cycling through the cycles.
inline Vector varnet_step(const VarNetParams& params, const Operator& op, const Vector& y,
                          const Vector& x_n, int n) {
  params.validate(op);
  require_dim("varnet_step: data", op.out_dim(), y.size());
  require_dim("varnet_step: iterate", op.in_dim(), x_n.size());
  return x_n - params.step(n) * varnet_gradient(params, params.cycle_of(n), op, y, x_n);
}

// ---------------------------------------------------------------------------
// Cascades with data-consistency layers
// ---------------------------------------------------------------------------

/// A = S ∘ A_F with an orthogonal full operator A_F, so B_F = A_Fᵀ.
struct CascadeConfig {
  Operator full;
  std::vector<Index> sampled; // indices kept by S, strictly increasing
  double alpha = 1.0;

  Operator sampler() const { return Operator::masked_sampling(sampled, full.out_dim()); }
  Operator forward() const { return Operator::compose(sampler(), full); }

  void validate() const {
    if (full.in_dim() != full.out_dim())
      throw DimensionError("CascadeConfig: full operator must be square", full.in_dim(),
                           full.out_dim());
    if (!(alpha >= 0)) throw ConfigError("CascadeConfig: alpha must be non-negative");
    const Matrix m = materialize(full);
    const double dev =
        (m.transpose() * m - Matrix::Identity(m.cols(), m.cols())).cwiseAbs().maxCoeff();
    if (dev > 1e-10) throw ConfigError("CascadeConfig: full operator is not orthogonal");
    (void)sampler(); // validates the indices
  }
};

/// x_0 = B_F(S*(y)).
inline Vector cascade_init(const CascadeConfig& cfg, const Vector& y) {
  return cfg.full.adjoint(cfg.sampler().adjoint(y));
}

/// B_F(argmin_z ‖z − A_F N(x_n)‖² + α‖y − S z‖²), solved per coordinate.
inline Vector cascade_dc_step(const CascadeConfig& cfg, const FeedforwardNet& denoiser,
                              const Vector& y, const Vector& x_n) {
  require_dim("cascade_dc_step: data", static_cast<Index>(cfg.sampled.size()), y.size());
  require_dim("cascade_dc_step: iterate", cfg.full.in_dim(), x_n.size());
  Vector w = cfg.full.apply(denoiser(x_n));
  for (std::size_t k = 0; k < cfg.sampled.size(); ++k) {
    const Index i = cfg.sampled[k];
    w[i] = (w[i] + cfg.alpha * y[static_cast<Index>(k)]) / (1.0 + cfg.alpha);
  }
  return cfg.full.adjoint(w);
}

// ---------------------------------------------------------------------------
// MODL and INDIE blocks
// ---------------------------------------------------------------------------

/// Solves (AᵀA + αI) x = Aᵀy + α N(x_n) by CG (warm start at x_n).
inline LinearSolveResult modl_block(const Operator& op, const FeedforwardNet& denoiser,
                                    const Vector& y, const Vector& x_n, double alpha,
                                    double tol = 1e-10, int max_iter = 0) {
  if (!(alpha > 0)) throw ConfigError("modl_block: alpha must be positive");
  require_dim("modl_block: data", op.out_dim(), y.size());
  require_dim("modl_block: iterate", op.in_dim(), x_n.size());
  const Vector rhs = op.adjoint(y) + alpha * denoiser(x_n);
  auto m = [&](const Vector& v) -> Vector { return op.adjoint(op.apply(v)) + alpha * v; };
  const int iters = max_iter > 0 ? max_iter : static_cast<int>(10 * op.in_dim() + 50);
  return conjugate_gradient(m, rhs, x_n, tol, iters);
}

/// x_{n+1} = (Aᵀ(y − A x_n) + α N(x_n) + C x_n) / (α + C).
inline Vector indie_block(const Operator& op, const FeedforwardNet& denoiser, const Vector& y,
                          const Vector& x_n, double alpha, double c) {
  if (!(alpha >= 0) || !(alpha + c > 0))
    throw ConfigError("indie_block: need alpha >= 0 and alpha + C > 0");
  require_dim("indie_block: data", op.out_dim(), y.size());
  require_dim("indie_block: iterate", op.in_dim(), x_n.size());
  return (op.adjoint(y - op.apply(x_n)) + alpha * denoiser(x_n) + c * x_n) / (alpha + c);
}

/// L_n(x) = ‖Ax − y‖² + α‖x − z‖² + C‖x − x_n‖² − ‖A(x − x_n)‖², z = N(x_n).
inline double indie_surrogate(const Operator& op, const Vector& z, const Vector& y,
                              const Vector& x_n, double alpha, double c, const Vector& x) {
  return (op.apply(x) - y).squaredNorm() + alpha * (x - z).squaredNorm() +
         c * (x - x_n).squaredNorm() - op.apply(x - x_n).squaredNorm();
}

/// The same quadratic expanded in x:
///   −2⟨Aᵀ(y − A x_n) + αz + C x_n, x⟩ + (α + C)‖x‖²
///   + α‖z‖² + C‖x_n‖² − ‖A x_n‖² + ‖y‖².
inline double indie_surrogate_expanded(const Operator& op, const Vector& z, const Vector& y,
                                       const Vector& x_n, double alpha, double c,
                                       const Vector& x) {
  const Vector ax_n = op.apply(x_n);
  const Vector lin = op.adjoint(y - ax_n) + alpha * z + c * x_n;
  return -2.0 * lin.dot(x) + (alpha + c) * x.squaredNorm() + alpha * z.squaredNorm() +
         c * x_n.squaredNorm() - ax_n.squaredNorm() + y.squaredNorm();
}

/// T(x) = ‖Ax − y‖² + α‖x − N(x)‖².
inline double modl_objective(const Operator& op, const FeedforwardNet& denoiser, const Vector& y,
                             double alpha, const Vector& x) {
  return (op.apply(x) - y).squaredNorm() + alpha * (x - denoiser(x)).squaredNorm();
}

// ---------------------------------------------------------------------------
// Running unrolled networks
// ---------------------------------------------------------------------------

enum class UnrolledKind { VarNet, Cascade, Modl, Indie };

inline std::string to_string(UnrolledKind k) {
  switch (k) {
  case UnrolledKind::VarNet: return "varnet";
  case UnrolledKind::Cascade: return "cascade";
  case UnrolledKind::Modl: return "modl";
  case UnrolledKind::Indie: return "indie";
  }
  return "?";
}

struct UnrolledConfig {
  int n_blocks = 10;
  double alpha = 1.0;
  double c = 0.0;                       // INDIE; ≤ 0 selects 1.01·‖A‖²
  std::vector<FeedforwardNet> denoisers; // one (shared) or one per block
  double cg_tol = 1e-10;
  int cg_max_iter = 0;
  double stop_tol = 0.0;                // > 0: stop once ‖x_{n+1} − x_n‖ ≤ stop_tol·(1 + ‖x_n‖)
  std::optional<VarNetParams> varnet;
  std::optional<CascadeConfig> cascade;

  const FeedforwardNet& denoiser(int block) const {
    return denoisers.size() == 1 ? denoisers.front()
                                 : denoisers.at(static_cast<std::size_t>(block));
  }
};

/// Smallest admissible majorization constant: ‖A‖² from power iteration.
inline double majorization_bound(const Operator& op) {
  const double s = operator_norm(op, 1e-10, 1000000, 0x5eed);
  return s * s;
}

/// Checks the configuration for `kind` and returns the INDIE constant to use.
inline double validate_unrolled(UnrolledKind kind, const UnrolledConfig& cfg,
                                const Operator& op) {
  if (cfg.n_blocks < 0) throw ConfigError("unrolled: n_blocks must be non-negative");
  double c = cfg.c;
  if (kind == UnrolledKind::VarNet) {
    if (!cfg.varnet) throw ConfigError("unrolled: varnet parameters missing");
    cfg.varnet->validate(op);
    return c;
  }
  if (cfg.denoisers.size() != 1 && cfg.denoisers.size() != static_cast<std::size_t>(cfg.n_blocks))
    throw ConfigError("unrolled: need one shared denoiser or one per block");
  for (const auto& d : cfg.denoisers) {
    require_dim("unrolled: denoiser input", op.in_dim(), d.in_dim());
    require_dim("unrolled: denoiser output", op.in_dim(), d.out_dim());
  }
  if (kind == UnrolledKind::Indie) {
    if (!(cfg.alpha >= 0)) throw ConfigError("unrolled: alpha must be non-negative");
    const double bound = majorization_bound(op);
    if (c <= 0) c = 1.01 * bound;
    else if (c < bound * (1.0 - 1e-9))
      throw ConfigError("unrolled: C must be at least the squared operator norm");
    if (!(cfg.alpha + c > 0)) throw ConfigError("unrolled: alpha + C must be positive");
  } else if (!(cfg.alpha > 0)) {
    throw ConfigError("unrolled: alpha must be positive");
  }
  if (kind == UnrolledKind::Cascade) {
    if (!cfg.cascade) throw ConfigError("unrolled: cascade configuration missing");
    cfg.cascade->validate();
    require_dim("unrolled: cascade operator input", op.in_dim(), cfg.cascade->full.in_dim());
    require_dim("unrolled: cascade operator output", op.out_dim(),
                static_cast<Index>(cfg.cascade->sampled.size()));
  }
  return c;
}

struct UnrolledReport {
  Vector x;
  std::vector<double> objective;    // T(x_n), n = 0..blocks
  std::vector<double> cg_residuals; // MODL inner solves
  int blocks = 0;
  double c = 0.0;                   // INDIE constant used
};

/// Runs up to L blocks of the chosen scheme from x0 (default Aᵀy, or
/// B_F(S*y) for cascades). The objective trace uses block n's denoiser;
/// for variational networks it is Σ_c T_c.
inline UnrolledReport run_unrolled(UnrolledKind kind, const UnrolledConfig& cfg,
                                   const Operator& op, const Vector& y,
                                   std::optional<Vector> x0 = std::nullopt) {
  require_dim("run_unrolled: data", op.out_dim(), y.size());
  UnrolledReport rep;
  rep.c = validate_unrolled(kind, cfg, op);
  Vector x;
  if (x0) {
    require_dim("run_unrolled: x0", op.in_dim(), x0->size());
    x = *x0;
  } else {
    x = kind == UnrolledKind::Cascade ? cascade_init(*cfg.cascade, y) : op.adjoint(y);
  }
  auto objective = [&](int block, const Vector& v) {
    if (kind == UnrolledKind::VarNet) {
      double s = 0.0;
      for (std::size_t c = 0; c < cfg.varnet->cycles.size(); ++c)
        s += varnet_objective(*cfg.varnet, c, op, y, v);
      return s;
    }
    const int b = std::min(block, static_cast<int>(cfg.denoisers.size()) - 1);
    return modl_objective(op, cfg.denoiser(std::max(b, 0)), y, cfg.alpha, v);
  };
  rep.objective.push_back(objective(0, x));
  for (int n = 0; n < cfg.n_blocks; ++n) {
    Vector next;
    switch (kind) {
    case UnrolledKind::VarNet: next = varnet_step(*cfg.varnet, op, y, x, n); break;
    case UnrolledKind::Cascade: next = cascade_dc_step(*cfg.cascade, cfg.denoiser(n), y, x); break;
    case UnrolledKind::Modl: {
      LinearSolveResult r =
          modl_block(op, cfg.denoiser(n), y, x, cfg.alpha, cfg.cg_tol, cfg.cg_max_iter);
      rep.cg_residuals.push_back(r.relative_residual);
      next = std::move(r.x);
      break;
    }
    case UnrolledKind::Indie: next = indie_block(op, cfg.denoiser(n), y, x, cfg.alpha, rep.c); break;
    }
    if (!next.allFinite()) throw NumericalError("run_unrolled: non-finite iterate");
    const double change = (next - x).norm();
    const double scale = 1.0 + x.norm();
    x = std::move(next);
    rep.blocks = n + 1;
    rep.objective.push_back(objective(n + 1 < cfg.n_blocks ? n + 1 : n, x));
    if (cfg.stop_tol > 0 && change <= cfg.stop_tol * scale) break;
  }
  rep.x = std::move(x);
  return rep;
}

inline io::CsvWriter unrolled_trace_csv(const UnrolledReport& rep, const std::string& config_hash) {
  io::CsvWriter w(config_hash, {"block", "objective"});
  for (std::size_t n = 0; n < rep.objective.size(); ++n)
    w.row(static_cast<long long>(n), rep.objective[n]);
  return w;
}

// ---------------------------------------------------------------------------
// End-to-end training of INDIE networks (shared denoiser)
// ---------------------------------------------------------------------------

/// x_L of L INDIE blocks from x_0 = Aᵀy.
inline Vector indie_unrolled_map(const Operator& op, const FeedforwardNet& denoiser,
                                 const Vector& y, int n_blocks, double alpha, double c) {
  Vector x = op.adjoint(y);
  for (int n = 0; n < n_blocks; ++n) x = indie_block(op, denoiser, y, x, alpha, c);
  return x;
}

/// (1/N) Σ ‖x_L(y_i) − x_i‖² + wd‖θ‖² and its θ-gradient by reverse mode
/// through the blocks. Pairs hold target x_i and input y_i.
inline RiskEvaluation indie_risk_and_gradient(const Operator& op, const FeedforwardNet& denoiser,
                                              const Dataset& data, int n_blocks, double alpha,
                                              double c, double weight_decay,
                                              const std::vector<std::size_t>& subset = {}) {
  RiskEvaluation ev;
  const Vector theta = denoiser.params();
  ev.grad = Vector::Zero(theta.size());
  const std::size_t count = subset.empty() ? data.size() : subset.size();
  const double scale = 1.0 / static_cast<double>(count);
  const double inv = 1.0 / (alpha + c);
  for (std::size_t k = 0; k < count; ++k) {
    const auto& p = data.pairs[subset.empty() ? k : subset[k]];
    std::vector<ForwardCache> caches;
    caches.reserve(static_cast<std::size_t>(n_blocks));
    Vector x = op.adjoint(p.input);
    for (int n = 0; n < n_blocks; ++n) {
      ForwardResult fw = net_forward(denoiser, x);
      x = (op.adjoint(p.input - op.apply(x)) + alpha * fw.output + c * x) * inv;
      caches.push_back(std::move(fw.cache));
    }
    const Vector err = x - p.target;
    ev.terms.data += err.squaredNorm();
    Vector g = 2.0 * scale * err;
    for (int n = n_blocks; n-- > 0;) {
      BackwardResult b = net_backward(denoiser, caches[static_cast<std::size_t>(n)], alpha * inv * g);
      ev.grad += b.grad_params;
      g = (c * g - op.adjoint(op.apply(g))) * inv + b.grad_input;
    }
  }
  ev.terms.data *= scale;
  ev.terms.penalty = weight_decay * theta.squaredNorm();
  ev.grad += 2.0 * weight_decay * theta;
  return ev;
}

struct UnrolledTrainResult {
  FeedforwardNet denoiser;
  LossTrace trace;
  double c = 0.0;
};

inline UnrolledTrainResult train_unrolled_indie(const UnrolledConfig& cfg, const Operator& op,
                                                const Dataset& data, const TrainConfig& tcfg) {
  const double c = validate_unrolled(UnrolledKind::Indie, cfg, op);
  if (cfg.denoisers.size() != 1)
    throw ConfigError("train_unrolled_indie: training needs one shared denoiser");
  require_dim("train_unrolled_indie: input", op.out_dim(), data.pairs.front().input.size());
  require_dim("train_unrolled_indie: target", op.in_dim(), data.pairs.front().target.size());
  FeedforwardNet work = cfg.denoisers.front();
  ParamObjective objective = [&](const Vector& theta, const std::vector<std::size_t>& subset) {
    work.set_params(theta);
    return indie_risk_and_gradient(op, work, data, cfg.n_blocks, cfg.alpha, c,
                                   tcfg.weight_decay, subset);
  };
  MomentumResult m = minimize_with_momentum(objective, work.params(), data.size(), tcfg);
  work.set_params(m.theta);
  return {std::move(work), std::move(m.trace), c};
}

} // namespace ipreg
