#pragma once

// Network Tikhonov (NETT) regularization:
//
//   minimize  d(A x, y) + α R(x)   over x ∈ D,
//   R(x) = φ(E(x)) + (β/2)‖x − D(E(x))‖²,
//
// with an encoder/decoder pair (E, D), a weighted ℓ^p functional φ, the
// squared-norm or Kullback-Leibler similarity d and D either the whole space
// or the nonnegative orthant. Also: absolute Bregman distances, a sampled
// total-nonlinearity probe, an R-minimizing-solution oracle and the learned
// synthesis formulation solved by proximal gradient.

#include "ipreg/geometry.hpp"
#include "ipreg/nets.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <string>

namespace ipreg {

// ---------------------------------------------------------------------------
// Similarity measures
// ---------------------------------------------------------------------------

enum class SimilarityKind { SquaredNorm, KullbackLeibler };

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// d(y1, y2). KL: Σ y1 log(y1/y2) + y2 − y1 on the nonnegative cone with
/// 0·log(0/b) = 0; y1_i > 0 = y2_i gives +∞.
inline double similarity(SimilarityKind kind, const Vector& y1, const Vector& y2) {
  require_dim("similarity", y1.size(), y2.size());
  if (kind == SimilarityKind::SquaredNorm) return (y1 - y2).squaredNorm();
  double d = 0.0;
  for (Index i = 0; i < y1.size(); ++i) {
    const double a = y1[i], b = y2[i];
    if (a < 0 || b < 0 || std::isnan(a) || std::isnan(b))
      throw DomainError("similarity: Kullback-Leibler needs nonnegative arguments");
    if (a == 0.0) {
      d += b;
    } else if (b == 0.0) {
      return kInf;
    } else {
      d += a * std::log(a / b) + b - a;
    }
  }
  return d;
}

/// Gradient of d(·, y2) at y1. KL entries at y1_i = 0 use a tiny floor.
inline Vector similarity_grad(SimilarityKind kind, const Vector& y1, const Vector& y2) {
  if (kind == SimilarityKind::SquaredNorm) return 2.0 * (y1 - y2);
  Vector g(y1.size());
  for (Index i = 0; i < y1.size(); ++i)
    g[i] = std::log(std::max(y1[i], 1e-300) / std::max(y2[i], 1e-300));
  return g;
}

// ---------------------------------------------------------------------------
// Learned regularizer
// ---------------------------------------------------------------------------

struct LearnedRegularizer {
  FeedforwardNet encoder;
  FeedforwardNet decoder;
  double beta = 1.0;
  Vector weights;        // per code entry, nonnegative
  double p = 1.0;        // exponent in [1, 2]
  double epsilon = 1e-6; // smoothing of |t| for p = 1

  LearnedRegularizer(FeedforwardNet e, FeedforwardNet d, double beta_, Vector w, double p_,
                     double eps = 1e-6)
      : encoder(std::move(e)), decoder(std::move(d)), beta(beta_), weights(std::move(w)),
        p(p_), epsilon(eps) {
    require_dim("LearnedRegularizer: decoder input", encoder.out_dim(), decoder.in_dim());
    require_dim("LearnedRegularizer: decoder output", encoder.in_dim(), decoder.out_dim());
    require_dim("LearnedRegularizer: weights", encoder.out_dim(), weights.size());
    if (!(beta >= 0)) throw ConfigError("LearnedRegularizer: beta must be non-negative");
    if (!(p >= 1 && p <= 2)) throw ConfigError("LearnedRegularizer: p must lie in [1, 2]");
    if (!(epsilon >= 0)) throw ConfigError("LearnedRegularizer: epsilon must be non-negative");
    if ((weights.array() < 0).any())
      throw ConfigError("LearnedRegularizer: weights must be non-negative");
  }

  Index dim() const { return encoder.in_dim(); }

  double magnitude(double t) const {
    if (p == 1.0)
      return epsilon > 0 ? std::sqrt(t * t + epsilon * epsilon) - epsilon : std::abs(t);
    return std::pow(std::abs(t), p);
  }
  double magnitude_derivative(double t) const {
    if (p == 1.0) {
      if (epsilon > 0) return t / std::sqrt(t * t + epsilon * epsilon);
      return t > 0 ? 1.0 : (t < 0 ? -1.0 : 0.0);
    }
    if (t == 0.0) return 0.0;
    return p * std::pow(std::abs(t), p - 1) * (t > 0 ? 1.0 : -1.0);
  }
};

struct ValueAndGradient {
  double value = 0.0;
  Vector grad;
};

inline ValueAndGradient regularizer_value_and_grad(const LearnedRegularizer& reg,
                                                   const Vector& x) {
  require_dim("regularizer", reg.dim(), x.size());
  ForwardResult enc = net_forward(reg.encoder, x);
  ForwardResult dec = net_forward(reg.decoder, enc.output);
  const Vector r = x - dec.output;
  ValueAndGradient out;
  Vector g_code(enc.output.size());
  for (Index i = 0; i < enc.output.size(); ++i) {
    out.value += reg.weights[i] * reg.magnitude(enc.output[i]);
    g_code[i] = reg.weights[i] * reg.magnitude_derivative(enc.output[i]);
  }
  out.value += 0.5 * reg.beta * r.squaredNorm();
  // d/dx (β/2)‖x − D(E x)‖² = β r − β J_Eᵀ J_Dᵀ r
  const Vector jd_r = net_backward(reg.decoder, dec.cache, r).grad_input;
  g_code -= reg.beta * jd_r;
  out.grad = net_backward(reg.encoder, enc.cache, g_code).grad_input + reg.beta * r;
  return out;
}

inline double regularizer_value(const LearnedRegularizer& reg, const Vector& x) {
  require_dim("regularizer_value", reg.dim(), x.size());
  const Vector code = reg.encoder(x);
  double v = 0.0;
  for (Index i = 0; i < code.size(); ++i) v += reg.weights[i] * reg.magnitude(code[i]);
  return v + 0.5 * reg.beta * (x - reg.decoder(code)).squaredNorm();
}

inline Vector regularizer_grad(const LearnedRegularizer& reg, const Vector& x) {
  return regularizer_value_and_grad(reg, x).grad;
}

// ---------------------------------------------------------------------------
// Proximal gradient engine (projected gradient is the special case of a
// projection as prox)
// ---------------------------------------------------------------------------

enum class Termination { ToleranceMet, MaxIter, BacktrackingFailure };

inline std::string to_string(Termination t) {
  switch (t) {
  case Termination::ToleranceMet: return "tolerance_met";
  case Termination::MaxIter: return "max_iter";
  case Termination::BacktrackingFailure: return "backtracking_failure";
  }
  return "?";
}

struct SolverReport {
  Vector x;
  std::vector<double> objective; // F(x_k), k = 0..iterations
  std::vector<double> steps;     // accepted step sizes
  Termination termination = Termination::MaxIter;
  int iterations = 0;
  double stationarity = 0.0;     // ‖x − prox(x − ∇f(x))‖ at exit
};

struct SolverConfig {
  double tol = 1e-9;
  int max_iter = 20000;
  double initial_step = 1.0;
  int max_halvings = 50;
  std::optional<Vector> x0;
};

struct CompositeObjective {
  std::function<double(const Vector&)> smooth;
  std::function<Vector(const Vector&)> smooth_grad;
  std::function<double(const Vector&)> nonsmooth;          // g; may be null (≡ 0)
  std::function<Vector(const Vector&, double)> prox;       // prox_{t g}; null = identity
};

/// Minimizes f + g by forward-backward steps. Step sizes start from a
/// Barzilai-Borwein guess and are halved until the quadratic upper bound
/// f(x⁺) ≤ f(x) + ⟨∇f, x⁺ − x⟩ + ‖x⁺ − x‖²/(2t) holds and F strictly
/// decreases, so the objective trace is non-increasing. Once rounding hides
/// any further decrease the run ends with BacktrackingFailure.
inline SolverReport proximal_gradient(const CompositeObjective& obj, Vector x,
                                      const SolverConfig& cfg) {
  auto g_of = [&](const Vector& v) { return obj.nonsmooth ? obj.nonsmooth(v) : 0.0; };
  auto prox = [&](const Vector& v, double t) { return obj.prox ? obj.prox(v, t) : v; };

  SolverReport rep;
  double f = obj.smooth(x);
  double total = f + g_of(x);
  if (!std::isfinite(total)) throw NumericalError("proximal_gradient: non-finite start objective");
  Vector grad = obj.smooth_grad(x);
  rep.objective.push_back(total);
  double t = cfg.initial_step;
  for (int it = 0;; ++it) {
    rep.stationarity = (x - prox(x - grad, 1.0)).norm();
    if (rep.stationarity <= cfg.tol) {
      rep.termination = Termination::ToleranceMet;
      break;
    }
    if (it >= cfg.max_iter) {
      rep.termination = Termination::MaxIter;
      break;
    }
    bool accepted = false;
    Vector x_new, d;
    double f_new = 0.0, total_new = 0.0;
    for (int h = 0; h <= cfg.max_halvings; ++h, t *= 0.5) {
      x_new = prox(x - t * grad, t);
      d = x_new - x;
      f_new = obj.smooth(x_new);
      total_new = f_new + g_of(x_new);
      if (!std::isfinite(total_new)) continue;
      const double model = f + grad.dot(d) + d.squaredNorm() / (2.0 * t);
      if (f_new <= model + 1e-15 * std::abs(f) && total_new < total) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      rep.termination = Termination::BacktrackingFailure;
      break;
    }
    const Vector grad_new = obj.smooth_grad(x_new);
    rep.steps.push_back(t);
    const Vector yk = grad_new - grad;
    const double sy = d.dot(yk);
    double t_next = sy > 0 ? d.squaredNorm() / sy : 2.0 * t;
    t = std::clamp(t_next, 1e-12, 1e12);
    x = std::move(x_new);
    grad = grad_new;
    f = f_new;
    total = total_new;
    rep.objective.push_back(total);
    rep.iterations = it + 1;
  }
  rep.x = std::move(x);
  return rep;
}

// ---------------------------------------------------------------------------
// NETT functional
// ---------------------------------------------------------------------------

enum class DomainConstraint { None, NonnegativeOrthant };

struct TikhonovProblem {
  Operator op;
  Vector data;
  double alpha;
  LearnedRegularizer reg;
  SimilarityKind sim = SimilarityKind::SquaredNorm;
  DomainConstraint domain = DomainConstraint::None;

  void validate() const {
    require_dim("TikhonovProblem: data", op.out_dim(), data.size());
    require_dim("TikhonovProblem: regularizer", op.in_dim(), reg.dim());
    if (!(alpha > 0)) throw ConfigError("TikhonovProblem: alpha must be positive");
  }
};

namespace detail {
inline double similarity_or_inf(SimilarityKind kind, const Vector& ax, const Vector& y) {
  if (kind == SimilarityKind::KullbackLeibler && (ax.array() < 0).any()) return kInf;
  return similarity(kind, ax, y);
}
} // namespace detail

/// T(x) = d(A x, y) + α R(x).
inline double nett_objective(const TikhonovProblem& pb, const Vector& x) {
  return detail::similarity_or_inf(pb.sim, pb.op.apply(x), pb.data) +
         pb.alpha * regularizer_value(pb.reg, x);
}

inline Vector nett_gradient(const TikhonovProblem& pb, const Vector& x) {
  const Vector ax = pb.op.apply(x);
  return pb.op.adjoint(similarity_grad(pb.sim, ax, pb.data)) +
         pb.alpha * regularizer_grad(pb.reg, x);
}

/// A is positive iff it maps every basis vector into the nonnegative cone.
inline bool is_positive_operator(const Operator& op) {
  Vector e = Vector::Zero(op.in_dim());
  for (Index j = 0; j < op.in_dim(); ++j) {
    e[j] = 1.0;
    if ((op.apply(e).array() < 0).any()) return false;
    e[j] = 0.0;
  }
  return true;
}

inline SolverReport nett_solve(const TikhonovProblem& pb, const SolverConfig& cfg = {}) {
  pb.validate();
  if (pb.sim == SimilarityKind::KullbackLeibler) {
    if (!is_positive_operator(pb.op))
      throw DomainError("nett_solve: Kullback-Leibler requires a positive operator");
    if ((pb.data.array() < 0).any())
      throw DomainError("nett_solve: Kullback-Leibler requires nonnegative data");
  }
  const bool orthant = pb.domain == DomainConstraint::NonnegativeOrthant;
  CompositeObjective obj;
  obj.smooth = [&](const Vector& x) { return nett_objective(pb, x); };
  obj.smooth_grad = [&](const Vector& x) { return nett_gradient(pb, x); };
  if (orthant) obj.prox = [](const Vector& v, double) -> Vector { return v.cwiseMax(0.0); };
  Vector x0;
  if (cfg.x0) {
    require_dim("nett_solve: x0", pb.op.in_dim(), cfg.x0->size());
    x0 = *cfg.x0;
  } else {
    x0 = pb.sim == SimilarityKind::KullbackLeibler ? Vector::Ones(pb.op.in_dim())
                                                    : Vector::Zero(pb.op.in_dim());
  }
  if (orthant) x0 = x0.cwiseMax(0.0);
  return proximal_gradient(obj, std::move(x0), cfg);
}

// ---------------------------------------------------------------------------
// Bregman distance and total nonlinearity
// ---------------------------------------------------------------------------

/// |R(x̃) − R(x) − ⟨R′(x), x̃ − x⟩|.
inline double bregman_distance(const LearnedRegularizer& reg, const Vector& x_tilde,
                               const Vector& x) {
  const ValueAndGradient at_x = regularizer_value_and_grad(reg, x);
  return std::abs(regularizer_value(reg, x_tilde) - at_x.value - at_x.grad.dot(x_tilde - x));
}

/// Sampled upper bound on the modulus of total nonlinearity ν(x, t): the
/// minimum of Δ(x + t u, x) over seeded unit directions u. The true modulus
/// is an infimum over the whole sphere and may be smaller.
struct NonlinearityProbe {
  double sampled_upper_bound = kInf;
  double radius = 0.0;
  int samples = 0;
};

inline NonlinearityProbe total_nonlinearity_probe(const LearnedRegularizer& reg, const Vector& x,
                                                  double t, int n_samples, std::uint64_t seed) {
  if (!(t > 0)) throw DomainError("total_nonlinearity_probe: t must be positive");
  NonlinearityProbe probe;
  probe.radius = t;
  probe.samples = n_samples;
  const ValueAndGradient at_x = regularizer_value_and_grad(reg, x);
  Rng rng(seed);
  for (int k = 0; k < n_samples; ++k) {
    const Vector u = rng.unit_vector(x.size());
    const Vector xt = x + t * u;
    const double d = std::abs(regularizer_value(reg, xt) - at_x.value - t * at_x.grad.dot(u));
    probe.sampled_upper_bound = std::min(probe.sampled_upper_bound, d);
  }
  return probe;
}

// ---------------------------------------------------------------------------
// R-minimizing solution oracle
// ---------------------------------------------------------------------------

struct OracleConfig {
  int starts = 8;
  std::uint64_t seed = 0;
  double start_scale = 1.0;
  double range_tol = 1e-8;
  SolverConfig solver{1e-12, 200000, 1.0, 60, std::nullopt};
};

/// argmin { R(x) : A x = y } over x = A†y + K c with K a kernel basis,
/// by multistart descent over c. Start 0 is c = 0; ties resolve to the
/// lower start index.
inline Vector r_minimizing_oracle(const Operator& op, const LearnedRegularizer& reg,
                                  const Vector& y, const OracleConfig& cfg = {}) {
  require_dim("r_minimizing_oracle", op.out_dim(), y.size());
  const SvdFactorization f = svd(op);
  const double off_range = (y - range_project(f, y)).norm();
  if (off_range > cfg.range_tol * std::max(y.norm(), 1e-300))
    throw DomainError("r_minimizing_oracle: data lies outside ran(A)");
  const Vector xp = pseudoinverse_apply(f, y);
  const Matrix k = kernel_basis(f);
  if (k.cols() == 0) return xp;

  CompositeObjective obj;
  obj.smooth = [&](const Vector& c) { return regularizer_value(reg, xp + k * c); };
  obj.smooth_grad = [&](const Vector& c) -> Vector {
    return k.transpose() * regularizer_grad(reg, xp + k * c);
  };
  Rng rng(cfg.seed);
  Vector best;
  double best_value = kInf;
  for (int s = 0; s < std::max(1, cfg.starts); ++s) {
    Vector c0 = s == 0 ? Vector::Zero(k.cols())
                       : Vector(cfg.start_scale * rng.normal_vector(k.cols()));
    SolverReport rep = proximal_gradient(obj, std::move(c0), cfg.solver);
    const double v = rep.objective.back();
    if (v < best_value) {
      best_value = v;
      best = xp + k * rep.x;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Learned synthesis regularization
// ---------------------------------------------------------------------------

/// argmin_u ½(u − v)² + λ|u|^p for p ∈ [1, 2].
inline double prox_power(double v, double lambda, double p) {
  if (!(lambda >= 0)) throw DomainError("prox_power: threshold must be non-negative");
  if (!(p >= 1 && p <= 2)) throw DomainError("prox_power: p must lie in [1, 2]");
  if (lambda == 0.0 || v == 0.0) return v;
  const double a = std::abs(v), sign = v > 0 ? 1.0 : -1.0;
  if (p == 1.0) return sign * std::max(a - lambda, 0.0);
  if (p == 2.0) return v / (1.0 + 2.0 * lambda);
  // s + λ p s^{p−1} = a on (0, a): increasing left side, safeguarded Newton
  double lo = 0.0, hi = a, s = a / (1.0 + lambda * p);
  for (int it = 0; it < 200; ++it) {
    const double h = s + lambda * p * std::pow(s, p - 1) - a;
    if (h > 0) hi = s; else lo = s;
    const double dh = 1.0 + lambda * p * (p - 1) * std::pow(s, p - 2);
    double next = s - h / dh;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - s) <= 1e-16 * a) {
      s = next;
      break;
    }
    s = next;
  }
  return sign * s;
}

struct SynthesisResult {
  Vector codes;
  Vector x_syn;
  SolverReport report;
};

/// Minimizes ‖A D(ξ) − y‖² + α Σ w_λ |ξ_λ|^p by proximal gradient (ISTA with
/// backtracking) and returns ξ and D(ξ).
inline SynthesisResult synthesis_solve(const Operator& op, const FeedforwardNet& decoder,
                                       const Vector& y, double alpha, const Vector& weights,
                                       double p, const SolverConfig& cfg = {}) {
  require_dim("synthesis_solve: decoder output", op.in_dim(), decoder.out_dim());
  require_dim("synthesis_solve: data", op.out_dim(), y.size());
  require_dim("synthesis_solve: weights", decoder.in_dim(), weights.size());
  if (!(p >= 1 && p <= 2)) throw ConfigError("synthesis_solve: p must lie in [1, 2]");
  if (!(alpha >= 0)) throw ConfigError("synthesis_solve: alpha must be non-negative");
  if ((weights.array() <= 0).any()) throw ConfigError("synthesis_solve: weights must be positive");

  CompositeObjective obj;
  obj.smooth = [&](const Vector& xi) { return (op.apply(decoder(xi)) - y).squaredNorm(); };
  obj.smooth_grad = [&](const Vector& xi) -> Vector {
    ForwardResult fw = net_forward(decoder, xi);
    const Vector r = op.apply(fw.output) - y;
    return net_backward(decoder, fw.cache, 2.0 * op.adjoint(r)).grad_input;
  };
  obj.nonsmooth = [&](const Vector& xi) {
    double s = 0.0;
    for (Index i = 0; i < xi.size(); ++i) s += weights[i] * std::pow(std::abs(xi[i]), p);
    return alpha * s;
  };
  obj.prox = [&](const Vector& v, double t) -> Vector {
    Vector out(v.size());
    for (Index i = 0; i < v.size(); ++i) out[i] = prox_power(v[i], t * alpha * weights[i], p);
    return out;
  };
  Vector x0 = cfg.x0 ? *cfg.x0 : Vector::Zero(decoder.in_dim());
  require_dim("synthesis_solve: x0", decoder.in_dim(), x0.size());
  SynthesisResult res;
  res.report = proximal_gradient(obj, std::move(x0), cfg);
  res.codes = res.report.x;
  res.x_syn = decoder(res.codes);
  return res;
}

} // namespace ipreg
