#pragma once

// Regularizing filters g_α acting on the spectrum λ = s² of A*A, the
// reconstruction maps B_α = g_α(A*A) A*, and a-priori parameter choices.

#include "ipreg/linops.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace ipreg {

enum class FilterKind { TruncatedSvd, Tikhonov, Landweber };

struct FilterSpec {
  FilterKind kind = FilterKind::Tikhonov;
  double step = 1.0; // τ, Landweber only

  static FilterSpec truncated_svd() { return {FilterKind::TruncatedSvd, 1.0}; }
  static FilterSpec tikhonov() { return {FilterKind::Tikhonov, 1.0}; }
  static FilterSpec landweber(double tau) {
    if (!(tau > 0)) throw ConfigError("Landweber step must be positive");
    return {FilterKind::Landweber, tau};
  }
};

inline std::string to_string(FilterKind k) {
  switch (k) {
  case FilterKind::TruncatedSvd: return "tsvd";
  case FilterKind::Tikhonov: return "tikhonov";
  case FilterKind::Landweber: return "landweber";
  }
  return "?";
}

/// Number of Landweber sweeps associated with α: k = ceil(1/α).
inline double landweber_iterations(double alpha) { return std::ceil(1.0 / alpha); }

inline double filter_value(const FilterSpec& spec, double alpha, double lambda) {
  if (!(alpha > 0)) throw DomainError("filter_value: alpha must be positive");
  if (lambda < 0) throw DomainError("filter_value: lambda must be non-negative");
  switch (spec.kind) {
  case FilterKind::TruncatedSvd:
    return (lambda >= alpha && lambda > 0) ? 1.0 / lambda : 0.0;
  case FilterKind::Tikhonov:
    return 1.0 / (lambda + alpha);
  case FilterKind::Landweber: {
    // τ Σ_{j<k} (1 − τλ)^j in closed form.
    const double k = landweber_iterations(alpha);
    const double tl = spec.step * lambda;
    if (tl == 0.0) return spec.step * k;
    if (tl < 1.0) return -std::expm1(k * std::log1p(-tl)) / lambda;
    return (1.0 - std::pow(1.0 - tl, k)) / lambda;
  }
  }
  return 0.0;
}

/// B_α y = Σ g_α(s_i²) s_i ⟨u_i, y⟩ v_i.
inline Vector reconstruct_filtered(const SvdFactorization& f,
                                   const FilterSpec& spec, double alpha,
                                   const Vector& y) {
  require_dim("reconstruct_filtered", f.out_dim, y.size());
  Vector coeff = f.left.transpose() * y;
  for (Index i = 0; i < f.rank(); ++i) {
    const double s = f.singular[i];
    coeff[i] *= filter_value(spec, alpha, s * s) * s;
  }
  return f.right * coeff;
}

/// α(δ) = c·δ^γ with γ ∈ (0, 1), so that α → 0 and δ/α → 0.
class ParameterRule {
public:
  ParameterRule(double scale, double exponent) : scale_(scale), exponent_(exponent) {
    if (!(scale > 0)) throw ConfigError("parameter rule: scale must be positive");
    if (!(exponent > 0 && exponent < 1))
      throw ConfigError("parameter rule: exponent must lie in (0, 1)");
  }
  double scale() const { return scale_; }
  double exponent() const { return exponent_; }

private:
  double scale_;
  double exponent_;
};

inline double apriori_choice(const ParameterRule& rule, double delta) {
  if (!(delta > 0)) throw DomainError("apriori_choice: delta must be positive");
  return rule.scale() * std::pow(delta, rule.exponent());
}

// ---------------------------------------------------------------------------
// Empirical check of the filter conditions
// ---------------------------------------------------------------------------

struct FilterJump {
  double alpha;
  double lambda; // midpoint of the grid cell containing the jump
};

struct FilterConditionReport {
  double bound_observed = 0.0;           // sup |λ g_α(λ)| over both grids
  std::vector<double> lambda_grid;       // λ > 0 grid used for deviations
  std::vector<double> deviation_smallest_alpha; // |λ g_α(λ) − 1| at min α
  double max_deviation_smallest_alpha = 0.0;
  std::vector<FilterJump> jumps;
  bool bounded = false;
  bool pointwise_convergent = false;
  bool piecewise_continuous = false;

  /// Deviation at the grid point closest to lambda.
  double deviation_at(double lambda) const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < lambda_grid.size(); ++i)
      if (std::abs(lambda_grid[i] - lambda) < std::abs(lambda_grid[best] - lambda))
        best = i;
    return deviation_smallest_alpha.at(best);
  }
};

/// Checks boundedness of λ g_α(λ), pointwise convergence g_α(λ) → 1/λ along
/// the α-grid and finiteness of jumps on a uniform λ-grid over [0, λ_max].
inline FilterConditionReport verify_filter_conditions(
    const FilterSpec& spec, const std::vector<double>& alpha_grid,
    double lambda_max, int lambda_points = 10001, double bound_constant = 1.0) {
  if (alpha_grid.empty()) throw ConfigError("verify_filter_conditions: empty alpha grid");
  if (!(lambda_max > 0)) throw ConfigError("verify_filter_conditions: lambda_max must be positive");
  FilterConditionReport rep;
  const double h = lambda_max / (lambda_points - 1);
  double smallest = alpha_grid.front();
  for (double a : alpha_grid) smallest = std::min(smallest, a);

  // previous-α deviations, to check monotone decay per λ
  std::vector<double> prev_dev;
  bool monotone = true;
  const double jump_threshold = 0.25;
  for (double alpha : alpha_grid) {
    std::vector<double> dev;
    dev.reserve(lambda_points);
    double prev_lg = 0.0;
    for (int i = 0; i < lambda_points; ++i) {
      const double lambda = i == lambda_points - 1 ? lambda_max : i * h;
      const double lg = lambda * filter_value(spec, alpha, lambda);
      rep.bound_observed = std::max(rep.bound_observed, std::abs(lg));
      if (i > 0) {
        if (std::abs(lg - prev_lg) > jump_threshold) {
          rep.jumps.push_back({alpha, lambda - 0.5 * h});
        }
        dev.push_back(std::abs(lg - 1.0));
      }
      prev_lg = lg;
    }
    if (!prev_dev.empty())
      for (std::size_t i = 0; i < dev.size(); ++i)
        if (dev[i] > prev_dev[i] + 1e-12) monotone = false;
    if (alpha == smallest) {
      rep.deviation_smallest_alpha = dev;
      rep.max_deviation_smallest_alpha = 0.0;
      for (double d : dev)
        rep.max_deviation_smallest_alpha = std::max(rep.max_deviation_smallest_alpha, d);
    }
    prev_dev = std::move(dev);
  }
  rep.lambda_grid.reserve(lambda_points - 1);
  for (int i = 1; i < lambda_points; ++i)
    rep.lambda_grid.push_back(i == lambda_points - 1 ? lambda_max : i * h);

  rep.bounded = rep.bound_observed <= bound_constant + 1e-12;
  // Descending α-grid: deviation shrinks at every λ.
  rep.pointwise_convergent = monotone;
  rep.piecewise_continuous =
      rep.jumps.size() <= alpha_grid.size() * static_cast<std::size_t>(lambda_points / 10);
  return rep;
}

} // namespace ipreg
