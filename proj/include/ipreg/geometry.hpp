#pragma once

// Right inverses and orthogonal projections: the Moore-Penrose inverse, the
// range projection U Uᵀ and the kernel projection P_ker(A), the latter either
// explicitly from a singular system or iteratively (CG on the normal
// equations, or Landweber).

#include "ipreg/linops.hpp"

#include <functional>
#include <optional>

namespace ipreg {

/// A† y = Σ s_i⁻¹ ⟨u_i, y⟩ v_i.
inline Vector pseudoinverse_apply(const SvdFactorization& f, const Vector& y) {
  require_dim("pseudoinverse_apply", f.out_dim, y.size());
  if (f.rank() == 0) return Vector::Zero(f.in_dim);
  Vector coeff = f.left.transpose() * y;
  return f.right * coeff.cwiseQuotient(f.singular);
}

inline Vector range_project(const SvdFactorization& f, const Vector& y) {
  require_dim("range_project", f.out_dim, y.size());
  if (f.rank() == 0) return Vector::Zero(f.out_dim);
  return f.left * (f.left.transpose() * y);
}

// ---------------------------------------------------------------------------
// Conjugate gradients for symmetric positive (semi-)definite systems
// ---------------------------------------------------------------------------

struct LinearSolveResult {
  Vector x;
  double relative_residual = 0.0; // ‖b − M x‖ / ‖b‖, recomputed at exit
  int iterations = 0;
};

/// Solves M x = b for SPD M given as a callback, starting at x0, until the
/// recomputed residual satisfies ‖b − M x‖ ≤ tol·‖b‖.
inline LinearSolveResult conjugate_gradient(
    const std::function<Vector(const Vector&)>& apply_m, const Vector& b,
    Vector x0, double tol, int max_iter) {
  const double bn = b.norm();
  LinearSolveResult res;
  res.x = std::move(x0);
  if (bn == 0.0) {
    res.x.setZero();
    return res;
  }
  Vector r = b - apply_m(res.x);
  Vector p = r;
  double rr = r.squaredNorm();
  int it = 0;
  // A couple of restarts guard against drift of the recursive residual.
  for (int restart = 0; restart < 3; ++restart) {
    for (; it < max_iter && std::sqrt(rr) > tol * bn; ++it) {
      const Vector q = apply_m(p);
      const double pq = p.dot(q);
      if (!(pq > 0.0)) break;
      const double step = rr / pq;
      res.x += step * p;
      r -= step * q;
      const double rr_new = r.squaredNorm();
      p = r + (rr_new / rr) * p;
      rr = rr_new;
    }
    r = b - apply_m(res.x);
    rr = r.squaredNorm();
    p = r;
    if (std::sqrt(rr) <= tol * bn || it >= max_iter) break;
  }
  res.iterations = it;
  res.relative_residual = std::sqrt(rr) / bn;
  if (!res.x.allFinite()) throw NumericalError("conjugate_gradient: non-finite iterate");
  if (res.relative_residual > tol)
    throw ConvergenceError("conjugate_gradient: tolerance not reached", res.x,
                           res.relative_residual, it);
  return res;
}

// ---------------------------------------------------------------------------
// Kernel projection
// ---------------------------------------------------------------------------

enum class ProjectionMethod { ConjugateGradient, Landweber };

inline constexpr double kDefaultProjectionTol = 1e-10;
inline constexpr double kLandweberStepFactor = 0.9;
inline constexpr int kDefaultLandweberMaxIter = 1000000;

/// Immutable handle for P_ker(A).
class ProjectionHandle {
public:
  struct Explicit {
    std::shared_ptr<const SvdFactorization> factorization;
  };
  struct Iterative {
    Operator op;
    double tol;
    int max_iter;
    ProjectionMethod method;
    double norm; // ‖A‖ estimate, fixed at construction
  };

  static ProjectionHandle explicit_svd(SvdFactorization f) {
    return ProjectionHandle(
        Explicit{std::make_shared<const SvdFactorization>(std::move(f))});
  }

  /// max_iter <= 0 selects the default: 10·in_dim for CG, 10⁶ for Landweber.
  static ProjectionHandle iterative(Operator op, ProjectionMethod method,
                                    double tol = kDefaultProjectionTol,
                                    int max_iter = 0) {
    if (!(tol > 0)) throw ConfigError("projection tolerance must be positive");
    if (max_iter <= 0)
      max_iter = method == ProjectionMethod::ConjugateGradient
                     ? static_cast<int>(10 * op.in_dim())
                     : kDefaultLandweberMaxIter;
    const double nrm = operator_norm(op, 1e-10, 1000000, 0x5eed);
    return ProjectionHandle(Iterative{std::move(op), tol, max_iter, method, nrm});
  }

  /// Explicit when a factorization is at hand, iterative (CG) otherwise.
  static ProjectionHandle for_operator(
      const Operator& op, const SvdFactorization* cached = nullptr) {
    if (cached) return explicit_svd(*cached);
    return iterative(op, ProjectionMethod::ConjugateGradient);
  }

  Index dim() const {
    if (const auto* e = std::get_if<Explicit>(&source_))
      return e->factorization->in_dim;
    return std::get<Iterative>(source_).op.in_dim();
  }
  bool is_explicit() const { return std::holds_alternative<Explicit>(source_); }
  const std::variant<Explicit, Iterative>& source() const { return source_; }

  Vector apply(const Vector& z) const;

private:
  explicit ProjectionHandle(std::variant<Explicit, Iterative> s)
      : source_(std::move(s)) {}
  std::variant<Explicit, Iterative> source_;
};

namespace detail {

// CGLS on min ‖A x‖ started at z: iterates stay in z + ker(A)^⊥, so the limit
// is the point of ker(A) nearest to z.
inline Vector kernel_project_cg(const ProjectionHandle::Iterative& it,
                                const Vector& z) {
  const double target = it.tol * it.norm * z.norm();
  Vector x = z;
  Vector r = -it.op.apply(x);
  if (r.norm() <= target) return x;
  Vector s = it.op.adjoint(r);
  Vector p = s;
  double gamma = s.squaredNorm();
  for (int k = 0; k < it.max_iter; ++k) {
    const Vector q = it.op.apply(p);
    const double qq = q.squaredNorm();
    if (qq == 0.0) break;
    const double step = gamma / qq;
    x += step * p;
    r -= step * q;
    if (r.norm() <= target) {
      // confirm with a fresh residual
      if (it.op.apply(x).norm() <= target) return x;
      r = -it.op.apply(x);
    }
    s = it.op.adjoint(r);
    const double gamma_new = s.squaredNorm();
    p = s + (gamma_new / gamma) * p;
    gamma = gamma_new;
  }
  const double res = it.op.apply(x).norm();
  if (res <= target) return x;
  throw ConvergenceError("kernel_project: CG did not converge", x, res,
                         it.max_iter);
}

inline Vector kernel_project_landweber(const ProjectionHandle::Iterative& it,
                                       const Vector& z) {
  const double target = it.tol * it.norm * z.norm();
  if (it.norm == 0.0) return z;
  const double tau = kLandweberStepFactor / (it.norm * it.norm);
  Vector x = z;
  Vector ax = it.op.apply(x);
  double res = ax.norm();
  for (int k = 0; k < it.max_iter && res > target; ++k) {
    x -= tau * it.op.adjoint(ax);
    ax = it.op.apply(x);
    res = ax.norm();
  }
  if (res <= target) return x;
  throw ConvergenceError("kernel_project: Landweber did not converge", x, res,
                         it.max_iter);
}

} // namespace detail

inline Vector ProjectionHandle::apply(const Vector& z) const {
  require_dim("kernel_project", dim(), z.size());
  if (const auto* e = std::get_if<Explicit>(&source_)) {
    const auto& f = *e->factorization;
    if (f.rank() == 0) return z;
    return z - f.right * (f.right.transpose() * z);
  }
  const auto& it = std::get<Iterative>(source_);
  return it.method == ProjectionMethod::ConjugateGradient
             ? detail::kernel_project_cg(it, z)
             : detail::kernel_project_landweber(it, z);
}

inline Vector kernel_project(const ProjectionHandle& p, const Vector& z) {
  return p.apply(z);
}

} // namespace ipreg
