#pragma once

// Finite-dimensional linear operators with adjoints.
//
// An Operator is an immutable handle; copies share the underlying node.
// Four kinds exist: a dense matrix, a circular (periodic) convolution, a
// masked sampling (coordinate selection) and the composition outer∘inner.

#include "ipreg/core.hpp"

#include <algorithm>
#include <memory>
#include <variant>
#include <vector>

namespace ipreg {

enum class OperatorKind { Dense, CircularConvolution, MaskedSampling, Composed };

inline constexpr Index kDefaultMaterializeBudget = Index{1} << 20;
inline constexpr double kDefaultRankTolerance = 1e-12;

struct OperatorNode;

class Operator {
public:
  static Operator dense(Matrix matrix);
  static Operator identity(Index n) { return dense(Matrix::Identity(n, n)); }
  static Operator zero(Index m, Index n) { return dense(Matrix::Zero(m, n)); }
  /// Periodic convolution (k * x)_i = sum_j k_j x_{(i - j) mod n}. The kernel
  /// holds the leading taps; taps beyond kernel.size() are zero.
  static Operator circular_convolution(Vector kernel, Index n);
  /// Selects x[indices[0]], x[indices[1]], ... Indices must be strictly
  /// increasing and lie in [0, n).
  static Operator masked_sampling(std::vector<Index> indices, Index n);
  /// outer ∘ inner.
  static Operator compose(Operator outer, Operator inner);

  Index in_dim() const { return in_dim_; }
  Index out_dim() const { return out_dim_; }
  OperatorKind kind() const;

  Vector apply(const Vector& x) const;
  Vector adjoint(const Vector& y) const;

  const OperatorNode& node() const { return *node_; }

private:
  Operator(std::shared_ptr<const OperatorNode> node, Index in, Index out)
      : node_(std::move(node)), in_dim_(in), out_dim_(out) {}

  std::shared_ptr<const OperatorNode> node_;
  Index in_dim_ = 0;
  Index out_dim_ = 0;
};

struct DenseNode {
  Matrix matrix;
};
struct ConvolutionNode {
  Vector kernel;
  Index n;
};
struct SamplingNode {
  std::vector<Index> indices;
  Index n;
};
struct ComposedNode {
  Operator outer;
  Operator inner;
};

struct OperatorNode {
  std::variant<DenseNode, ConvolutionNode, SamplingNode, ComposedNode> data;
};

inline Operator Operator::dense(Matrix matrix) {
  if (matrix.rows() == 0 || matrix.cols() == 0)
    throw ConfigError("dense operator needs positive dimensions");
  const Index m = matrix.rows(), n = matrix.cols();
  return Operator(std::make_shared<const OperatorNode>(
                      OperatorNode{DenseNode{std::move(matrix)}}),
                  n, m);
}

inline Operator Operator::circular_convolution(Vector kernel, Index n) {
  if (n <= 0) throw ConfigError("convolution length must be positive");
  if (kernel.size() == 0 || kernel.size() > n)
    throw ConfigError("convolution kernel must have between 1 and n taps");
  return Operator(std::make_shared<const OperatorNode>(
                      OperatorNode{ConvolutionNode{std::move(kernel), n}}),
                  n, n);
}

inline Operator Operator::masked_sampling(std::vector<Index> indices, Index n) {
  if (n <= 0) throw ConfigError("sampling length must be positive");
  if (indices.empty()) throw ConfigError("sampling mask is empty");
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] < 0 || indices[k] >= n)
      throw ConfigError("sampling index out of range");
    if (k > 0 && indices[k] <= indices[k - 1])
      throw ConfigError("sampling indices must be strictly increasing");
  }
  const auto m = static_cast<Index>(indices.size());
  return Operator(std::make_shared<const OperatorNode>(
                      OperatorNode{SamplingNode{std::move(indices), n}}),
                  n, m);
}

inline Operator Operator::compose(Operator outer, Operator inner) {
  if (inner.out_dim() != outer.in_dim())
    throw DimensionError("compose: inner output vs outer input",
                         outer.in_dim(), inner.out_dim());
  const Index in = inner.in_dim(), out = outer.out_dim();
  return Operator(
      std::make_shared<const OperatorNode>(
          OperatorNode{ComposedNode{std::move(outer), std::move(inner)}}),
      in, out);
}

inline OperatorKind Operator::kind() const {
  return static_cast<OperatorKind>(node_->data.index());
}

namespace detail {

inline Vector convolve(const Vector& kernel, Index n, const Vector& x) {
  Vector out = Vector::Zero(n);
  for (Index j = 0; j < kernel.size(); ++j) {
    const double k = kernel[j];
    if (k == 0.0) continue;
    for (Index i = 0; i < n; ++i) out[i] += k * x[(i - j + n) % n];
  }
  return out;
}

// Adjoint of convolve: correlation with the kernel.
inline Vector correlate(const Vector& kernel, Index n, const Vector& y) {
  Vector out = Vector::Zero(n);
  for (Index j = 0; j < kernel.size(); ++j) {
    const double k = kernel[j];
    if (k == 0.0) continue;
    for (Index i = 0; i < n; ++i) out[(i - j + n) % n] += k * y[i];
  }
  return out;
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

} // namespace detail

inline Vector Operator::apply(const Vector& x) const {
  require_dim("Operator::apply", in_dim_, x.size());
  return std::visit(
      detail::overloaded{
          [&](const DenseNode& d) -> Vector { return d.matrix * x; },
          [&](const ConvolutionNode& c) -> Vector {
            return detail::convolve(c.kernel, c.n, x);
          },
          [&](const SamplingNode& s) -> Vector {
            Vector out(static_cast<Index>(s.indices.size()));
            for (std::size_t k = 0; k < s.indices.size(); ++k)
              out[static_cast<Index>(k)] = x[s.indices[k]];
            return out;
          },
          [&](const ComposedNode& c) -> Vector {
            return c.outer.apply(c.inner.apply(x));
          }},
      node_->data);
}

inline Vector Operator::adjoint(const Vector& y) const {
  require_dim("Operator::adjoint", out_dim_, y.size());
  return std::visit(
      detail::overloaded{
          [&](const DenseNode& d) -> Vector {
            return d.matrix.transpose() * y;
          },
          [&](const ConvolutionNode& c) -> Vector {
            return detail::correlate(c.kernel, c.n, y);
          },
          [&](const SamplingNode& s) -> Vector {
            Vector out = Vector::Zero(s.n);
            for (std::size_t k = 0; k < s.indices.size(); ++k)
              out[s.indices[k]] = y[static_cast<Index>(k)];
            return out;
          },
          [&](const ComposedNode& c) -> Vector {
            return c.inner.adjoint(c.outer.adjoint(y));
          }},
      node_->data);
}

inline Vector apply(const Operator& op, const Vector& x) { return op.apply(x); }
inline Vector adjoint_apply(const Operator& op, const Vector& y) {
  return op.adjoint(y);
}

/// Dense matrix whose column j is apply(op, e_j).
inline Matrix materialize(const Operator& op,
                          Index budget = kDefaultMaterializeBudget) {
  const Index m = op.out_dim(), n = op.in_dim();
  if (m > budget / n)
    throw BudgetError("materialize: " + std::to_string(m) + "x" +
                      std::to_string(n) + " exceeds budget of " +
                      std::to_string(budget) + " entries");
  if (const auto* d = std::get_if<DenseNode>(&op.node().data)) return d->matrix;
  Matrix out(m, n);
  Vector e = Vector::Zero(n);
  for (Index j = 0; j < n; ++j) {
    e[j] = 1.0;
    out.col(j) = op.apply(e);
    e[j] = 0.0;
  }
  return out;
}

/// Largest singular value by power iteration on A*A.
///
/// Stops once the eigen-residual ‖A*A v − λ v‖ drops below tol·λ and
/// returns sqrt(λ). Throws ConvergenceError carrying the last iterate when
/// max_iter is exhausted.
inline double operator_norm(const Operator& op, double tol = 1e-8,
                            int max_iter = 100000, std::uint64_t seed = 0) {
  if (!(tol > 0)) throw ConfigError("operator_norm: tol must be positive");
  Rng rng(seed);
  Vector v = rng.unit_vector(op.in_dim());
  double lambda = 0.0;
  double residual = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector w = op.adjoint(op.apply(v));
    lambda = v.dot(w);
    if (!std::isfinite(lambda))
      throw NumericalError("operator_norm: non-finite Rayleigh quotient");
    const double wn = w.norm();
    if (wn == 0.0) return 0.0; // v in the kernel; only possible for A = 0
                               // with probability one
    residual = (w - lambda * v).norm();
    if (residual <= tol * lambda) return std::sqrt(lambda);
    v = w / wn;
  }
  throw ConvergenceError("operator_norm: power iteration did not converge", v,
                         residual, max_iter);
}

// ---------------------------------------------------------------------------
// Singular value decomposition
// ---------------------------------------------------------------------------

/// Thin singular system A = U diag(s) Vᵀ restricted to the numerical rank.
struct SvdFactorization {
  Matrix left;           // U, m×r
  Vector singular;       // s, non-increasing, strictly positive
  Matrix right;          // V, n×r
  Index out_dim = 0;
  Index in_dim = 0;

  Index rank() const { return singular.size(); }
  double s_max() const { return rank() > 0 ? singular[0] : 0.0; }
  /// Smallest nonzero singular value (0 if A = 0).
  double s_min() const { return rank() > 0 ? singular[rank() - 1] : 0.0; }
};

/// SVD of the materialized operator. Singular values below
/// rank_tolerance·s_max are dropped as exact zeros.
inline SvdFactorization svd(const Operator& op,
                            double rank_tolerance = kDefaultRankTolerance,
                            Index budget = kDefaultMaterializeBudget) {
  const Matrix a = materialize(op, budget);
  if (!a.allFinite()) throw NumericalError("svd: operator has non-finite entries");
  Eigen::JacobiSVD<Matrix> jsvd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (jsvd.info() != Eigen::Success)
    throw NumericalError("svd: Jacobi iteration failed");
  const Vector& s = jsvd.singularValues();
  const double smax = s.size() > 0 ? s[0] : 0.0;
  Index r = 0;
  while (r < s.size() && s[r] > rank_tolerance * smax && s[r] > 0.0) ++r;
  SvdFactorization f;
  f.out_dim = a.rows();
  f.in_dim = a.cols();
  f.singular = s.head(r);
  f.left = jsvd.matrixU().leftCols(r);
  f.right = jsvd.matrixV().leftCols(r);
  return f;
}

/// Orthonormal basis of ker(A) (n × (n − r)), the complement of the right
/// singular vectors.
inline Matrix kernel_basis(const SvdFactorization& f) {
  const Index n = f.in_dim, r = f.rank();
  if (r == 0) return Matrix::Identity(n, n);
  if (r == n) return Matrix(n, 0);
  Eigen::HouseholderQR<Matrix> qr(f.right);
  Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  return q.rightCols(n - r);
}

} // namespace ipreg
