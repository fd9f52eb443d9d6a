#pragma once

// Shared helpers for the test binaries: finite differences and seeded
// operator fixtures.

#include "ipreg/ipreg.hpp"

#include <algorithm>
#include <functional>
#include <vector>

namespace ipreg::testing {

/// Central differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = 1e-6) {
  Vector g(x.size());
  Vector xp = x, xm = x;
  for (Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    g[i] = (f(xp) - f(xm)) / (2 * h);
    xp[i] = xm[i] = x[i];
  }
  return g;
}

inline double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-12);
}

inline std::vector<Index> random_indices(Rng& rng, Index n, Index m) {
  std::vector<Index> all(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  for (Index i = n; i > 1; --i)
    std::swap(all[static_cast<std::size_t>(i - 1)], all[static_cast<std::size_t>(rng.index(i))]);
  std::vector<Index> pick(all.begin(), all.begin() + m);
  std::sort(pick.begin(), pick.end());
  return pick;
}

/// Seeded operator of the given kind (0 dense, 1 convolution, 2 sampling,
/// 3 composed) on R^n.
inline Operator random_operator(int kind, Index n, Rng& rng) {
  switch (kind) {
  case 0: return Operator::dense(rng.normal_matrix(n - 2, n));
  case 1: return Operator::circular_convolution(rng.normal_vector(3), n);
  case 2: return Operator::masked_sampling(random_indices(rng, n, n / 2), n);
  default:
    return Operator::compose(Operator::masked_sampling(random_indices(rng, n, n / 2), n),
                             Operator::circular_convolution(rng.normal_vector(4), n));
  }
}

/// Rank-deficient m×n dense matrix of the given rank.
inline Matrix low_rank_matrix(Rng& rng, Index m, Index n, Index rank) {
  return rng.normal_matrix(m, rank) * rng.normal_matrix(rank, n);
}

} // namespace ipreg::testing
