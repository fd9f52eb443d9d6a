#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

namespace ipreg {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr const char* kVersion = "0.3.1";

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
  DimensionError(const std::string& what, Index expected, Index got)
      : Error(what + ": expected dimension " + std::to_string(expected) +
              ", got " + std::to_string(got)),
        expected_(expected), got_(got) {}
  Index expected() const { return expected_; }
  Index got() const { return got_; }

private:
  Index expected_;
  Index got_;
};

/// Invalid construction arguments or experiment configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Argument outside the domain of a function (e.g. negative entries for KL).
class DomainError : public Error {
public:
  using Error::Error;
};

class BudgetError : public Error {
public:
  using Error::Error;
};

/// Non-finite values, breakdown of a factorization, failed line search.
class NumericalError : public Error {
public:
  using Error::Error;
};

/// An iterative method ran out of iterations. Carries the last iterate.
class ConvergenceError : public NumericalError {
public:
  ConvergenceError(const std::string& what, Vector last_iterate,
                   double residual, int iterations)
      : NumericalError(what + " (residual " + std::to_string(residual) +
                       " after " + std::to_string(iterations) +
                       " iterations)"),
        last_iterate_(std::move(last_iterate)), residual_(residual),
        iterations_(iterations) {}
  const Vector& last_iterate() const { return last_iterate_; }
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

private:
  Vector last_iterate_;
  double residual_;
  int iterations_;
};

inline void require_dim(const char* what, Index expected, Index got) {
  if (expected != got) throw DimensionError(what, expected, got);
}

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

/// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag = 0) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seeded generator with platform-independent uniform and normal draws.
/// The std distributions are implementation-defined, so they are avoided
/// wherever results end up in files.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

  /// Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  Index index(Index n) {
    return static_cast<Index>(uniform() * static_cast<double>(n));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Box-Muller; 1 - u lies in (0, 1].
    const double r = std::sqrt(-2.0 * std::log(1.0 - uniform()));
    const double phi = 2.0 * 3.14159265358979323846 * uniform();
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
  }

  Vector normal_vector(Index n) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }
  Vector uniform_vector(Index n, double lo, double hi) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }
  Matrix normal_matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }
  /// Uniformly distributed direction on the unit sphere.
  Vector unit_vector(Index n) {
    Vector v = normal_vector(n);
    const double nv = v.norm();
    return nv > 0 ? Vector(v / nv) : Vector(Vector::Unit(n, 0));
  }

private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

} // namespace ipreg
