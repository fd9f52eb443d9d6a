#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ipreg;
using ipreg::testing::fd_gradient;
using ipreg::testing::rel_err;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

FeedforwardNet id_net(Index n) { return linear_net(Matrix::Identity(n, n), Vector::Zero(n)); }

// R(x) = ‖x‖² via E = D = Id, p = 2, unit weights, no autoencoder term.
LearnedRegularizer squared_norm_reg(Index n) {
  return LearnedRegularizer(id_net(n), id_net(n), 0.0, Vector::Ones(n), 2.0);
}

LearnedRegularizer random_reg(Index n, Index code, double p, double eps, std::uint64_t seed) {
  Rng rng(seed);
  FeedforwardNet e({Layer::dense(rng.normal_matrix(code, n), rng.normal_vector(code), Activation::tanh()),
                    Layer::dense(rng.normal_matrix(code, code), rng.normal_vector(code), Activation::identity())});
  FeedforwardNet d({Layer::dense(rng.normal_matrix(n, code), rng.normal_vector(n), Activation::tanh())});
  return LearnedRegularizer(e, d, 0.7, rng.uniform_vector(code, 0.5, 1.5), p, eps);
}

} // namespace

TEST(Similarity, KnownValues) {
  Rng rng(80);
  const Vector y = rng.uniform_vector(5, 0.1, 2.0);
  EXPECT_EQ(similarity(SimilarityKind::SquaredNorm, y, y), 0.0);
  EXPECT_NEAR(similarity(SimilarityKind::KullbackLeibler, y, y), 0.0, 1e-15);
  EXPECT_NEAR(similarity(SimilarityKind::KullbackLeibler, vec({1}), vec({std::exp(1.0)})),
              std::exp(1.0) - 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(similarity(SimilarityKind::SquaredNorm, vec({1, 0}), vec({0, 1})), 2.0);
}

TEST(Similarity, KullbackLeiblerConventions) {
  // 0·log(0/b) = 0 leaves b − 0
  EXPECT_NEAR(similarity(SimilarityKind::KullbackLeibler, vec({0, 1}), vec({2, 1})), 2.0, 1e-15);
  EXPECT_EQ(similarity(SimilarityKind::KullbackLeibler, vec({1}), vec({0})), kInf);
  EXPECT_EQ(similarity(SimilarityKind::KullbackLeibler, vec({0}), vec({0})), 0.0);
  EXPECT_THROW(similarity(SimilarityKind::KullbackLeibler, vec({-1}), vec({1})), DomainError);
  EXPECT_THROW(similarity(SimilarityKind::KullbackLeibler, vec({1}), vec({-1})), DomainError);
  EXPECT_THROW(similarity(SimilarityKind::SquaredNorm, vec({1}), vec({1, 2})), DimensionError);
}

TEST(Similarity, KullbackLeiblerIsAMetricLikeDivergence) {
  Rng rng(81);
  for (int t = 0; t < 1000; ++t) {
    const Vector a = rng.uniform_vector(4, 0.0, 3.0), b = rng.uniform_vector(4, 0.01, 3.0);
    const double d = similarity(SimilarityKind::KullbackLeibler, a, b);
    EXPECT_GE(d, 0.0);
    EXPECT_EQ(d == 0.0, a == b);
    EXPECT_NEAR(similarity(SimilarityKind::KullbackLeibler, b, b), 0.0, 1e-14);
  }
}

TEST(Similarity, KullbackLeiblerLocallyQuadratic) {
  // grid estimate of inf d(y, y')/‖y − y'‖² over a bounded box in the cone
  double c = kInf;
  for (double a = 0.1; a <= 2.0 + 1e-12; a += 0.05)
    for (double b = 0.1; b <= 2.0 + 1e-12; b += 0.05) {
      if (std::abs(a - b) < 1e-9) continue;
      c = std::min(c, similarity(SimilarityKind::KullbackLeibler, vec({a}), vec({b})) / ((a - b) * (a - b)));
    }
  EXPECT_GT(c, 0.0);
  // on [0.1, 2] the scalar constant is bounded below by 1/(2·max) = 1/4
  EXPECT_GE(c, 0.25 - 1e-12);
}

TEST(Similarity, GradientMatchesFiniteDifferences) {
  Rng rng(82);
  const Vector y = rng.uniform_vector(5, 0.5, 2.0);
  for (SimilarityKind k : {SimilarityKind::SquaredNorm, SimilarityKind::KullbackLeibler}) {
    const Vector x = rng.uniform_vector(5, 0.5, 2.0);
    const Vector fd = fd_gradient([&](const Vector& v) { return similarity(k, v, y); }, x);
    EXPECT_LE(rel_err(similarity_grad(k, x, y), fd), 1e-6);
  }
}

TEST(Regularizer, ExactAutoencoderGivesL1) {
  const LearnedRegularizer r(id_net(3), id_net(3), 1.0, Vector::Ones(3), 1.0, 0.0);
  EXPECT_DOUBLE_EQ(regularizer_value(r, vec({1, -2, 0.5})), 3.5);
  EXPECT_EQ(regularizer_value(r, Vector::Zero(3)), 0.0);
  const LearnedRegularizer smooth = harness::fixture_regularizer(6, "difference", 1.0, 1.0, 0.1);
  EXPECT_EQ(regularizer_value(smooth, Vector::Zero(6)), 0.0);
}

TEST(Regularizer, RejectsBadParameters) {
  EXPECT_THROW(LearnedRegularizer(id_net(2), id_net(2), -1, Vector::Ones(2), 1), ConfigError);
  EXPECT_THROW(LearnedRegularizer(id_net(2), id_net(2), 1, Vector::Ones(2), 2.5), ConfigError);
  EXPECT_THROW(LearnedRegularizer(id_net(2), id_net(2), 1, -Vector::Ones(2), 1), ConfigError);
  EXPECT_THROW(LearnedRegularizer(id_net(2), id_net(3), 1, Vector::Ones(2), 1), DimensionError);
}

TEST(Regularizer, GradientMatchesFiniteDifferences) {
  Rng rng(83);
  for (double p : {1.0, 1.5, 2.0}) {
    const LearnedRegularizer r = random_reg(5, 4, p, 0.1, 84);
    for (int t = 0; t < 20; ++t) {
      const Vector x = rng.normal_vector(5);
      const auto vg = regularizer_value_and_grad(r, x);
      EXPECT_NEAR(vg.value, regularizer_value(r, x), 1e-12 * std::max(1.0, vg.value));
      const Vector fd = fd_gradient([&](const Vector& v) { return regularizer_value(r, v); }, x);
      EXPECT_LE(rel_err(vg.grad, fd), 1e-5) << "p=" << p;
    }
  }
}

TEST(Regularizer, NonnegativeAndCoerciveAlongRays) {
  const LearnedRegularizer r = random_reg(5, 4, 1.0, 1e-6, 85);
  Rng rng(86);
  for (int k = 0; k < 20; ++k) {
    const Vector u = rng.unit_vector(5);
    double prev = -1;
    for (double t : {10.0, 100.0, 1000.0, 1e4}) {
      const double v = regularizer_value(r, t * u);
      EXPECT_GE(v, 0.0);
      EXPECT_GT(v, prev);
      prev = v;
    }
    EXPECT_GT(prev, 1e6);
  }
}

TEST(NettSolve, UnregularizedFitRecoversData) {
  const Index n = 4;
  TikhonovProblem pb{Operator::identity(n), vec({1, -2, 3, 0.5}), 0.7,
                     LearnedRegularizer(id_net(n), id_net(n), 2.0, Vector::Zero(n), 1.0)};
  const SolverReport rep = nett_solve(pb);
  EXPECT_LE((rep.x - pb.data).norm(), 1e-8);
}

TEST(NettSolve, QuadraticClosedForm) {
  Rng rng(87);
  const Index n = 6;
  const double alpha = 0.3;
  TikhonovProblem pb{Operator::identity(n), rng.normal_vector(n), alpha, squared_norm_reg(n)};
  SolverConfig cfg;
  cfg.tol = 1e-12;
  const SolverReport rep = nett_solve(pb, cfg);
  EXPECT_EQ(rep.termination, Termination::ToleranceMet);
  EXPECT_LE((rep.x - pb.data / (1 + alpha)).norm(), 1e-10);
}

TEST(NettSolve, TraceNonIncreasingAndStationary) {
  Rng rng(88);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Operator a = harness::box_deconvolution(12, 3);
    TikhonovProblem pb{a, a.apply(rng.normal_vector(12)), 0.05, random_reg(12, 8, 1.0, 0.1, 90 + s)};
    SolverConfig cfg;
    cfg.tol = 1e-8;
    const SolverReport rep = nett_solve(pb, cfg);
    for (std::size_t k = 1; k < rep.objective.size(); ++k) EXPECT_LE(rep.objective[k], rep.objective[k - 1]);
    EXPECT_NE(rep.termination, Termination::MaxIter);
    EXPECT_LE(rep.stationarity, 1e-6);
    EXPECT_EQ(rep.objective.size(), static_cast<std::size_t>(rep.iterations) + 1);
  }
}

TEST(NettSolve, ObjectiveGradientMatchesFiniteDifferences) {
  Rng rng(89);
  const Operator a = harness::box_deconvolution(8, 3);
  for (SimilarityKind k : {SimilarityKind::SquaredNorm, SimilarityKind::KullbackLeibler}) {
    TikhonovProblem pb{a, rng.uniform_vector(8, 0.5, 1.5), 0.2, random_reg(8, 5, 1.0, 0.1, 91), k};
    for (int t = 0; t < 20; ++t) {
      const Vector x = rng.uniform_vector(8, 0.5, 1.5);
      const Vector fd = fd_gradient([&](const Vector& v) { return nett_objective(pb, v); }, x);
      EXPECT_LE(rel_err(nett_gradient(pb, x), fd), 1e-5);
    }
  }
}

TEST(NettSolve, KullbackLeiblerOnOrthant) {
  const Index n = 10;
  const Operator a = harness::box_deconvolution(n, 3);
  const Vector xt = harness::generate_phantoms(harness::PhantomKind::PiecewiseConstant, 1, n, 92)[0].cwiseAbs();
  TikhonovProblem pb{a, a.apply(xt), 0.01, harness::fixture_regularizer(n, "difference", 1.0, 1.0, 0.5),
                     SimilarityKind::KullbackLeibler, DomainConstraint::NonnegativeOrthant};
  SolverConfig cfg;
  cfg.tol = 1e-8;
  const SolverReport rep = nett_solve(pb, cfg);
  EXPECT_GE(rep.x.minCoeff(), 0.0);
  for (std::size_t k = 1; k < rep.objective.size(); ++k) EXPECT_LE(rep.objective[k], rep.objective[k - 1]);
  EXPECT_LT(rep.objective.back(), rep.objective.front());

  Rng rng(93);
  TikhonovProblem bad = pb;
  bad.op = Operator::dense(rng.normal_matrix(n, n));
  EXPECT_THROW(nett_solve(bad), DomainError);
  EXPECT_TRUE(is_positive_operator(a));
}

TEST(NettSolve, RejectsInvalidProblems) {
  TikhonovProblem pb{Operator::identity(3), Vector::Ones(3), 0.0, squared_norm_reg(3)};
  EXPECT_THROW(nett_solve(pb), ConfigError);
  pb.alpha = 1;
  pb.data = Vector::Ones(2);
  EXPECT_THROW(nett_solve(pb), DimensionError);
}

TEST(NettSolve, StableUnderDataPerturbation) {
  const Index n = 16;
  const Operator a = harness::box_deconvolution(n, 4);
  const Vector xt = harness::generate_phantoms(harness::PhantomKind::PiecewiseConstant, 1, n, 94)[0];
  const LearnedRegularizer reg = harness::fixture_regularizer(n, "difference", 1.0, 1.0, 0.5);
  TikhonovProblem pb{a, a.apply(xt), 0.05, reg};
  SolverConfig cfg;
  cfg.tol = 1e-11;
  const Vector x0 = nett_solve(pb, cfg).x;
  Rng rng(95);
  const Vector dir = rng.unit_vector(n);
  // frozen regression bound on ‖x(y + εe) − x(y)‖ / ε for this fixture
  constexpr double kStabilityBound = 25.0;
  for (double eps : {1e-3, 1e-4}) {
    TikhonovProblem q = pb;
    q.data = pb.data + eps * dir;
    const double ratio = (nett_solve(q, cfg).x - x0).norm() / eps;
    EXPECT_LE(ratio, kStabilityBound) << "eps " << eps;
  }
}

TEST(Bregman, QuadraticAffineAndDiagonal) {
  Rng rng(96);
  const LearnedRegularizer quad = squared_norm_reg(5);
  const Vector x = rng.normal_vector(5), xt = rng.normal_vector(5);
  EXPECT_NEAR(bregman_distance(quad, xt, x), (xt - x).squaredNorm(), 1e-12);
  // linear code shifted into the positive half-space: R(x) = Σ (x_i + 10) locally
  const LearnedRegularizer affine(linear_net(Matrix::Identity(5, 5), Vector::Constant(5, 10.0)), id_net(5), 0.0,
                                  Vector::Ones(5), 1.0, 0.0);
  EXPECT_NEAR(bregman_distance(affine, xt, x), 0.0, 1e-12);
  const LearnedRegularizer r = random_reg(5, 4, 1.0, 0.1, 97);
  EXPECT_EQ(bregman_distance(r, x, x), 0.0);
}

TEST(NonlinearityProbe, KnownModuli) {
  Rng rng(98);
  const Vector x = rng.normal_vector(5);
  for (double t : {0.1, 1.0, 3.0}) {
    EXPECT_NEAR(total_nonlinearity_probe(squared_norm_reg(5), x, t, 10, 1).sampled_upper_bound, t * t,
                1e-12 * std::max(1.0, t * t));
    const LearnedRegularizer affine(linear_net(Matrix::Identity(5, 5), Vector::Constant(5, 10.0)), id_net(5),
                                    0.0, Vector::Ones(5), 1.0, 0.0);
    EXPECT_NEAR(total_nonlinearity_probe(affine, x, t, 10, 1).sampled_upper_bound, 0.0, 1e-12);
  }
  const LearnedRegularizer r = random_reg(5, 4, 1.0, 0.1, 99);
  double prev = kInf;
  for (int n : {1, 4, 16, 64}) {
    const auto probe = total_nonlinearity_probe(r, x, 0.5, n, 7);
    EXPECT_LE(probe.sampled_upper_bound, prev);
    EXPECT_EQ(probe.samples, n);
    prev = probe.sampled_upper_bound;
  }
  EXPECT_THROW(total_nonlinearity_probe(r, x, 0.0, 4, 1), DomainError);
}

TEST(Oracle, KnownSolutions) {
  Rng rng(100);
  const Operator inj = Operator::dense(rng.normal_matrix(6, 4));
  const Vector y = inj.apply(rng.normal_vector(4));
  EXPECT_LE((r_minimizing_oracle(inj, squared_norm_reg(4), y) - pseudoinverse_apply(svd(inj), y)).norm(), 1e-12);

  const Vector x = r_minimizing_oracle(Operator::masked_sampling({0}, 2), squared_norm_reg(2), vec({1}));
  EXPECT_NEAR(x[0], 1.0, 1e-10);
  EXPECT_NEAR(x[1], 0.0, 1e-8);

  EXPECT_THROW(r_minimizing_oracle(Operator::dense(ipreg::testing::low_rank_matrix(rng, 5, 5, 3)),
                                   squared_norm_reg(5), rng.normal_vector(5)),
               DomainError);
}

TEST(Oracle, PreservesConstraintAndMinimizes) {
  const Index n = 16;
  const Operator a = Operator::masked_sampling(harness::random_mask(n, 0.5, 101), n);
  const LearnedRegularizer reg = harness::fixture_regularizer(n, "difference", 1.0, 1.0, 0.5);
  const Vector xt = harness::generate_phantoms(harness::PhantomKind::PiecewiseConstant, 1, n, 102)[0];
  const Vector y = a.apply(xt);
  const Vector xd = r_minimizing_oracle(a, reg, y);
  EXPECT_LE((a.apply(xd) - y).norm(), 1e-8 * y.norm());
  EXPECT_LE(regularizer_value(reg, xd), regularizer_value(reg, xt) + 1e-12);
  // stationarity on the solution set: R′(x†) ⟂ ker A
  const Matrix k = kernel_basis(svd(a));
  EXPECT_LE((k.transpose() * regularizer_grad(reg, xd)).norm(), 1e-8);
}

TEST(Nett, ErrorShrinksWithNoiseAndRegularizerConverges) {
  const Index n = 16;
  const Operator a = Operator::masked_sampling(harness::random_mask(n, 0.5, 103), n);
  const LearnedRegularizer reg = harness::fixture_regularizer(n, "difference", 1.0, 1.0, 0.5);
  const Vector xt = harness::generate_phantoms(harness::PhantomKind::PiecewiseConstant, 1, n, 104)[0];
  const Vector y = a.apply(xt);
  const Vector xd = r_minimizing_oracle(a, reg, y);
  SolverConfig cfg;
  cfg.tol = 1e-10;
  double prev = kInf, last_gap = kInf;
  for (double delta : {1e-1, 1e-2, 1e-3}) {
    TikhonovProblem pb{a, harness::add_noise(y, delta, 105), std::pow(delta, 2.0 / 3.0), reg};
    cfg.x0 = xd;
    const Vector x = nett_solve(pb, cfg).x;
    const double err = (x - xd).norm();
    EXPECT_LT(err, prev) << "delta " << delta;
    prev = err;
    last_gap = std::abs(regularizer_value(reg, x) - regularizer_value(reg, xd));
  }
  EXPECT_LE(last_gap, 1e-2);
}

TEST(Nett, BregmanUpperBoundHolds) {
  const Index n = 16;
  const Operator a = Operator::masked_sampling(harness::random_mask(n, 0.5, 106), n);
  const LearnedRegularizer reg = harness::fixture_regularizer(n, "difference", 1.0, 1.0, 0.5);
  const Vector xt = harness::generate_phantoms(harness::PhantomKind::PiecewiseConstant, 1, n, 107)[0];
  const Vector xd = r_minimizing_oracle(a, reg, a.apply(xt));
  const SvdFactorization f = svd(a);
  const double gamma = harness::fixture_lipschitz(reg) / f.s_min();
  const double gamma1 = regularizer_grad(reg, xd).norm() / f.s_min();
  const double c = 2 * gamma + gamma1;
  Rng rng(108);
  for (int t = 0; t < 100; ++t) {
    const Vector x = xd + rng.uniform(0.01, 3.0) * rng.unit_vector(n);
    const double lhs = bregman_distance(reg, x, xd);
    const double rhs = regularizer_value(reg, x) - regularizer_value(reg, xd) + c * a.apply(x - xd).norm();
    EXPECT_LE(lhs, rhs + 1e-10);
  }
}

TEST(Prox, PowerAgreesWithGridSearch) {
  EXPECT_DOUBLE_EQ(prox_power(3.0, 1.0, 1.0), 2.0);
  EXPECT_EQ(prox_power(0.5, 1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(prox_power(-3.0, 1.0, 1.0), -2.0);
  for (double p : {1.0, 1.3, 1.5, 1.8, 2.0}) {
    for (double v : {-2.5, -0.4, 0.1, 0.9, 3.0}) {
      const double lam = 0.6;
      double best = 0, best_val = kInf;
      for (double u = -4.0; u <= 4.0; u += 1e-5) {
        const double val = 0.5 * (u - v) * (u - v) + lam * std::pow(std::abs(u), p);
        if (val < best_val) {
          best_val = val;
          best = u;
        }
      }
      EXPECT_NEAR(prox_power(v, lam, p), best, 1e-4) << "p " << p << " v " << v;
    }
  }
  EXPECT_THROW(prox_power(1.0, -1.0, 1.0), DomainError);
}

TEST(Synthesis, OrthogonalLassoIsSoftThreshold) {
  Rng rng(109);
  const Index n = 8;
  const Vector y = 2 * rng.normal_vector(n);
  const double alpha = 0.8;
  SolverConfig cfg;
  cfg.tol = 1e-12;
  const SynthesisResult r = synthesis_solve(Operator::identity(n), id_net(n), y, alpha, Vector::Ones(n), 1.0, cfg);
  for (Index i = 0; i < n; ++i) {
    const double st = std::copysign(std::max(std::abs(y[i]) - alpha / 2, 0.0), y[i]);
    EXPECT_NEAR(r.codes[i], st, 1e-6);
    // brute-force 1-D minimization of (u − y)² + α|u|
    double best = 0, best_val = kInf;
    for (double u = -8.0; u <= 8.0; u += 1e-4) {
      const double val = (u - y[i]) * (u - y[i]) + alpha * std::abs(u);
      if (val < best_val) {
        best_val = val;
        best = u;
      }
    }
    EXPECT_NEAR(r.codes[i], best, 1e-4);
  }
  EXPECT_LE((r.x_syn - r.codes).norm(), 1e-15);
}

TEST(Synthesis, ZeroAlphaFitsData) {
  Rng rng(110);
  const Vector y = rng.normal_vector(5);
  SolverConfig cfg;
  cfg.tol = 1e-12;
  EXPECT_LE((synthesis_solve(Operator::identity(5), id_net(5), y, 0.0, Vector::Ones(5), 1.0, cfg).codes - y).norm(),
            1e-10);
}

TEST(Synthesis, TraceNonIncreasingWithNonlinearDecoder) {
  Rng rng(111);
  const Index n = 10;
  const Operator a = harness::box_deconvolution(n, 3);
  const FeedforwardNet dec = init_params({6, n}, {Activation::tanh()}, 112);
  for (double p : {1.0, 1.5, 2.0}) {
    const SynthesisResult r = synthesis_solve(a, dec, a.apply(rng.normal_vector(n)), 0.01, Vector::Ones(6), p);
    for (std::size_t k = 1; k < r.report.objective.size(); ++k)
      EXPECT_LE(r.report.objective[k], r.report.objective[k - 1]);
    EXPECT_LE((r.x_syn - dec(r.codes)).norm(), 1e-15);
  }
  EXPECT_THROW(synthesis_solve(a, dec, Vector::Ones(n), 0.1, Vector::Zero(6), 1.0), ConfigError);
  EXPECT_THROW(synthesis_solve(a, dec, Vector::Ones(n), 0.1, Vector::Ones(6), 3.0), ConfigError);
}
