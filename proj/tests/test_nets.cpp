#include "support.hpp"

#include <gtest/gtest.h>

using namespace ipreg;
using ipreg::testing::fd_gradient;
using ipreg::testing::rel_err;

namespace {

FeedforwardNet random_net(std::uint64_t seed, Activation hidden, bool conv_first) {
  Rng rng(seed);
  std::vector<Layer> layers;
  if (conv_first)
    layers.push_back(Layer::convolution(rng.normal_vector(3), 6, rng.normal_vector(6), hidden));
  layers.push_back(Layer::dense(rng.normal_matrix(5, 6), rng.normal_vector(5), hidden));
  layers.push_back(Layer::dense(rng.normal_matrix(4, 5), rng.normal_vector(4), Activation::tanh()));
  return FeedforwardNet(std::move(layers));
}

// True when every pre-activation sits at least 1e-4 away from a kink.
bool away_from_kinks(const FeedforwardNet& net, const Vector& x) {
  const auto fw = net_forward(net, x);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    if (!net.layers()[l].activation.has_kink()) continue;
    if (fw.cache.pre_activations[l].cwiseAbs().minCoeff() < 1e-4) return false;
  }
  return true;
}

} // namespace

TEST(Forward, IdentityAndRelu) {
  Vector x(2);
  x << -1, 2;
  EXPECT_EQ(net_forward(linear_net(Matrix::Identity(2, 2), Vector::Zero(2)), x).output, x);
  const FeedforwardNet relu({Layer::dense(Matrix::Identity(2, 2), Vector::Zero(2), Activation::relu())});
  EXPECT_EQ(net_forward(relu, x).output, Vector((Vector(2) << 0, 2).finished()));
}

TEST(Forward, MatchesStraightLineEvaluation) {
  Rng rng(30);
  const Matrix w1 = rng.normal_matrix(5, 3), w2 = rng.normal_matrix(2, 5);
  const Vector b1 = rng.normal_vector(5), b2 = rng.normal_vector(2);
  const FeedforwardNet net({Layer::dense(w1, b1, Activation::leaky_relu(0.1)),
                            Layer::dense(w2, b2, Activation::tanh())});
  const Vector x = rng.normal_vector(3);
  Vector h = w1 * x + b1;
  for (Index i = 0; i < h.size(); ++i) h[i] = h[i] > 0 ? h[i] : 0.1 * h[i];
  Vector out = w2 * h + b2;
  for (Index i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  EXPECT_LE((net_forward(net, x).output - out).norm(), 1e-14);
}

TEST(Forward, ConvolutionLayerMatchesOperator) {
  Rng rng(31);
  const Vector taps = rng.normal_vector(3), b = rng.normal_vector(8), x = rng.normal_vector(8);
  const FeedforwardNet net({Layer::convolution(taps, 8, b, Activation::identity())});
  const Vector want = Operator::circular_convolution(taps, 8).apply(x) + b;
  EXPECT_LE((net(x) - want).norm(), 1e-14);
  EXPECT_EQ(net.param_count(), 3 + 8);
}

TEST(Forward, RejectsWrongInputAndBrokenChain) {
  EXPECT_THROW(net_forward(zero_net(3), Vector::Ones(4)), DimensionError);
  EXPECT_THROW(FeedforwardNet({Layer::dense(Matrix::Zero(2, 3), Vector::Zero(2), Activation::relu()),
                               Layer::dense(Matrix::Zero(2, 3), Vector::Zero(2), Activation::relu())}),
               DimensionError);
}

TEST(Backward, LinearNetGradInputIsTranspose) {
  Rng rng(32);
  const Matrix w = rng.normal_matrix(3, 4);
  const FeedforwardNet net = linear_net(w, rng.normal_vector(3));
  const auto fw = net_forward(net, rng.normal_vector(4));
  const Vector g = rng.normal_vector(3);
  EXPECT_LE((net_backward(net, fw.cache, g).grad_input - w.transpose() * g).norm(), 1e-14);
  const auto zero = net_backward(net, fw.cache, Vector::Zero(3));
  EXPECT_EQ(zero.grad_params.norm(), 0.0);
  EXPECT_EQ(zero.grad_input.norm(), 0.0);
}

TEST(Backward, MatchesFiniteDifferences) {
  int checked = 0;
  for (int conv = 0; conv < 2; ++conv) {
    for (Activation act : {Activation::relu(), Activation::leaky_relu(0.2), Activation::tanh()}) {
      const FeedforwardNet net = random_net(40 + conv, act, conv == 1);
      Rng rng(50 + conv);
      for (int t = 0; t < 20; ++t) {
        Vector x = rng.normal_vector(6);
        while (!away_from_kinks(net, x)) x = rng.normal_vector(6);
        const Vector g = rng.normal_vector(4);
        const auto fw = net_forward(net, x);
        const auto bw = net_backward(net, fw.cache, g);

        const Vector gx = fd_gradient([&](const Vector& z) { return g.dot(net(z)); }, x);
        EXPECT_LE(rel_err(bw.grad_input, gx), 1e-5);
        FeedforwardNet probe = net;
        const Vector gt = fd_gradient(
            [&](const Vector& th) {
              probe.set_params(th);
              return g.dot(probe(x));
            },
            net.params());
        EXPECT_LE(rel_err(bw.grad_params, gt), 1e-5);
        ++checked;
      }
    }
  }
  EXPECT_EQ(checked, 120);
}

TEST(Backward, RejectsStaleCache) {
  Rng rng(33);
  FeedforwardNet net = random_net(34, Activation::tanh(), false);
  const auto fw = net_forward(net, rng.normal_vector(6));
  Vector th = net.params();
  th[0] += 1.0;
  net.set_params(th);
  EXPECT_THROW(net_backward(net, fw.cache, Vector::Ones(4)), ConfigError);
}

TEST(Params, RoundTripAndOrder) {
  const FeedforwardNet net = random_net(35, Activation::relu(), true);
  FeedforwardNet copy = net;
  Vector th = net.params();
  copy.set_params(th);
  EXPECT_EQ(copy.params(), th);
  // row-major weights, then bias, layer by layer
  const FeedforwardNet lin = linear_net((Matrix(2, 2) << 1, 2, 3, 4).finished(), (Vector(2) << 5, 6).finished());
  EXPECT_EQ(lin.params(), (Vector(6) << 1, 2, 3, 4, 5, 6).finished());
}

TEST(Residual, KnownCases) {
  Rng rng(36);
  const Vector x = rng.normal_vector(4);
  EXPECT_EQ(residual_forward(zero_net(4, 3), x), x);
  EXPECT_LE((residual_forward(linear_net(Matrix::Identity(4, 4), Vector::Zero(4)), x) - 2 * x).norm(), 1e-15);
  const FeedforwardNet net = init_params({4, 6, 4}, {Activation::tanh(), Activation::identity()}, 3);
  EXPECT_LE((residual_forward(net, x) - (x + net_forward(net, x).output)).norm(), 1e-15);
  EXPECT_THROW(residual_forward(init_params({4, 3}, {Activation::identity()}, 1), x), DimensionError);
}

TEST(NullSpace, KnownCases) {
  const Operator s = Operator::masked_sampling({0, 1}, 4);
  const ProjectionHandle p = ProjectionHandle::explicit_svd(svd(s));
  Rng rng(37);
  const Vector x = rng.normal_vector(4);
  EXPECT_EQ(nullspace_forward(NullSpaceNet(zero_net(4), p), x), x);
  const NullSpaceNet constant(linear_net(Matrix::Zero(4, 4), Vector::Ones(4)), p);
  EXPECT_LE((nullspace_forward(constant, x) - (x + (Vector(4) << 0, 0, 1, 1).finished())).norm(), 1e-15);
  const Operator inj = Operator::dense(rng.normal_matrix(6, 4));
  const NullSpaceNet any(init_params({4, 8, 4}, {Activation::relu(), Activation::identity()}, 9),
                         ProjectionHandle::explicit_svd(svd(inj)));
  EXPECT_LE((nullspace_forward(any, x) - x).norm(), 1e-12);
  EXPECT_THROW(NullSpaceNet(zero_net(3), p), DimensionError);
}

TEST(NullSpace, DataConsistencyForSeededNets) {
  Rng rng(38);
  const Operator a = Operator::compose(Operator::masked_sampling(ipreg::testing::random_indices(rng, 16, 8), 16),
                                       Operator::circular_convolution(rng.normal_vector(3), 16));
  const double nrm = operator_norm(a);
  const ProjectionHandle cg = ProjectionHandle::iterative(a, ProjectionMethod::ConjugateGradient);
  double worst_residual = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const FeedforwardNet n = init_params({16, 24, 16}, {Activation::relu(), Activation::identity()}, s);
    const NullSpaceNet phi(n, cg);
    for (int t = 0; t < 20; ++t) {
      const Vector x = rng.normal_vector(16);
      EXPECT_LE((a.apply(phi(x)) - a.apply(x)).norm(), 1e-8 * nrm * (1 + x.norm()));
      worst_residual = std::max(worst_residual, (a.apply(residual_forward(n, x)) - a.apply(x)).norm() /
                                                    (nrm * x.norm()));
    }
  }
  // plain residual nets do not keep the data
  EXPECT_GT(worst_residual, 1e-3);
}

TEST(NullSpace, ComposedWithPseudoinverseIsRightInverse) {
  Rng rng(39);
  const Operator a = Operator::dense(ipreg::testing::low_rank_matrix(rng, 6, 10, 5));
  const SvdFactorization f = svd(a);
  const NullSpaceNet phi(init_params({10, 12, 10}, {Activation::tanh(), Activation::identity()}, 2),
                         ProjectionHandle::explicit_svd(f));
  for (int t = 0; t < 10; ++t) {
    const Vector y = a.apply(rng.normal_vector(10));
    EXPECT_LE((a.apply(phi(pseudoinverse_apply(f, y))) - y).norm(), 1e-10 * y.norm());
  }
}

TEST(Lipschitz, KnownBounds) {
  EXPECT_NEAR(lipschitz_upper_bound(linear_net(2 * Matrix::Identity(3, 3), Vector::Zero(3))), 2.0, 1e-12);
  EXPECT_EQ(lipschitz_upper_bound(zero_net(3)), 0.0);
  const NullSpaceNet phi(zero_net(4), ProjectionHandle::explicit_svd(svd(Operator::masked_sampling({0}, 4))));
  EXPECT_EQ(lipschitz_upper_bound(phi), 1.0);
  Rng rng(40);
  const Matrix w1 = rng.normal_matrix(5, 4), w2 = rng.normal_matrix(3, 5);
  const FeedforwardNet net({Layer::dense(w1, Vector::Zero(5), Activation::relu()),
                            Layer::dense(w2, Vector::Zero(3), Activation::identity())});
  const double oracle = svd(Operator::dense(w1)).s_max() * svd(Operator::dense(w2)).s_max();
  EXPECT_NEAR(lipschitz_upper_bound(net), oracle, 1e-10 * oracle);
  const Vector taps = rng.normal_vector(3);
  const FeedforwardNet conv({Layer::convolution(taps, 8, Vector::Zero(8), Activation::identity())});
  const double conv_norm = svd(Operator::circular_convolution(taps, 8)).s_max();
  EXPECT_NEAR(lipschitz_upper_bound(conv), conv_norm, 1e-10 * conv_norm);
  const FeedforwardNet steep({Layer::dense(Matrix::Identity(2, 2), Vector::Zero(2), Activation::leaky_relu(2.0))});
  EXPECT_THROW(lipschitz_upper_bound(steep), ConfigError);
}

TEST(Lipschitz, BoundsObservedQuotients) {
  const FeedforwardNet net = init_params({6, 10, 6}, {Activation::relu(), Activation::tanh()}, 4);
  const double l = lipschitz_upper_bound(net);
  Rng rng(41);
  for (int t = 0; t < 100; ++t) {
    const Vector x = rng.normal_vector(6), z = rng.normal_vector(6);
    EXPECT_LE((net(x) - net(z)).norm(), l * (x - z).norm() * (1 + 1e-12));
  }
}

TEST(Init, DeterministicGlorotUniform) {
  const std::vector<Activation> acts = {Activation::relu(), Activation::identity()};
  const FeedforwardNet a = init_params({4, 8, 4}, acts, 7), b = init_params({4, 8, 4}, acts, 7);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_NE(a.params(), init_params({4, 8, 4}, acts, 8).params());
  EXPECT_EQ(a.param_count(), 76);
  const double bound = std::sqrt(6.0 / 12.0);
  for (const auto& l : a.layers()) {
    EXPECT_LE(l.weight.cwiseAbs().maxCoeff(), bound);
    EXPECT_GT(l.weight.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(l.bias.norm(), 0.0);
  }
  EXPECT_THROW(init_params({4}, {}, 1), ConfigError);
  EXPECT_THROW(init_params({4, 0}, {Activation::relu()}, 1), ConfigError);
}
