#pragma once

// Small feedforward networks with exact reverse-mode gradients, plus the
// residual wrapper x + N(x) and the null-space wrapper x + P_ker(A) N(x).
//
// Parameter vector layout (θ): layers in order; within a layer first the
// weights (dense: row-major d_out×d_in; convolutional: the kernel taps),
// then the bias (d_out entries).

#include "ipreg/geometry.hpp"

#include <complex>
#include <cstring>

namespace ipreg {

enum class ActivationKind { Identity, ReLU, LeakyReLU, Tanh };

struct Activation {
  ActivationKind kind = ActivationKind::Identity;
  double slope = 0.0; // LeakyReLU negative-side slope

  static Activation identity() { return {ActivationKind::Identity, 0.0}; }
  static Activation relu() { return {ActivationKind::ReLU, 0.0}; }
  static Activation leaky_relu(double slope) { return {ActivationKind::LeakyReLU, slope}; }
  static Activation tanh() { return {ActivationKind::Tanh, 0.0}; }

  double value(double t) const {
    switch (kind) {
    case ActivationKind::Identity: return t;
    case ActivationKind::ReLU: return t > 0 ? t : 0.0;
    case ActivationKind::LeakyReLU: return t > 0 ? t : slope * t;
    case ActivationKind::Tanh: return std::tanh(t);
    }
    return t;
  }
  // derivative; the kink of (leaky) ReLU takes the left derivative
  double derivative(double t) const {
    switch (kind) {
    case ActivationKind::Identity: return 1.0;
    case ActivationKind::ReLU: return t > 0 ? 1.0 : 0.0;
    case ActivationKind::LeakyReLU: return t > 0 ? 1.0 : slope;
    case ActivationKind::Tanh: {
      const double th = std::tanh(t);
      return 1.0 - th * th;
    }
    }
    return 1.0;
  }
  bool has_kink() const {
    return kind == ActivationKind::ReLU || kind == ActivationKind::LeakyReLU;
  }
};

enum class LayerKind { Dense, Convolution };

struct Layer {
  LayerKind kind = LayerKind::Dense;
  Matrix weight;   // dense: d_out × d_in
  Vector kernel;   // convolution: taps, d_in = d_out = n
  Index conv_dim = 0;
  Vector bias;     // d_out
  Activation activation;

  static Layer dense(Matrix w, Vector b, Activation act) {
    if (w.rows() != b.size()) throw DimensionError("Layer::dense bias", w.rows(), b.size());
    Layer l;
    l.kind = LayerKind::Dense;
    l.weight = std::move(w);
    l.bias = std::move(b);
    l.activation = act;
    return l;
  }
  /// Periodic convolution layer on R^n storing only the kernel taps.
  static Layer convolution(Vector taps, Index n, Vector b, Activation act) {
    if (taps.size() == 0 || taps.size() > n)
      throw ConfigError("Layer::convolution: taps must number between 1 and n");
    if (b.size() != n) throw DimensionError("Layer::convolution bias", n, b.size());
    Layer l;
    l.kind = LayerKind::Convolution;
    l.kernel = std::move(taps);
    l.conv_dim = n;
    l.bias = std::move(b);
    l.activation = act;
    return l;
  }

  Index in_dim() const { return kind == LayerKind::Dense ? weight.cols() : conv_dim; }
  Index out_dim() const { return kind == LayerKind::Dense ? weight.rows() : conv_dim; }
  Index weight_count() const {
    return kind == LayerKind::Dense ? weight.size() : kernel.size();
  }
  Index param_count() const { return weight_count() + bias.size(); }

  Vector linear(const Vector& x) const {
    if (kind == LayerKind::Dense) return weight * x + bias;
    return detail::convolve(kernel, conv_dim, x) + bias;
  }
  Vector linear_adjoint(const Vector& g) const {
    if (kind == LayerKind::Dense) return weight.transpose() * g;
    return detail::correlate(kernel, conv_dim, g);
  }
};

struct ForwardCache {
  std::vector<Vector> inputs;          // input of each layer
  std::vector<Vector> pre_activations; // W a + b of each layer
  std::uint64_t fingerprint = 0;
};

struct ForwardResult {
  Vector output;
  ForwardCache cache;
};

struct BackwardResult {
  Vector grad_params;
  Vector grad_input;
};

class FeedforwardNet {
public:
  FeedforwardNet() = default;
  explicit FeedforwardNet(std::vector<Layer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ConfigError("FeedforwardNet: no layers");
    for (std::size_t l = 1; l < layers_.size(); ++l)
      if (layers_[l].in_dim() != layers_[l - 1].out_dim())
        throw DimensionError("FeedforwardNet: layer chain", layers_[l - 1].out_dim(),
                             layers_[l].in_dim());
  }

  Index in_dim() const { return layers_.front().in_dim(); }
  Index out_dim() const { return layers_.back().out_dim(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  Index param_count() const {
    Index c = 0;
    for (const auto& l : layers_) c += l.param_count();
    return c;
  }

  Vector params() const {
    Vector theta(param_count());
    Index o = 0;
    for (const auto& l : layers_) {
      if (l.kind == LayerKind::Dense) {
        for (Index i = 0; i < l.weight.rows(); ++i)
          for (Index j = 0; j < l.weight.cols(); ++j) theta[o++] = l.weight(i, j);
      } else {
        theta.segment(o, l.kernel.size()) = l.kernel;
        o += l.kernel.size();
      }
      theta.segment(o, l.bias.size()) = l.bias;
      o += l.bias.size();
    }
    return theta;
  }

  void set_params(const Vector& theta) {
    require_dim("FeedforwardNet::set_params", param_count(), theta.size());
    Index o = 0;
    for (auto& l : layers_) {
      if (l.kind == LayerKind::Dense) {
        for (Index i = 0; i < l.weight.rows(); ++i)
          for (Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = theta[o++];
      } else {
        l.kernel = theta.segment(o, l.kernel.size());
        o += l.kernel.size();
      }
      l.bias = theta.segment(o, l.bias.size());
      o += l.bias.size();
    }
  }

  /// FNV-1a over layer shapes and parameter bits; identifies the state a
  /// forward cache was produced with.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](std::uint64_t v) {
      for (int b = 0; b < 8; ++b) {
        h ^= (v >> (8 * b)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& l : layers_) {
      mix(static_cast<std::uint64_t>(l.kind));
      mix(static_cast<std::uint64_t>(l.in_dim()));
      mix(static_cast<std::uint64_t>(l.out_dim()));
      mix(static_cast<std::uint64_t>(l.activation.kind));
    }
    const Vector theta = params();
    for (Index i = 0; i < theta.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &theta[i], sizeof bits);
      mix(bits);
    }
    return h;
  }

  Vector operator()(const Vector& x) const {
    require_dim("net_forward", in_dim(), x.size());
    Vector a = x;
    for (const auto& l : layers_) {
      Vector z = l.linear(a);
      for (Index i = 0; i < z.size(); ++i) z[i] = l.activation.value(z[i]);
      a = std::move(z);
    }
    return a;
  }

private:
  std::vector<Layer> layers_;
};

inline ForwardResult net_forward(const FeedforwardNet& net, const Vector& x) {
  require_dim("net_forward", net.in_dim(), x.size());
  ForwardResult r;
  r.cache.fingerprint = net.fingerprint();
  Vector a = x;
  for (const auto& l : net.layers()) {
    r.cache.inputs.push_back(a);
    Vector z = l.linear(a);
    r.cache.pre_activations.push_back(z);
    for (Index i = 0; i < z.size(); ++i) z[i] = l.activation.value(z[i]);
    a = std::move(z);
  }
  r.output = std::move(a);
  return r;
}

/// Reverse-mode gradients of ⟨grad_output, net(x)⟩ w.r.t. θ and x.
inline BackwardResult net_backward(const FeedforwardNet& net, const ForwardCache& cache,
                                   const Vector& grad_output) {
  if (cache.inputs.size() != net.layers().size() || cache.fingerprint != net.fingerprint())
    throw ConfigError("net_backward: stale or foreign forward cache");
  require_dim("net_backward", net.out_dim(), grad_output.size());
  BackwardResult res;
  res.grad_params.resize(net.param_count());
  // parameter offsets per layer
  std::vector<Index> offset(net.layers().size());
  Index o = 0;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    offset[l] = o;
    o += net.layers()[l].param_count();
  }
  Vector g = grad_output;
  for (std::size_t k = net.layers().size(); k-- > 0;) {
    const Layer& l = net.layers()[k];
    const Vector& z = cache.pre_activations[k];
    const Vector& a = cache.inputs[k];
    for (Index i = 0; i < g.size(); ++i) g[i] *= l.activation.derivative(z[i]);
    Index p = offset[k];
    if (l.kind == LayerKind::Dense) {
      for (Index i = 0; i < l.weight.rows(); ++i)
        for (Index j = 0; j < l.weight.cols(); ++j) res.grad_params[p++] = g[i] * a[j];
    } else {
      const Index n = l.conv_dim;
      for (Index j = 0; j < l.kernel.size(); ++j) {
        double s = 0.0;
        for (Index i = 0; i < n; ++i) s += g[i] * a[(i - j + n) % n];
        res.grad_params[p++] = s;
      }
    }
    res.grad_params.segment(p, l.bias.size()) = g;
    g = l.linear_adjoint(g);
  }
  res.grad_input = std::move(g);
  return res;
}

/// x + N(x).
inline Vector residual_forward(const FeedforwardNet& net, const Vector& x) {
  if (net.in_dim() != net.out_dim())
    throw DimensionError("residual_forward: net must map R^n to R^n", net.in_dim(),
                         net.out_dim());
  return x + net(x);
}

/// Φ = Id + P_ker(A) ∘ N.
struct NullSpaceNet {
  FeedforwardNet base;
  ProjectionHandle projection;

  NullSpaceNet(FeedforwardNet n, ProjectionHandle p)
      : base(std::move(n)), projection(std::move(p)) {
    if (base.in_dim() != base.out_dim() || base.in_dim() != projection.dim())
      throw DimensionError("NullSpaceNet: net and projection dimensions",
                           projection.dim(), base.in_dim());
  }

  Vector operator()(const Vector& x) const { return x + projection.apply(base(x)); }
};

inline Vector nullspace_forward(const NullSpaceNet& net, const Vector& x) {
  require_dim("nullspace_forward", net.projection.dim(), x.size());
  return net(x);
}

/// ‖W‖₂ of one layer. Convolutions use the exact DFT symbol of the kernel.
inline double layer_spectral_norm(const Layer& l) {
  if (l.kind == LayerKind::Dense) {
    Eigen::JacobiSVD<Matrix> s(l.weight);
    return s.singularValues().size() > 0 ? s.singularValues()[0] : 0.0;
  }
  const Index n = l.conv_dim;
  double best = 0.0;
  for (Index k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (Index j = 0; j < l.kernel.size(); ++j)
      acc += l.kernel[j] * std::polar(1.0, -2.0 * 3.14159265358979323846 *
                                                static_cast<double>(j * k) /
                                                static_cast<double>(n));
    best = std::max(best, std::abs(acc));
  }
  return best;
}

/// Product of layer spectral norms; a certified Lipschitz bound of N when
/// all activations are 1-Lipschitz.
inline double lipschitz_upper_bound(const FeedforwardNet& net) {
  double bound = 1.0;
  for (const auto& l : net.layers()) {
    if (l.activation.kind == ActivationKind::LeakyReLU && std::abs(l.activation.slope) > 1.0)
      throw ConfigError("lipschitz_upper_bound: LeakyReLU slope exceeds 1");
    bound *= layer_spectral_norm(l);
  }
  return bound;
}

/// 1 + Lip(N) bounds Φ = Id + P N because ‖P‖ ≤ 1.
inline double lipschitz_upper_bound(const NullSpaceNet& net) {
  return 1.0 + lipschitz_upper_bound(net.base);
}

/// Glorot-uniform weights in [−a, a], a = sqrt(6/(d_in + d_out)); zero biases.
inline FeedforwardNet init_params(const std::vector<Index>& layer_dims,
                                  const std::vector<Activation>& activations,
                                  std::uint64_t seed) {
  if (layer_dims.size() < 2) throw ConfigError("init_params: need at least two dims");
  if (activations.size() != layer_dims.size() - 1)
    throw ConfigError("init_params: one activation per layer required");
  for (Index d : layer_dims)
    if (d <= 0) throw ConfigError("init_params: dims must be positive");
  Rng rng(seed);
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const Index din = layer_dims[l], dout = layer_dims[l + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(din + dout));
    Matrix w(dout, din);
    for (Index i = 0; i < dout; ++i)
      for (Index j = 0; j < din; ++j) w(i, j) = rng.uniform(-a, a);
    layers.push_back(Layer::dense(std::move(w), Vector::Zero(dout), activations[l]));
  }
  return FeedforwardNet(std::move(layers));
}

/// A net that is identically zero (all parameters zero), n → n.
inline FeedforwardNet zero_net(Index n, Index hidden = 0) {
  std::vector<Layer> layers;
  if (hidden > 0) {
    layers.push_back(Layer::dense(Matrix::Zero(hidden, n), Vector::Zero(hidden), Activation::tanh()));
    layers.push_back(Layer::dense(Matrix::Zero(n, hidden), Vector::Zero(n), Activation::identity()));
  } else {
    layers.push_back(Layer::dense(Matrix::Zero(n, n), Vector::Zero(n), Activation::identity()));
  }
  return FeedforwardNet(std::move(layers));
}

/// Single linear layer x ↦ W x + b.
inline FeedforwardNet linear_net(Matrix w, Vector b) {
  return FeedforwardNet({Layer::dense(std::move(w), std::move(b), Activation::identity())});
}

} // namespace ipreg
