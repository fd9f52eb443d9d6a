#pragma once

// Batch experiment harness: problem fixtures, phantoms, noise, config
// parsing and the studies behind the CLI subcommands. Every study returns
// its files in memory; the CLI writes them out.

#include "ipreg/filters.hpp"
#include "ipreg/geometry.hpp"
#include "ipreg/io.hpp"
#include "ipreg/training.hpp"
#include "ipreg/unrolled.hpp"
#include "ipreg/variational.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace ipreg::harness {

// ---------------------------------------------------------------------------
// Signals and noise
// ---------------------------------------------------------------------------

enum class PhantomKind { PiecewiseConstant, Constant };

/// Piecewise-constant signals with 1 to 5 jumps and levels in [−1, 1], or
/// constant vectors c·1 with c ∈ [−1, 1].
inline std::vector<Vector> generate_phantoms(PhantomKind kind, int count, Index dim,
                                             std::uint64_t seed) {
  if (count <= 0 || dim <= 0) throw ConfigError("generate_phantoms: count and dim must be positive");
  Rng rng(seed);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    if (kind == PhantomKind::Constant) {
      out.push_back(Vector::Constant(dim, rng.uniform(-1.0, 1.0)));
      continue;
    }
    const Index jumps = std::min<Index>(1 + rng.index(5), std::max<Index>(dim - 1, 0));
    std::vector<Index> cuts;
    while (static_cast<Index>(cuts.size()) < jumps) {
      const Index c = 1 + rng.index(dim - 1);
      if (std::find(cuts.begin(), cuts.end(), c) == cuts.end()) cuts.push_back(c);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.push_back(dim);
    Vector x(dim);
    Index start = 0;
    for (Index c : cuts) {
      const double level = rng.uniform(-1.0, 1.0);
      x.segment(start, c - start).setConstant(level);
      start = c;
    }
    out.push_back(std::move(x));
  }
  return out;
}

/// y + ξ with ξ a seeded Gaussian direction rescaled to ‖ξ‖ = δ.
inline Vector add_noise(const Vector& y, double delta, std::uint64_t seed) {
  if (!(delta >= 0)) throw DomainError("add_noise: delta must be non-negative");
  if (delta == 0.0) return y;
  Rng rng(seed);
  return y + delta * rng.unit_vector(y.size());
}

// ---------------------------------------------------------------------------
// Operator and regularizer fixtures
// ---------------------------------------------------------------------------

/// Box blur of the given width (taps 1/width).
inline Operator box_deconvolution(Index n, Index width) {
  if (width < 1 || width > n) throw ConfigError("deconvolution: kernel width must lie in [1, n]");
  return Operator::circular_convolution(Vector::Constant(width, 1.0 / static_cast<double>(width)), n);
}

/// Seeded sorted subset of round(fraction·n) indices (at least one).
inline std::vector<Index> random_mask(Index n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw ConfigError("mask_fraction must lie in (0, 1]");
  const Index m = std::max<Index>(1, static_cast<Index>(std::llround(fraction * static_cast<double>(n))));
  std::vector<Index> all(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (Index i = n; i > 1; --i) std::swap(all[static_cast<std::size_t>(i - 1)], all[static_cast<std::size_t>(rng.index(i))]);
  std::vector<Index> pick(all.begin(), all.begin() + m);
  std::sort(pick.begin(), pick.end());
  return pick;
}

/// Orthonormal DCT-II matrix.
inline Matrix dct_matrix(Index n) {
  Matrix c(n, n);
  const double pi = 3.14159265358979323846;
  for (Index k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (Index j = 0; j < n; ++j) c(k, j) = s * std::cos(pi * (j + 0.5) * k / n);
  }
  return c;
}

/// Lower bidiagonal forward differences (x_0, x_1 − x_0, ...), invertible.
inline Matrix difference_matrix(Index n) {
  Matrix w = Matrix::Identity(n, n);
  for (Index i = 1; i < n; ++i) w(i, i - 1) = -1.0;
  return w;
}

/// R(x) = Σ m(W x) with linear encoder W and decoder W⁻¹ (so the β term
/// vanishes). W is the difference matrix or the identity.
inline LearnedRegularizer fixture_regularizer(Index n, const std::string& encoder, double beta,
                                              double p, double epsilon) {
  Matrix w;
  if (encoder == "difference") w = difference_matrix(n);
  else if (encoder == "identity") w = Matrix::Identity(n, n);
  else throw ConfigError("nett.encoder must be difference or identity");
  Matrix winv = w.lu().solve(Matrix::Identity(n, n));
  return LearnedRegularizer(linear_net(w, Vector::Zero(n)), linear_net(winv, Vector::Zero(n)),
                            beta, Vector::Ones(n), p, epsilon);
}

/// Global Lipschitz constant of a fixture regularizer: ‖W‖₂·‖w‖₂ (|m′| ≤ 1
/// for p = 1), valid when the decoder inverts the encoder exactly.
inline double fixture_lipschitz(const LearnedRegularizer& reg) {
  return layer_spectral_norm(reg.encoder.layers().front()) * reg.weights.norm();
}

/// n → hidden (tanh) → n, last layer scaled to Lipschitz bound `lip`.
inline FeedforwardNet contraction_denoiser(Index n, Index hidden, double lip, std::uint64_t seed) {
  FeedforwardNet net = hidden > 0
      ? init_params({n, hidden, n}, {Activation::tanh(), Activation::identity()}, seed)
      : init_params({n, n}, {Activation::identity()}, seed);
  const double bound = lipschitz_upper_bound(net);
  std::vector<Layer> layers = net.layers();
  if (bound > 0) layers.back().weight *= lip / bound;
  return FeedforwardNet(std::move(layers));
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ProblemSpec {
  std::string kind = "deconvolution"; // deconvolution | sparse_sampling | dense_random
  Index n = 32;
  Index kernel_width = 4;
  double mask_fraction = 0.5;
  Index m = 16;
};

struct RuleSpec {
  std::string kind = "power"; // power: α = c·δ^γ ; proportional: α = c·δ
  double c = 1.0;
  double gamma = 2.0 / 3.0;

  double alpha(double delta) const {
    if (kind == "proportional") return c * delta;
    return apriori_choice(ParameterRule(c, gamma), delta);
  }
};

struct TrainingSpec {
  int count = 200;
  Index hidden = 32;
  TrainConfig train;
  std::string net_file;
};

struct NettSpec {
  std::string encoder = "difference";
  double beta = 1.0;
  double p = 1.0;
  double epsilon = 0.1;
  SimilarityKind similarity = SimilarityKind::SquaredNorm;
  DomainConstraint domain = DomainConstraint::None;
  double tol = 1e-8;
  int max_iter = 200000;
  int oracle_starts = 8;
};

struct UnrolledSpec {
  int blocks = 20;
  double alpha = 1.0;
  double c = 0.0;
  Index hidden = 16;
  double lipschitz = 0.5;
  double cg_tol = 1e-10;
  double stop_tol = 0.0;
  double eta = 0.1;
  double varnet_a = 1.0;
  double varnet_b = 0.1;
  std::string net_file;
};

struct SynthesisSpec {
  std::optional<double> alpha;
  double p = 1.0;
  double weight = 1.0;
  double tol = 1e-8;
  int max_iter = 100000;
};

struct ExperimentConfig {
  ProblemSpec problem;
  PhantomKind signals = PhantomKind::PiecewiseConstant;
  int signal_count = 20;
  std::vector<double> deltas{1e-1, 1e-2, 1e-3, 1e-4};
  RuleSpec rule;
  std::string method = "filter"; // filter | nullspace | nett | modl | indie | cascade | varnet
  FilterKind filter = FilterKind::Tikhonov;
  double landweber_step = 0.0;   // ≤ 0: 1/‖A‖²
  TrainingSpec training;
  NettSpec nett;
  UnrolledSpec unrolled;
  SynthesisSpec synthesis;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  bool plots = false;
  std::string hash;

  static ExperimentConfig from_text(const io::ConfigText& cfg,
                                    std::optional<std::uint64_t> seed_override = std::nullopt);
  static ExperimentConfig defaults() { return from_text(io::ConfigText{}); }
};

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "run.seed",
      "problem.kind", "problem.n", "problem.kernel_width", "problem.mask_fraction", "problem.m",
      "signals.kind", "signals.count",
      "noise.deltas",
      "rule.kind", "rule.c", "rule.gamma",
      "method.kind", "method.filter", "method.landweber_step",
      "training.count", "training.hidden", "training.epochs", "training.learning_rate",
      "training.momentum", "training.weight_decay", "training.batch", "training.net_file",
      "nett.encoder", "nett.beta", "nett.p", "nett.epsilon", "nett.similarity", "nett.domain",
      "nett.tol", "nett.max_iter", "nett.oracle_starts",
      "unrolled.blocks", "unrolled.alpha", "unrolled.c", "unrolled.hidden", "unrolled.lipschitz",
      "unrolled.cg_tol", "unrolled.stop_tol", "unrolled.eta", "unrolled.varnet_a",
      "unrolled.varnet_b", "unrolled.net_file",
      "synthesis.alpha", "synthesis.p", "synthesis.weight", "synthesis.tol", "synthesis.max_iter",
      "output.dir", "output.plots"};
  return keys;
}

namespace detail {
inline void one_of(const std::string& key, const std::string& v,
                   std::initializer_list<const char*> options) {
  for (const char* o : options)
    if (v == o) return;
  std::string msg = "config: " + key + " must be one of";
  for (const char* o : options) msg += std::string(" ") + o;
  throw ConfigError(msg);
}
inline void positive(const std::string& key, double v) {
  if (!(v > 0)) throw ConfigError("config: " + key + " must be positive");
}
} // namespace detail

inline ExperimentConfig ExperimentConfig::from_text(const io::ConfigText& cfg,
                                                    std::optional<std::uint64_t> seed_override) {
  cfg.reject_unknown(config_keys());
  ExperimentConfig e;
  const long long seed = cfg.get_int("run.seed", 0);
  if (seed < 0) throw ConfigError("config: run.seed must be non-negative");
  e.seed = seed_override ? *seed_override : static_cast<std::uint64_t>(seed);

  auto& pb = e.problem;
  pb.kind = cfg.get_string("problem.kind", pb.kind);
  detail::one_of("problem.kind", pb.kind, {"deconvolution", "sparse_sampling", "dense_random"});
  pb.n = cfg.get_int("problem.n", pb.n);
  pb.kernel_width = cfg.get_int("problem.kernel_width", pb.kernel_width);
  pb.mask_fraction = cfg.get_double("problem.mask_fraction", pb.mask_fraction);
  pb.m = cfg.get_int("problem.m", pb.m);
  if (pb.n < 2 || pb.n > 4096) throw ConfigError("config: problem.n must lie in [2, 4096]");
  if (pb.kernel_width < 1 || pb.kernel_width > pb.n)
    throw ConfigError("config: problem.kernel_width must lie in [1, n]");
  if (!(pb.mask_fraction > 0 && pb.mask_fraction <= 1))
    throw ConfigError("config: problem.mask_fraction must lie in (0, 1]");
  if (pb.m < 1 || pb.m > 4096) throw ConfigError("config: problem.m must lie in [1, 4096]");

  const std::string sk = cfg.get_string("signals.kind", "piecewise_constant");
  detail::one_of("signals.kind", sk, {"piecewise_constant", "constant"});
  e.signals = sk == "constant" ? PhantomKind::Constant : PhantomKind::PiecewiseConstant;
  e.signal_count = static_cast<int>(cfg.get_int("signals.count", e.signal_count));
  if (e.signal_count < 1) throw ConfigError("config: signals.count must be positive");

  e.deltas = cfg.get_list("noise.deltas", e.deltas);
  for (double d : e.deltas) detail::positive("noise.deltas", d);

  e.rule.kind = cfg.get_string("rule.kind", e.rule.kind);
  detail::one_of("rule.kind", e.rule.kind, {"power", "proportional"});
  e.rule.c = cfg.get_double("rule.c", e.rule.c);
  e.rule.gamma = cfg.get_double("rule.gamma", e.rule.gamma);
  detail::positive("rule.c", e.rule.c);
  if (e.rule.kind == "power") ParameterRule(e.rule.c, e.rule.gamma);

  e.method = cfg.get_string("method.kind", e.method);
  detail::one_of("method.kind", e.method,
                 {"filter", "nullspace", "nett", "modl", "indie", "cascade", "varnet"});
  const std::string fk = cfg.get_string("method.filter", "tikhonov");
  detail::one_of("method.filter", fk, {"tikhonov", "tsvd", "landweber"});
  e.filter = fk == "tsvd" ? FilterKind::TruncatedSvd
             : fk == "landweber" ? FilterKind::Landweber : FilterKind::Tikhonov;
  e.landweber_step = cfg.get_double("method.landweber_step", 0.0);

  auto& tr = e.training;
  tr.count = static_cast<int>(cfg.get_int("training.count", tr.count));
  tr.hidden = cfg.get_int("training.hidden", tr.hidden);
  tr.train.epochs = static_cast<int>(cfg.get_int("training.epochs", tr.train.epochs));
  tr.train.learning_rate = cfg.get_double("training.learning_rate", tr.train.learning_rate);
  tr.train.momentum = cfg.get_double("training.momentum", tr.train.momentum);
  tr.train.weight_decay = cfg.get_double("training.weight_decay", tr.train.weight_decay);
  tr.train.batch = static_cast<int>(cfg.get_int("training.batch", tr.train.batch));
  tr.train.seed = mix_seed(e.seed, 6);
  tr.net_file = cfg.get_string("training.net_file", "");
  if (tr.count < 1) throw ConfigError("config: training.count must be positive");
  if (tr.hidden < 0) throw ConfigError("config: training.hidden must be non-negative");
  tr.train.validate();

  auto& nt = e.nett;
  nt.encoder = cfg.get_string("nett.encoder", nt.encoder);
  detail::one_of("nett.encoder", nt.encoder, {"difference", "identity"});
  nt.beta = cfg.get_double("nett.beta", nt.beta);
  nt.p = cfg.get_double("nett.p", nt.p);
  nt.epsilon = cfg.get_double("nett.epsilon", nt.epsilon);
  const std::string sim = cfg.get_string("nett.similarity", "squared");
  detail::one_of("nett.similarity", sim, {"squared", "kl"});
  nt.similarity = sim == "kl" ? SimilarityKind::KullbackLeibler : SimilarityKind::SquaredNorm;
  const std::string dom = cfg.get_string("nett.domain", "none");
  detail::one_of("nett.domain", dom, {"none", "nonnegative"});
  nt.domain = dom == "nonnegative" ? DomainConstraint::NonnegativeOrthant : DomainConstraint::None;
  nt.tol = cfg.get_double("nett.tol", nt.tol);
  nt.max_iter = static_cast<int>(cfg.get_int("nett.max_iter", nt.max_iter));
  nt.oracle_starts = static_cast<int>(cfg.get_int("nett.oracle_starts", nt.oracle_starts));
  if (!(nt.beta >= 0)) throw ConfigError("config: nett.beta must be non-negative");
  if (!(nt.p >= 1 && nt.p <= 2)) throw ConfigError("config: nett.p must lie in [1, 2]");
  if (!(nt.epsilon >= 0)) throw ConfigError("config: nett.epsilon must be non-negative");
  detail::positive("nett.tol", nt.tol);
  if (nt.max_iter < 1 || nt.oracle_starts < 1)
    throw ConfigError("config: nett.max_iter and nett.oracle_starts must be positive");

  auto& ur = e.unrolled;
  ur.blocks = static_cast<int>(cfg.get_int("unrolled.blocks", ur.blocks));
  ur.alpha = cfg.get_double("unrolled.alpha", ur.alpha);
  ur.c = cfg.get_double("unrolled.c", ur.c);
  ur.hidden = cfg.get_int("unrolled.hidden", ur.hidden);
  ur.lipschitz = cfg.get_double("unrolled.lipschitz", ur.lipschitz);
  ur.cg_tol = cfg.get_double("unrolled.cg_tol", ur.cg_tol);
  ur.stop_tol = cfg.get_double("unrolled.stop_tol", ur.stop_tol);
  ur.eta = cfg.get_double("unrolled.eta", ur.eta);
  ur.varnet_a = cfg.get_double("unrolled.varnet_a", ur.varnet_a);
  ur.varnet_b = cfg.get_double("unrolled.varnet_b", ur.varnet_b);
  ur.net_file = cfg.get_string("unrolled.net_file", "");
  if (ur.blocks < 0) throw ConfigError("config: unrolled.blocks must be non-negative");
  if (!(ur.alpha >= 0)) throw ConfigError("config: unrolled.alpha must be non-negative");
  if (ur.hidden < 0) throw ConfigError("config: unrolled.hidden must be non-negative");
  if (!(ur.lipschitz >= 0)) throw ConfigError("config: unrolled.lipschitz must be non-negative");
  detail::positive("unrolled.cg_tol", ur.cg_tol);
  if (!(ur.stop_tol >= 0)) throw ConfigError("config: unrolled.stop_tol must be non-negative");
  detail::positive("unrolled.eta", ur.eta);
  detail::positive("unrolled.varnet_b", ur.varnet_b);

  auto& sy = e.synthesis;
  if (cfg.has("synthesis.alpha")) {
    sy.alpha = cfg.get_double("synthesis.alpha", 0.0);
    if (!(*sy.alpha >= 0)) throw ConfigError("config: synthesis.alpha must be non-negative");
  }
  sy.p = cfg.get_double("synthesis.p", sy.p);
  sy.weight = cfg.get_double("synthesis.weight", sy.weight);
  sy.tol = cfg.get_double("synthesis.tol", sy.tol);
  sy.max_iter = static_cast<int>(cfg.get_int("synthesis.max_iter", sy.max_iter));
  if (!(sy.p >= 1 && sy.p <= 2)) throw ConfigError("config: synthesis.p must lie in [1, 2]");
  detail::positive("synthesis.weight", sy.weight);
  detail::positive("synthesis.tol", sy.tol);
  if (sy.max_iter < 1) throw ConfigError("config: synthesis.max_iter must be positive");

  e.out_dir = cfg.get_string("output.dir", e.out_dir);
  e.plots = cfg.get_bool("output.plots", false);

  // Output location does not change results, so it stays out of the hash.
  std::string canon;
  for (const auto& [k, v] : cfg.values())
    if (k.rfind("output.", 0) != 0 && k != "run.seed") canon += k + "=" + v + "\n";
  canon += "run.seed=" + std::to_string(e.seed) + "\n";
  e.hash = io::hex64(io::fnv1a(canon));
  return e;
}

/// Seed streams derived from the run seed.
enum SeedTag : std::uint64_t {
  kSeedOperator = 1,
  kSeedSignals = 2,
  kSeedNoise = 3,
  kSeedTrainingSignals = 4,
  kSeedNetInit = 5,
  kSeedTrainingNoise = 7,
  kSeedDenoiser = 8,
  kSeedOracle = 9,
  kSeedProbe = 10,
};

inline std::uint64_t seed_for(const ExperimentConfig& e, SeedTag tag, std::uint64_t index = 0) {
  return mix_seed(mix_seed(e.seed, tag), index);
}

/// Noise seed for cell (δ index, signal index).
inline std::uint64_t noise_seed(const ExperimentConfig& e, std::size_t d, std::size_t i) {
  return seed_for(e, kSeedNoise, static_cast<std::uint64_t>(d) * 1000003ULL + i);
}

inline Operator build_operator(const ExperimentConfig& e) {
  const auto& pb = e.problem;
  if (pb.kind == "deconvolution") return box_deconvolution(pb.n, pb.kernel_width);
  if (pb.kind == "sparse_sampling")
    return Operator::masked_sampling(random_mask(pb.n, pb.mask_fraction, seed_for(e, kSeedOperator)),
                                     pb.n);
  Rng rng(seed_for(e, kSeedOperator));
  return Operator::dense(rng.normal_matrix(pb.m, pb.n) / std::sqrt(static_cast<double>(pb.m)));
}

inline CascadeConfig build_cascade(const ExperimentConfig& e) {
  return CascadeConfig{Operator::dense(dct_matrix(e.problem.n)),
                       random_mask(e.problem.n, e.problem.mask_fraction, seed_for(e, kSeedOperator)),
                       e.unrolled.alpha};
}

inline std::vector<Vector> study_signals(const ExperimentConfig& e) {
  return generate_phantoms(e.signals, e.signal_count, e.problem.n, seed_for(e, kSeedSignals));
}

inline FilterSpec filter_spec(const ExperimentConfig& e, const SvdFactorization& f) {
  if (e.filter == FilterKind::TruncatedSvd) return FilterSpec::truncated_svd();
  if (e.filter == FilterKind::Tikhonov) return FilterSpec::tikhonov();
  const double smax = f.s_max();
  const double tau = e.landweber_step > 0 ? e.landweber_step : 1.0 / std::max(smax * smax, 1e-300);
  if (tau * smax * smax > 2.0) throw ConfigError("config: method.landweber_step exceeds 2/‖A‖²");
  return FilterSpec::landweber(tau);
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

struct StudyOutput {
  std::vector<std::pair<std::string, std::string>> files; // name, content
  std::vector<std::string> summary;                      // printed lines
};

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("loglog_slope: need two points");
  double mx = 0, my = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0 && y[i] > 0)) throw DomainError("loglog_slope: values must be positive");
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

/// Log–log scatter plot with a fitted line and its slope.
inline std::string svg_loglog(const std::string& title, const std::string& xlabel,
                              const std::string& ylabel, const std::vector<double>& x,
                              const std::vector<double>& y) {
  const double slope = loglog_slope(x, y);
  const double w = 480, h = 360, pad = 60;
  auto lx = [](double v) { return std::log10(v); };
  double x0 = lx(x[0]), x1 = x0, y0 = lx(y[0]), y1 = y0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x0 = std::min(x0, lx(x[i])); x1 = std::max(x1, lx(x[i]));
    y0 = std::min(y0, lx(y[i])); y1 = std::max(y1, lx(y[i]));
  }
  if (x1 - x0 < 1e-12) { x0 -= 0.5; x1 += 0.5; }
  if (y1 - y0 < 1e-12) { y0 -= 0.5; y1 += 0.5; }
  auto px = [&](double v) { return pad + (lx(v) - x0) / (x1 - x0) * (w - 2 * pad); };
  auto py = [&](double v) { return h - pad - (lx(v) - y0) / (y1 - y0) * (h - 2 * pad); };
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << title
    << "</text>\n"
    << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
    << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << w / 2 << "\" y=\"" << h - 20 << "\" text-anchor=\"middle\" font-size=\"12\">log10 "
    << xlabel << "</text>\n"
    << "<text x=\"16\" y=\"" << h / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 " << h / 2
    << ")\" text-anchor=\"middle\">log10 " << ylabel << "</text>\n";
  s << "<polyline fill=\"none\" stroke=\"steelblue\" points=\"";
  for (std::size_t i = 0; i < x.size(); ++i) s << (i ? " " : "") << px(x[i]) << "," << py(y[i]);
  s << "\"/>\n";
  for (std::size_t i = 0; i < x.size(); ++i)
    s << "<circle cx=\"" << px(x[i]) << "\" cy=\"" << py(y[i]) << "\" r=\"3\" fill=\"steelblue\"/>\n";
  s << "<text x=\"" << w - pad << "\" y=\"" << pad - 10 << "\" text-anchor=\"end\" font-size=\"12\">slope "
    << io::fmt_double(slope) << "</text>\n</svg>\n";
  return s.str();
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

/// Adjoint, SVD and power-iteration checks on 20 seeded pairs.
inline StudyOutput adjoint_check(const ExperimentConfig& e) {
  const Operator op = build_operator(e);
  io::CsvWriter trials(e.hash, {"trial", "adjoint_relative_error"});
  Rng rng(seed_for(e, kSeedOperator, 1));
  const SvdFactorization f = svd(op);
  const double smax = f.s_max();
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Vector x = rng.normal_vector(op.in_dim());
    const Vector y = rng.normal_vector(op.out_dim());
    const double lhs = op.apply(x).dot(y), rhs = x.dot(op.adjoint(y));
    const double rel = std::abs(lhs - rhs) / std::max(smax * x.norm() * y.norm(), 1e-300);
    worst = std::max(worst, rel);
    trials.row(t, rel);
  }
  const Matrix a = materialize(op);
  Matrix recon = f.left * f.singular.asDiagonal() * f.right.transpose();
  const double recon_err = (a - recon).cwiseAbs().maxCoeff();
  const double power = operator_norm(op, 1e-10, 1000000, seed_for(e, kSeedOperator, 2));
  io::CsvWriter summary(e.hash, {"rank", "s_max", "s_min", "power_norm", "svd_reconstruction_error",
                                 "max_adjoint_error"});
  summary.row(static_cast<long long>(f.rank()), smax, f.s_min(), power, recon_err, worst);
  StudyOutput out;
  out.files.push_back({"adjoint_trials.csv", trials.str()});
  out.files.push_back({"operator_summary.csv", summary.str()});
  out.summary.push_back("max adjoint error " + io::fmt_double(worst) + ", rank " +
                        std::to_string(f.rank()) + ", s_max " + io::fmt_double(smax));
  if (worst > 1e-10 || recon_err > 1e-10 * std::max(smax, 1.0))
    throw NumericalError("adjoint-check: operator failed the adjoint or SVD test");
  return out;
}

/// Initial null-space net: tanh hidden layer (Glorot) and a zero output
/// layer, so Φ starts as the identity.
inline FeedforwardNet initial_correction_net(Index n, Index hidden, std::uint64_t seed) {
  if (hidden == 0) return zero_net(n);
  FeedforwardNet net = init_params({n, hidden, n}, {Activation::tanh(), Activation::identity()}, seed);
  std::vector<Layer> layers = net.layers();
  layers.back().weight.setZero();
  return FeedforwardNet(std::move(layers));
}

struct NullSpaceTraining {
  NullSpaceNet net;
  LossTrace trace;
};

/// Trains Φ = Id + P N on pairs (x_i, B_α(δ_j)(A x_i + ξ)) with δ_j cycling
/// through the study's noise levels.
inline NullSpaceTraining train_nullspace_net(const ExperimentConfig& e, const Operator& op,
                                             const SvdFactorization& f) {
  const FilterSpec spec = filter_spec(e, f);
  const auto signals = generate_phantoms(e.signals, e.training.count, op.in_dim(),
                                         seed_for(e, kSeedTrainingSignals));
  std::vector<TrainingPair> pairs;
  for (std::size_t i = 0; i < signals.size(); ++i) {
    const double delta = e.deltas[i % e.deltas.size()];
    const Vector y = add_noise(op.apply(signals[i]), delta, seed_for(e, kSeedTrainingNoise, i));
    pairs.push_back({signals[i], reconstruct_filtered(f, spec, e.rule.alpha(delta), y)});
  }
  NullSpaceNet init(initial_correction_net(op.in_dim(), e.training.hidden, seed_for(e, kSeedNetInit)),
                    ProjectionHandle::explicit_svd(f));
  TrainResult r = train(NetKind::NullSpace, init, Dataset(std::move(pairs)), e.training.train);
  return {r.net.as_null_space(), std::move(r.trace)};
}

inline StudyOutput train_nullspace_study(const ExperimentConfig& e) {
  const Operator op = build_operator(e);
  const SvdFactorization f = svd(op);
  NullSpaceTraining t = train_nullspace_net(e, op, f);
  StudyOutput out;
  out.files.push_back({"loss_trace.csv", loss_trace_csv(t.trace, e.hash).str()});
  out.files.push_back({"nullspace_net.bin", io::encode_net(t.net.base)});
  out.summary.push_back("risk " + io::fmt_double(t.trace.front().risk) + " -> " +
                        io::fmt_double(t.trace.back().risk));
  return out;
}

/// Per-(δ, signal) record of a study.
struct RunRecord {
  double delta;
  double alpha;
  int signal;
  double error;
  double baseline_error; // filter-only error (null-space studies), else NaN
  std::uint64_t seed;
};

struct StudyTable {
  std::vector<RunRecord> records;
  std::vector<double> deltas, alphas, mean_error, mean_baseline;
};

inline double study_alpha(const ExperimentConfig& e, double delta) {
  if (e.method == "modl" || e.method == "indie" || e.method == "cascade") return e.unrolled.alpha;
  return e.rule.alpha(delta);
}

/// Runs the configured method for every δ and phantom.
inline StudyTable run_study_table(const ExperimentConfig& e) {
  const auto signals = study_signals(e);
  StudyTable tab;
  const bool cascade = e.method == "cascade";
  const CascadeConfig cas = build_cascade(e);
  const Operator op = cascade ? cas.forward() : build_operator(e);
  std::optional<SvdFactorization> f;
  std::optional<FilterSpec> spec;
  std::optional<NullSpaceNet> ns;
  if (e.method == "filter" || e.method == "nullspace") {
    f = svd(op);
    spec = filter_spec(e, *f);
  }
  if (e.method == "nullspace") {
    if (!e.training.net_file.empty())
      ns.emplace(io::load_net(e.training.net_file), ProjectionHandle::explicit_svd(*f));
    else
      ns.emplace(train_nullspace_net(e, op, *f).net);
  }
  std::optional<LearnedRegularizer> reg;
  if (e.method == "nett")
    reg.emplace(fixture_regularizer(op.in_dim(), e.nett.encoder, e.nett.beta, e.nett.p, e.nett.epsilon));
  UnrolledConfig ucfg;
  if (e.method == "modl" || e.method == "indie" || e.method == "cascade" || e.method == "varnet") {
    ucfg.n_blocks = e.unrolled.blocks;
    ucfg.alpha = e.unrolled.alpha;
    ucfg.c = e.unrolled.c;
    ucfg.cg_tol = e.unrolled.cg_tol;
    ucfg.stop_tol = e.unrolled.stop_tol;
    ucfg.denoisers.push_back(!e.unrolled.net_file.empty()
                                 ? io::load_net(e.unrolled.net_file)
                                 : contraction_denoiser(op.in_dim(), e.unrolled.hidden,
                                                        e.unrolled.lipschitz,
                                                        seed_for(e, kSeedDenoiser)));
    if (cascade) ucfg.cascade = cas;
  }

  for (std::size_t d = 0; d < e.deltas.size(); ++d) {
    const double delta = e.deltas[d];
    const double alpha = study_alpha(e, delta);
    if (e.method == "varnet") {
      VarNetParams vp;
      vp.alpha = 1.0;
      vp.steps = {e.unrolled.eta};
      Vector diff(2);
      diff << 1.0, -1.0;
      vp.cycles.push_back(
          {{{Operator::circular_convolution(diff, op.in_dim()), Potential::log_cosh(alpha * e.unrolled.varnet_a, e.unrolled.varnet_b)}},
           {{Operator::identity(op.out_dim()), Potential::identity()}}});
      ucfg.varnet = vp;
    }
    double sum = 0.0, sum_base = 0.0;
    for (std::size_t i = 0; i < signals.size(); ++i) {
      const std::uint64_t s = noise_seed(e, d, i);
      const Vector y = add_noise(op.apply(signals[i]), delta, s);
      Vector xr;
      double base = std::nan("");
      if (e.method == "filter" || e.method == "nullspace") {
        xr = reconstruct_filtered(*f, *spec, alpha, y);
        if (ns) {
          base = (xr - signals[i]).norm();
          xr = (*ns)(xr);
        }
      } else if (e.method == "nett") {
        TikhonovProblem pb{op, y, alpha, *reg, e.nett.similarity, e.nett.domain};
        SolverConfig sc;
        sc.tol = e.nett.tol;
        sc.max_iter = e.nett.max_iter;
        xr = nett_solve(pb, sc).x;
      } else {
        const UnrolledKind kind = e.method == "modl" ? UnrolledKind::Modl
                                  : e.method == "indie" ? UnrolledKind::Indie
                                  : e.method == "cascade" ? UnrolledKind::Cascade
                                                          : UnrolledKind::VarNet;
        xr = run_unrolled(kind, ucfg, op, y).x;
      }
      const double err = (xr - signals[i]).norm();
      if (!std::isfinite(err)) throw NumericalError("study: non-finite error at delta " + io::fmt_double(delta));
      tab.records.push_back({delta, alpha, static_cast<int>(i), err, base, s});
      sum += err;
      sum_base += base;
    }
    const double cnt = static_cast<double>(signals.size());
    tab.deltas.push_back(delta);
    tab.alphas.push_back(alpha);
    tab.mean_error.push_back(sum / cnt);
    tab.mean_baseline.push_back(sum_base / cnt);
  }
  return tab;
}

inline StudyOutput run_study(const ExperimentConfig& e) {
  const StudyTable tab = run_study_table(e);
  const bool ns = e.method == "nullspace";
  std::vector<std::string> rc{"delta", "alpha", "signal", "error", "seed"};
  if (ns) rc.insert(rc.begin() + 4, "filter_error");
  io::CsvWriter rec(e.hash, rc);
  for (const auto& r : tab.records) {
    if (ns) rec.row(r.delta, r.alpha, r.signal, r.error, r.baseline_error, io::hex64(r.seed));
    else rec.row(r.delta, r.alpha, r.signal, r.error, io::hex64(r.seed));
  }
  std::vector<std::string> sc{"delta", "alpha", "mean_error"};
  if (ns) sc.push_back("filter_mean_error");
  io::CsvWriter sum(e.hash, sc);
  for (std::size_t d = 0; d < tab.deltas.size(); ++d) {
    if (ns) sum.row(tab.deltas[d], tab.alphas[d], tab.mean_error[d], tab.mean_baseline[d]);
    else sum.row(tab.deltas[d], tab.alphas[d], tab.mean_error[d]);
  }
  StudyOutput out;
  out.files.push_back({"records.csv", rec.str()});
  out.files.push_back({"summary.csv", sum.str()});
  for (std::size_t d = 0; d < tab.deltas.size(); ++d)
    out.summary.push_back("delta " + io::fmt_double(tab.deltas[d]) + "  mean error " +
                          io::fmt_double(tab.mean_error[d]) +
                          (ns ? "  filter " + io::fmt_double(tab.mean_baseline[d]) : ""));
  if (e.plots && tab.deltas.size() >= 2)
    out.files.push_back({"error_vs_delta.svg",
                         svg_loglog(e.method + " mean error", "delta", "error", tab.deltas, tab.mean_error)});
  return out;
}

/// One NETT solve on phantom 0 at the first noise level.
inline StudyOutput nett_solve_study(const ExperimentConfig& e) {
  const Operator op = build_operator(e);
  const Vector x = study_signals(e).front();
  const double delta = e.deltas.front();
  Vector y = add_noise(op.apply(x), delta, noise_seed(e, 0, 0));
  if (e.nett.similarity == SimilarityKind::KullbackLeibler) y = y.cwiseMax(0.0);
  const double alpha = e.rule.alpha(delta);
  TikhonovProblem pb{op, y, alpha,
                     fixture_regularizer(op.in_dim(), e.nett.encoder, e.nett.beta, e.nett.p, e.nett.epsilon),
                     e.nett.similarity, e.nett.domain};
  SolverConfig sc;
  sc.tol = e.nett.tol;
  sc.max_iter = e.nett.max_iter;
  const SolverReport rep = nett_solve(pb, sc);
  io::CsvWriter trace(e.hash, {"iteration", "objective", "step"});
  for (std::size_t k = 0; k < rep.objective.size(); ++k)
    trace.row(static_cast<long long>(k), rep.objective[k], k == 0 ? 0.0 : rep.steps[k - 1]);
  io::CsvWriter sol(e.hash, {"index", "truth", "reconstruction"});
  for (Index i = 0; i < x.size(); ++i) sol.row(static_cast<long long>(i), x[i], rep.x[i]);
  StudyOutput out;
  out.files.push_back({"nett_trace.csv", trace.str()});
  out.files.push_back({"nett_solution.csv", sol.str()});
  out.summary.push_back("termination " + to_string(rep.termination) + " after " +
                        std::to_string(rep.iterations) + " iterations, error " +
                        io::fmt_double((rep.x - x).norm()));
  return out;
}

struct RateRow {
  double delta, alpha, bregman, error, reg_gap;
};

struct RateResult {
  std::vector<RateRow> rows; // means over phantoms
  double slope = 0.0;
};

/// NETT with the configured rule: Bregman distance to the R-minimizing
/// solution x† of A x = A x_true, averaged over phantoms.
inline RateResult rate_study_table(const ExperimentConfig& e) {
  const Operator op = build_operator(e);
  const auto signals = study_signals(e);
  const LearnedRegularizer reg =
      fixture_regularizer(op.in_dim(), e.nett.encoder, e.nett.beta, e.nett.p, e.nett.epsilon);
  OracleConfig oc;
  oc.starts = e.nett.oracle_starts;
  oc.seed = seed_for(e, kSeedOracle);
  std::vector<Vector> dagger;
  for (const auto& x : signals) dagger.push_back(r_minimizing_oracle(op, reg, op.apply(x), oc));
  SolverConfig sc;
  sc.tol = e.nett.tol;
  sc.max_iter = e.nett.max_iter;
  RateResult res;
  for (std::size_t d = 0; d < e.deltas.size(); ++d) {
    const double delta = e.deltas[d];
    const double alpha = e.rule.alpha(delta);
    RateRow row{delta, alpha, 0, 0, 0};
    for (std::size_t i = 0; i < signals.size(); ++i) {
      const Vector y = add_noise(op.apply(signals[i]), delta, noise_seed(e, d, i));
      sc.x0 = dagger[i];
      const SolverReport rep = nett_solve({op, y, alpha, reg, e.nett.similarity, e.nett.domain}, sc);
      row.bregman += bregman_distance(reg, rep.x, dagger[i]);
      row.error += (rep.x - dagger[i]).norm();
      row.reg_gap += std::abs(regularizer_value(reg, rep.x) - regularizer_value(reg, dagger[i]));
    }
    const double cnt = static_cast<double>(signals.size());
    row.bregman /= cnt;
    row.error /= cnt;
    row.reg_gap /= cnt;
    res.rows.push_back(row);
  }
  if (res.rows.size() >= 2) {
    std::vector<double> xs, ys;
    for (const auto& r : res.rows) {
      xs.push_back(r.delta);
      ys.push_back(std::max(r.bregman, 1e-300));
    }
    res.slope = loglog_slope(xs, ys);
  }
  return res;
}

inline StudyOutput rate_study(const ExperimentConfig& e) {
  const RateResult r = rate_study_table(e);
  io::CsvWriter w(e.hash, {"delta", "alpha", "mean_bregman", "mean_error_to_dagger", "mean_regularizer_gap"});
  for (const auto& row : r.rows) w.row(row.delta, row.alpha, row.bregman, row.error, row.reg_gap);
  io::CsvWriter s(e.hash, {"quantity", "value"});
  s.row("bregman_loglog_slope", r.slope);
  StudyOutput out;
  out.files.push_back({"rate_study.csv", w.str()});
  out.files.push_back({"rate_slope.csv", s.str()});
  out.summary.push_back("Bregman log-log slope " + io::fmt_double(r.slope));
  if (e.plots && r.rows.size() >= 2) {
    std::vector<double> xs, ys;
    for (const auto& row : r.rows) {
      xs.push_back(row.delta);
      ys.push_back(std::max(row.bregman, 1e-300));
    }
    out.files.push_back({"bregman_vs_delta.svg", svg_loglog("NETT Bregman distance", "delta", "bregman", xs, ys)});
  }
  return out;
}

inline UnrolledKind unrolled_kind(const ExperimentConfig& e) {
  if (e.method == "modl") return UnrolledKind::Modl;
  if (e.method == "indie") return UnrolledKind::Indie;
  if (e.method == "cascade") return UnrolledKind::Cascade;
  if (e.method == "varnet") return UnrolledKind::VarNet;
  throw ConfigError("config: method.kind must be modl, indie, cascade or varnet here");
}

/// One unrolled run on phantom 0 at the first noise level.
inline StudyOutput unrolled_run_study(const ExperimentConfig& e) {
  const UnrolledKind kind = unrolled_kind(e);
  const CascadeConfig cas = build_cascade(e);
  const Operator op = kind == UnrolledKind::Cascade ? cas.forward() : build_operator(e);
  const Vector x = study_signals(e).front();
  const Vector y = add_noise(op.apply(x), e.deltas.front(), noise_seed(e, 0, 0));
  UnrolledConfig cfg;
  cfg.n_blocks = e.unrolled.blocks;
  cfg.alpha = e.unrolled.alpha;
  cfg.c = e.unrolled.c;
  cfg.cg_tol = e.unrolled.cg_tol;
  cfg.stop_tol = e.unrolled.stop_tol;
  cfg.denoisers.push_back(!e.unrolled.net_file.empty()
                              ? io::load_net(e.unrolled.net_file)
                              : contraction_denoiser(op.in_dim(), e.unrolled.hidden, e.unrolled.lipschitz,
                                                     seed_for(e, kSeedDenoiser)));
  if (kind == UnrolledKind::Cascade) cfg.cascade = cas;
  if (kind == UnrolledKind::VarNet) {
    VarNetParams vp;
    vp.steps = {e.unrolled.eta};
    Vector diff(2);
    diff << 1.0, -1.0;
    vp.cycles.push_back({{{Operator::circular_convolution(diff, op.in_dim()),
                           Potential::log_cosh(e.unrolled.varnet_a * e.rule.alpha(e.deltas.front()),
                                               e.unrolled.varnet_b)}},
                         {{Operator::identity(op.out_dim()), Potential::identity()}}});
    cfg.varnet = vp;
  }
  const UnrolledReport rep = run_unrolled(kind, cfg, op, y);
  io::CsvWriter trace(e.hash, {"block", "objective", "cg_relative_residual"});
  for (std::size_t n = 0; n < rep.objective.size(); ++n)
    trace.row(static_cast<long long>(n), rep.objective[n],
              n >= 1 && n - 1 < rep.cg_residuals.size() ? io::fmt_double(rep.cg_residuals[n - 1])
                                                        : std::string());
  io::CsvWriter sol(e.hash, {"index", "truth", "reconstruction"});
  for (Index i = 0; i < x.size(); ++i) sol.row(static_cast<long long>(i), x[i], rep.x[i]);
  StudyOutput out;
  out.files.push_back({"unrolled_trace.csv", trace.str()});
  out.files.push_back({"unrolled_solution.csv", sol.str()});
  out.summary.push_back(to_string(kind) + ": " + std::to_string(rep.blocks) + " blocks, error " +
                        io::fmt_double((rep.x - x).norm()));
  return out;
}

/// End-to-end INDIE training on seeded (x_i, A x_i + ξ_i) pairs.
inline StudyOutput unrolled_train_study(const ExperimentConfig& e) {
  if (unrolled_kind(e) != UnrolledKind::Indie)
    throw ConfigError("config: unrolled-train supports method.kind = indie only");
  const Operator op = build_operator(e);
  const auto signals = generate_phantoms(e.signals, e.training.count, op.in_dim(),
                                         seed_for(e, kSeedTrainingSignals));
  std::vector<TrainingPair> pairs;
  for (std::size_t i = 0; i < signals.size(); ++i)
    pairs.push_back({signals[i], add_noise(op.apply(signals[i]), e.deltas.front(),
                                           seed_for(e, kSeedTrainingNoise, i))});
  UnrolledConfig cfg;
  cfg.n_blocks = e.unrolled.blocks;
  cfg.alpha = e.unrolled.alpha;
  cfg.c = e.unrolled.c;
  cfg.denoisers.push_back(contraction_denoiser(op.in_dim(), e.unrolled.hidden, e.unrolled.lipschitz,
                                               seed_for(e, kSeedDenoiser)));
  const UnrolledTrainResult r = train_unrolled_indie(cfg, op, Dataset(std::move(pairs)), e.training.train);
  StudyOutput out;
  out.files.push_back({"loss_trace.csv", loss_trace_csv(r.trace, e.hash).str()});
  out.files.push_back({"indie_denoiser.bin", io::encode_net(r.denoiser)});
  out.summary.push_back("risk " + io::fmt_double(r.trace.front().risk) + " -> " +
                        io::fmt_double(r.trace.back().risk));
  return out;
}

/// Learned synthesis with decoder W⁻¹ (W the fixture encoder) on phantom 0.
inline StudyOutput synthesis_solve_study(const ExperimentConfig& e) {
  const Operator op = build_operator(e);
  const Vector x = study_signals(e).front();
  const double delta = e.deltas.front();
  const Vector y = add_noise(op.apply(x), delta, noise_seed(e, 0, 0));
  const double alpha = e.synthesis.alpha ? *e.synthesis.alpha : e.rule.alpha(delta);
  const LearnedRegularizer reg = fixture_regularizer(op.in_dim(), e.nett.encoder, 0.0, 1.0, 0.0);
  SolverConfig sc;
  sc.tol = e.synthesis.tol;
  sc.max_iter = e.synthesis.max_iter;
  const SynthesisResult r = synthesis_solve(op, reg.decoder, y, alpha,
                                            Vector::Constant(op.in_dim(), e.synthesis.weight),
                                            e.synthesis.p, sc);
  io::CsvWriter trace(e.hash, {"iteration", "objective", "step"});
  for (std::size_t k = 0; k < r.report.objective.size(); ++k)
    trace.row(static_cast<long long>(k), r.report.objective[k], k == 0 ? 0.0 : r.report.steps[k - 1]);
  io::CsvWriter sol(e.hash, {"index", "truth", "code", "reconstruction"});
  for (Index i = 0; i < x.size(); ++i) sol.row(static_cast<long long>(i), x[i], r.codes[i], r.x_syn[i]);
  StudyOutput out;
  out.files.push_back({"synthesis_trace.csv", trace.str()});
  out.files.push_back({"synthesis_solution.csv", sol.str()});
  Index nnz = 0;
  for (Index i = 0; i < r.codes.size(); ++i) nnz += r.codes[i] != 0.0;
  out.summary.push_back("termination " + to_string(r.report.termination) + ", nonzero codes " +
                        std::to_string(nnz) + ", error " + io::fmt_double((r.x_syn - x).norm()));
  return out;
}

} // namespace ipreg::harness
