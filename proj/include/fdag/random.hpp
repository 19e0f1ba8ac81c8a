#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include "fdag/errors.hpp"

namespace fdag {

using Rng = std::mt19937_64;

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

/// Seed for a named sub-stream (e.g. "simulation", "chain" #3) of a run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                                 std::uint64_t index = 0) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline Rng make_stream(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, stream, index));
}

inline std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng deserialize_rng(const std::string& text) {
  Rng rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw InvalidConfiguration("malformed RNG state");
  return rng;
}

namespace rand {

inline double uniform(Rng& rng) {
  // (0,1): never returns an endpoint, so log(u) is always finite.
  for (;;) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (u > 0.0) return u;
  }
}

inline double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

/// Gamma with shape/rate parameterization.
inline double gamma(Rng& rng, double shape, double rate) {
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

/// Inverse gamma IG(shape, scale): density proportional to x^{-shape-1} exp(-scale/x).
inline double inv_gamma(Rng& rng, double shape, double scale) {
  return scale / std::gamma_distribution<double>(shape, 1.0)(rng);
}

inline double beta(Rng& rng, double a, double b) {
  double x = gamma(rng, a, 1.0);
  double y = gamma(rng, b, 1.0);
  return x / (x + y);
}

inline Eigen::VectorXd dirichlet(Rng& rng, const Eigen::VectorXd& alpha) {
  Eigen::VectorXd g(alpha.size());
  for (Eigen::Index m = 0; m < alpha.size(); ++m) g[m] = gamma(rng, alpha[m], 1.0);
  double s = g.sum();
  if (!(s > 0.0)) {
    // All draws underflowed; fall back on the log-scale construction.
    for (Eigen::Index m = 0; m < alpha.size(); ++m)
      g[m] = std::log(uniform(rng)) / alpha[m] + std::log(gamma(rng, alpha[m] + 1.0, 1.0));
    g = (g.array() - g.maxCoeff()).exp();
    s = g.sum();
  }
  return g / s;
}

inline double laplace(Rng& rng, double scale) {
  if (scale == 0.0) return 0.0;
  double e = -std::log(uniform(rng));
  return (uniform(rng) < 0.5 ? -e : e) * scale;
}

/// Index drawn with probability proportional to exp(log_weights).
inline int categorical_log(Rng& rng, const Eigen::VectorXd& log_weights) {
  double mx = log_weights.maxCoeff();
  Eigen::VectorXd w = (log_weights.array() - mx).exp();
  double u = uniform(rng) * w.sum();
  double acc = 0.0;
  for (Eigen::Index m = 0; m < w.size(); ++m) {
    acc += w[m];
    if (u <= acc) return static_cast<int>(m);
  }
  return static_cast<int>(w.size() - 1);
}

namespace detail {

// Exact rejection sampler for x^{shape-1} e^{-rate x} on [lo, hi] with
// shape >= 1 (log-concave). The envelope is the tangent line of the log
// density at the endpoint closest to the mode.
inline double truncated_gamma_rejection(Rng& rng, double shape, double rate, double lo,
                                        double hi) {
  auto logf = [&](double x) { return (shape - 1.0) * std::log(x) - rate * x; };
  double mode = (shape - 1.0) / rate;
  double x0 = std::clamp(mode, lo, hi);
  double slope = (shape - 1.0) / x0 - rate;
  double f0 = logf(x0);
  for (int tries = 0; tries < 100000; ++tries) {
    double x;
    if (std::abs(slope) * (hi - lo) < 1e-12) {
      x = lo + (hi - lo) * uniform(rng);
    } else {
      // Inverse CDF of exp(slope * (x - x0)) on [lo, hi].
      double u = uniform(rng);
      double a = slope * (lo - x0), b = slope * (hi - x0);
      double top = std::max(a, b), bot = std::min(a, b);
      double t = top - bot > 700.0 ? top + std::log(u + (1.0 - u) * std::exp(bot - top))
                                     : bot + std::log1p(u * std::expm1(top - bot));
      x = x0 + t / slope;
      x = std::clamp(x, lo, hi);
    }
    double log_env = f0 + slope * (x - x0);
    if (std::log(uniform(rng)) <= logf(x) - log_env) return x;
  }
  throw NumericalError("truncated gamma rejection sampler did not terminate");
}

}  // namespace detail

/// Gamma(shape, rate) truncated to [lo, hi]. rate == 0 gives the power law
/// x^{shape-1} on the interval.
inline double truncated_gamma(Rng& rng, double shape, double rate, double lo, double hi) {
  if (!(lo < hi) || !(lo >= 0.0) || !(shape > 0.0) || rate < 0.0)
    throw DomainError("truncated_gamma: invalid arguments");
  if (rate * hi < 1e-300 || rate == 0.0) {
    double u = uniform(rng);
    if (lo == 0.0) return hi * std::pow(u, 1.0 / shape);
    // log x = (1/shape) log(lo^shape + u (hi^shape - lo^shape))
    double r = shape * (std::log(lo) - std::log(hi));
    double inner = std::log(u + (1.0 - u) * std::exp(r));
    return std::exp(std::log(hi) + inner / shape);
  }
  using boost::math::gamma_p;
  using boost::math::gamma_p_inv;
  using boost::math::gamma_q;
  using boost::math::gamma_q_inv;
  double xl = rate * lo, xh = rate * hi;
  try {
    double plo = gamma_p(shape, xl), phi = gamma_p(shape, xh);
    if (phi - plo > 1e-9 && plo < 0.5) {
      double u = plo + (phi - plo) * uniform(rng);
      double x = gamma_p_inv(shape, u) / rate;
      return std::clamp(x, lo, hi);
    }
    double qlo = gamma_q(shape, xl), qhi = gamma_q(shape, xh);
    if (qlo - qhi > 1e-9) {
      double u = qhi + (qlo - qhi) * uniform(rng);
      double x = gamma_q_inv(shape, u) / rate;
      return std::clamp(x, lo, hi);
    }
  } catch (const std::exception&) {
    // fall through to the rejection sampler
  }
  if (shape >= 1.0) return detail::truncated_gamma_rejection(rng, shape, rate, lo, hi);
  throw NumericalError("truncated_gamma: interval carries no representable mass");
}

}  // namespace rand

// Log densities. Variances, not standard deviations, throughout.

inline double log_normal_pdf(double x, double variance) {
  return -0.5 * (kLogTwoPi + std::log(variance) + x * x / variance);
}

inline double log_inv_gamma_pdf(double x, double shape, double scale) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

inline double log_gamma_pdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

inline double log_beta_fn(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

inline double log_beta_pdf(double x, double a, double b) {
  if (!(x > 0.0 && x < 1.0)) return -std::numeric_limits<double>::infinity();
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta_fn(a, b);
}

inline double log_dirichlet_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& alpha) {
  double out = std::lgamma(alpha.sum());
  for (Eigen::Index m = 0; m < x.size(); ++m) {
    if (!(x[m] > 0.0)) return -std::numeric_limits<double>::infinity();
    out += (alpha[m] - 1.0) * std::log(x[m]) - std::lgamma(alpha[m]);
  }
  return out;
}

inline double log_sum_exp(const Eigen::VectorXd& v) {
  double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace fdag
