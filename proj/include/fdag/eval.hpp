#pragma once

// Graph-recovery metrics and the two bivariate identifiability examples.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fdag/dataset.hpp"
#include "fdag/errors.hpp"
#include "fdag/graph.hpp"
#include "fdag/random.hpp"
#include "fdag/splines.hpp"

namespace fdag {

struct ConfusionCounts {
  long tp = 0, tn = 0, fp = 0, fn = 0;
  long total() const { return tp + tn + fp + fn; }
};

struct GraphScore {
  ConfusionCounts counts;
  double tpr = 0.0, fdr = 0.0, mcc = 0.0;
};

/// Counts over ordered pairs (j, l), j != l.
inline ConfusionCounts confusion(const Adjacency& estimated, const Adjacency& truth) {
  detail::check_square_binary(estimated);
  detail::check_square_binary(truth);
  if (estimated.rows() != truth.rows()) throw InvalidConfiguration("graphs have different numbers of nodes");
  ConfusionCounts c;
  for (Eigen::Index j = 0; j < truth.rows(); ++j)
    for (Eigen::Index l = 0; l < truth.cols(); ++l) {
      if (j == l) continue;
      const bool e = estimated(j, l) != 0, t = truth(j, l) != 0;
      if (e && t) ++c.tp;
      else if (e) ++c.fp;
      else if (t) ++c.fn;
      else ++c.tn;
    }
  return c;
}

/// TPR, FDR and MCC. An empty truth gives TPR 1 when the estimate is also
/// empty (0 otherwise); FDR is 0 without positive calls; MCC is 0 when any
/// factor of its denominator vanishes.
inline GraphScore score_graph(const Adjacency& estimated, const Adjacency& truth) {
  GraphScore s;
  s.counts = confusion(estimated, truth);
  const auto& c = s.counts;
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  if (c.tp + c.fn > 0) s.tpr = tp / (tp + fn);
  else s.tpr = c.fp == 0 ? 1.0 : 0.0;
  s.fdr = c.tp + c.fp > 0 ? fp / (tp + fp) : 0.0;
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  s.mcc = denom > 0.0 ? (tp * tn - fp * fn) / std::sqrt(denom) : 0.0;
  return s;
}

inline GraphScore score_graph(const Dag& estimated, const Dag& truth) {
  return score_graph(estimated.adjacency(), truth.adjacency());
}

inline constexpr const char* kMetricsHeader = "seed,p,d,n,TPR,FDR,MCC";

// ------------------------------------------------------------------ example 1

struct Example1Config {
  int n = 1000;
  double slope = 1.0;
  std::array<double, 2> variances{0.5, 1.0};
  std::array<double, 2> weights{0.5, 0.5};
  double observation_variance = 0.1;
};

struct Example1Draw {
  Eigen::VectorXd z1, z2, w1, w2;
  Eigen::VectorXi c1, c2;  // component of each exogenous term
};

inline Example1Draw example1_simulate(const Example1Config& cfg, Rng& rng) {
  if (cfg.n < 1) throw InvalidConfiguration("example 1 needs n >= 1");
  if (cfg.observation_variance < 0.0 || cfg.variances[0] < 0.0 || cfg.variances[1] < 0.0)
    throw InvalidConfiguration("example 1 variances must be nonnegative");
  Example1Draw d;
  d.z1.resize(cfg.n);
  d.z2.resize(cfg.n);
  d.w1.resize(cfg.n);
  d.w2.resize(cfg.n);
  d.c1.resize(cfg.n);
  d.c2.resize(cfg.n);
  const double e_sd = std::sqrt(cfg.observation_variance);
  auto component = [&] { return rand::uniform(rng) < cfg.weights[0] ? 0 : 1; };
  for (int i = 0; i < cfg.n; ++i) {
    d.c1[i] = component();
    d.c2[i] = component();
    d.z1[i] = std::sqrt(cfg.variances[static_cast<std::size_t>(d.c1[i])]) * rand::normal(rng);
    d.z2[i] = cfg.slope * d.z1[i] + std::sqrt(cfg.variances[static_cast<std::size_t>(d.c2[i])]) * rand::normal(rng);
    d.w1[i] = d.z1[i] + e_sd * rand::normal(rng);
    d.w2[i] = d.z2[i] + e_sd * rand::normal(rng);
  }
  return d;
}

/// Least-squares slope with intercept; NaN with fewer than two distinct x.
inline double ols_slope(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() < 2) return std::nan("");
  const double mx = x.mean(), my = y.mean();
  const double sxx = (x.array() - mx).square().sum();
  if (!(sxx > 0.0)) return std::nan("");
  return ((x.array() - mx) * (y.array() - my)).sum() / sxx;
}

struct Example1Result {
  /// Index 0 is the pooled fit; 1..4 are the groups by (component of the
  /// first, component of the second exogenous term): (0,0), (0,1), (1,0), (1,1).
  std::array<double, 5> causal{}, anticausal{};
  std::array<int, 5> sizes{};

  static double spread(const std::array<double, 5>& s) {
    double lo = s[1], hi = s[1];
    for (std::size_t g = 2; g < 5; ++g) {
      lo = std::min(lo, s[g]);
      hi = std::max(hi, s[g]);
    }
    return hi - lo;
  }
  double causal_spread() const { return spread(causal); }
  double anticausal_spread() const { return spread(anticausal); }
};

inline Example1Result example1_slopes(const Example1Draw& d) {
  Example1Result out;
  const auto n = d.w1.size();
  for (int g = 0; g < 5; ++g) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i)
      if (g == 0 || d.c1[i] * 2 + d.c2[i] == g - 1) idx.push_back(i);
    Eigen::VectorXd a(static_cast<Eigen::Index>(idx.size())), b(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t t = 0; t < idx.size(); ++t) {
      a[static_cast<Eigen::Index>(t)] = d.w1[idx[t]];
      b[static_cast<Eigen::Index>(t)] = d.w2[idx[t]];
    }
    const auto gi = static_cast<std::size_t>(g);
    out.sizes[gi] = static_cast<int>(idx.size());
    out.causal[gi] = ols_slope(a, b);
    out.anticausal[gi] = ols_slope(b, a);
  }
  return out;
}

inline Example1Result example1_demo(const Example1Config& cfg, Rng& rng) {
  return example1_slopes(example1_simulate(cfg, rng));
}

/// Pooled causal-direction slope implied by the model:
/// slope * Var(eps_1) / (Var(eps_1) + observation variance).
inline double example1_pooled_slope(const Example1Config& cfg) {
  const double v = cfg.weights[0] * cfg.variances[0] + cfg.weights[1] * cfg.variances[1];
  return cfg.slope * v / (v + cfg.observation_variance);
}

struct Example1FunctionalConfig {
  int n = 500;
  int grid_points = 20;
  double slope = 1.0;
  std::array<double, 2> variances{0.5, 1.0};
  double observation_variance = 0.1;
};

/// Example 1 lifted to curves: W_j(w) = Z_j sqrt(2) sin(pi w) + e on an even
/// grid. Function 0 causes function 1.
inline FunctionalDataset example1_functional(const Example1FunctionalConfig& cfg, Rng& rng) {
  if (cfg.grid_points < 1) throw InvalidConfiguration("example 1 curves need at least one grid point");
  Example1Config base;
  base.n = cfg.n;
  base.slope = cfg.slope;
  base.variances = cfg.variances;
  base.observation_variance = 0.0;
  const Example1Draw d = example1_simulate(base, rng);
  const std::vector<double> grid = even_grid(static_cast<std::size_t>(cfg.grid_points));
  std::vector<double> shape(grid.size());
  for (std::size_t m = 0; m < grid.size(); ++m) shape[m] = std::numbers::sqrt2 * std::sin(std::numbers::pi * grid[m]);
  const double e_sd = std::sqrt(cfg.observation_variance);
  std::vector<Curve> curves;
  for (int i = 0; i < cfg.n; ++i)
    for (int j = 0; j < 2; ++j) {
      Curve c;
      c.grid = grid;
      const double z = j == 0 ? d.z1[i] : d.z2[i];
      for (double s : shape) c.values.push_back(z * s + e_sd * rand::normal(rng));
      curves.push_back(std::move(c));
    }
  return FunctionalDataset(cfg.n, 2, std::move(curves));
}

// ------------------------------------------------------------------ example 2

struct Example2Params {
  double b = 1.0, tau1 = 1.0, tau2 = 1.0, sigma1 = 0.1, sigma2 = 0.1;
  double tau1_alt = 0.3, sigma1_alt = 0.1;
};

struct Example2Result {
  bool feasible = false;
  double b_alt = 0.0, tau2_alt = 0.0, sigma2_alt = 0.0;
  Eigen::Matrix2d causal_cov = Eigen::Matrix2d::Zero(), anticausal_cov = Eigen::Matrix2d::Zero();
  double max_difference = 0.0;
  std::string reason;
};

/// Builds the anti-causal Gaussian parameterization matching the causal one
/// and compares the two implied covariance matrices.
inline Example2Result example2_check(const Example2Params& q) {
  Example2Result out;
  for (double v : {q.tau1, q.tau2, q.sigma1, q.sigma2, q.tau1_alt, q.sigma1_alt})
    if (!(v > 0.0)) throw InvalidConfiguration("example 2 variances must be positive");
  if (q.b == 0.0) throw InvalidConfiguration("example 2 needs a nonzero effect b");
  const double var2 = q.b * q.b * q.tau1 + q.tau2 + q.sigma2;
  out.causal_cov << q.tau1 + q.sigma1, q.b * q.tau1, q.b * q.tau1, var2;

  const double gap = q.tau1 + q.sigma1 - q.tau1_alt - q.sigma1_alt;
  const double rhs = q.tau1 + q.sigma1 - q.b * q.b * q.tau1 * q.tau1 / var2;
  const double lhs = q.tau1_alt + q.sigma1_alt;
  if (rhs - lhs <= 1e-12 * std::max(1.0, std::abs(rhs))) {
    out.reason = "tau1' + sigma1' must be below tau1 + sigma1 - b^2 tau1^2 / (b^2 tau1 + tau2 + sigma2)";
    if (gap > 0.0) {
      out.b_alt = gap / (q.b * q.tau1);
      out.tau2_alt = q.b * q.b * q.tau1 * q.tau1 / gap;
      out.sigma2_alt = var2 - out.tau2_alt;
    }
    return out;
  }
  out.feasible = true;
  out.b_alt = gap / (q.b * q.tau1);
  out.tau2_alt = q.b * q.b * q.tau1 * q.tau1 / gap;
  out.sigma2_alt = var2 - out.tau2_alt;
  out.anticausal_cov << out.b_alt * out.b_alt * out.tau2_alt + q.tau1_alt + q.sigma1_alt, out.b_alt * out.tau2_alt,
      out.b_alt * out.tau2_alt, out.tau2_alt + out.sigma2_alt;
  out.max_difference = (out.causal_cov - out.anticausal_cov).cwiseAbs().maxCoeff();
  return out;
}

}  // namespace fdag
