#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fdag/dataset.hpp"
#include "fdag/graph.hpp"
#include "fdag/model.hpp"
#include "fdag/random.hpp"
#include "fdag/splines.hpp"

namespace fdag {

enum class GridMode { even, uneven };

struct SimulationConfig {
  int p = 30;
  int n = 100;
  int d = 125;
  int K_true = 5;
  int L_true = 6;
  double laplace_scale = 0.5;
  double snr = 5.0;
  GridMode grid = GridMode::even;
  /// Erdos-Renyi connection probability; negative means 2/p.
  double edge_prob = -1.0;
  int min_uneven_points = 10;
};

struct SimulationResult {
  FunctionalDataset data;
  /// Ground truth expressed as a model state over an L_true spline system.
  /// The mixture tables hold a single Gaussian with the Laplace variance as a
  /// placeholder; the actual exogenous draws are in `eps`.
  ModelState truth;
  Eigen::MatrixXd eps;          // n x pK
  Eigen::VectorXd noise_sd;     // per function
  Eigen::MatrixXd bspline_coef; // L_true x K_true, orthonormalized phi_k
};

/// Orthonormalizes spline coefficient columns in the trapezoid inner product
/// on `grid`.
inline Eigen::MatrixXd empirical_orthonormalize(const BSplineBasis& basis, const Eigen::MatrixXd& coef,
                                                std::span<const double> grid) {
  const Eigen::MatrixXd B = basis.evaluate(grid);
  const Eigen::VectorXd w = trapezoid_weights(grid);
  const Eigen::MatrixXd G = B.transpose() * w.asDiagonal() * B;
  return orthonormalize(coef, G);
}

inline SimulationResult simulate(const SimulationConfig& cfg, Rng& rng) {
  if (cfg.p < 2 || cfg.n < 1 || cfg.d < cfg.K_true || cfg.K_true < 1 || cfg.L_true < 4)
    throw InvalidConfiguration("simulate: need p >= 2, n >= 1, d >= K_true >= 1 and L_true >= 4");
  if (cfg.laplace_scale < 0.0 || !(cfg.snr > 0.0)) throw InvalidConfiguration("simulate: bad noise settings");
  const int p = cfg.p, n = cfg.n, K = cfg.K_true;

  // (i) basis functions from random spline coefficients, orthonormalized on the grid.
  BSplineBasis basis(cfg.L_true, 4);
  Eigen::MatrixXd A(cfg.L_true, K);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index l = 0; l < cfg.L_true; ++l) A(l, k) = rand::normal(rng);
  const std::vector<double> reference = even_grid(static_cast<std::size_t>(cfg.d));
  const Eigen::MatrixXd A_orth = empirical_orthonormalize(basis, A, reference);

  // (ii) graph and effect blocks.
  const double prob = cfg.edge_prob >= 0.0 ? cfg.edge_prob : 2.0 / p;
  Dag dag = random_er_dag(p, prob, rng);
  EffectBlocks effects(p, K, 1.0);
  for (int j = 0; j < p; ++j)
    for (int l : dag.parents(j))
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) effects.block(j, l)(a, b) = rand::normal(rng);

  // (iii) Laplace exogenous terms, Z in causal order.
  Eigen::MatrixXd eps(n, p * K), Z(n, p * K);
  for (int i = 0; i < n; ++i)
    for (int col = 0; col < p * K; ++col) eps(i, col) = rand::laplace(rng, cfg.laplace_scale);
  const auto order = topological_order(dag);
  for (int j : order) {
    Z.middleCols(j * K, K) = eps.middleCols(j * K, K);
    for (int l : dag.parents(j))
      Z.middleCols(j * K, K).noalias() += Z.middleCols(l * K, K) * effects.block(j, l).transpose();
  }

  // (iv) grids, signals and noise calibrated to the signal-to-noise ratio.
  std::vector<Curve> curves(static_cast<std::size_t>(n) * static_cast<std::size_t>(p));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) {
      Curve& c = curves[static_cast<std::size_t>(i * p + j)];
      if (cfg.grid == GridMode::even) {
        c.grid = reference;
      } else {
        const int lo = std::max(cfg.min_uneven_points, cfg.d / 2);
        const int hi = std::max(lo, cfg.d);
        const int m = std::uniform_int_distribution<int>(lo, hi)(rng);
        c.grid.resize(static_cast<std::size_t>(m));
        for (auto& x : c.grid) x = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        std::sort(c.grid.begin(), c.grid.end());
      }
    }
  Eigen::VectorXd noise_sd(p);
  std::vector<std::vector<double>> signal(curves.size());
  for (int j = 0; j < p; ++j) {
    double abs_sum = 0.0;
    std::size_t count = 0;
    for (int i = 0; i < n; ++i) {
      const Curve& c = curves[static_cast<std::size_t>(i * p + j)];
      Eigen::VectorXd y = basis.evaluate(c.grid) * (A_orth * Z.row(i).segment(j * K, K).transpose());
      signal[static_cast<std::size_t>(i * p + j)] = std::vector<double>(y.data(), y.data() + y.size());
      abs_sum += y.cwiseAbs().sum();
      count += c.grid.size();
    }
    const double mean_abs = abs_sum / static_cast<double>(count);
    noise_sd[j] = mean_abs > 0.0 ? mean_abs / cfg.snr : 1.0;
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) {
      Curve& c = curves[static_cast<std::size_t>(i * p + j)];
      const auto& y = signal[static_cast<std::size_t>(i * p + j)];
      c.values.resize(y.size());
      for (std::size_t m = 0; m < y.size(); ++m) c.values[m] = y[m] + noise_sd[j] * rand::normal(rng);
    }

  SimulationResult out;
  out.data = FunctionalDataset(n, p, std::move(curves));
  out.eps = eps;
  out.noise_sd = noise_sd;
  out.bspline_coef = A_orth;

  ModelState& t = out.truth;
  t.splines = std::make_shared<const PenaltySystem>(basis);
  t.dag = dag;
  t.effects = effects;
  t.Z = Z;
  t.sigma = noise_sd.array().square();
  t.r = std::clamp(prob, 1e-12, 1.0 - 1e-12);
  t.basis.atilde = t.splines->from_bspline(A_orth);
  t.basis.lambda.resize(K);
  for (int k = 0; k < K; ++k) t.basis.lambda[k] = std::pow(10.0, -k);  // placeholder ordering
  t.noise.pi = Eigen::MatrixXd::Ones(p * K, 1);
  t.noise.tau = Eigen::MatrixXd::Constant(p * K, 1, std::max(2.0 * cfg.laplace_scale * cfg.laplace_scale, 1e-300));
  t.noise.c = Eigen::MatrixXi::Zero(n, p * K);
  return out;
}

}  // namespace fdag
