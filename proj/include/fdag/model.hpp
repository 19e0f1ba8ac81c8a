#pragma once

// Generative model: latent linear SEM on basis coefficients with Gaussian
// scale-mixture exogenous noise, observed on grids with white noise, and the
// full set of priors.
//
// Layout conventions: coefficient (j, k) lives in column j*K + k of the
// n x pK latent matrix Z; mixture tables are pK x M with the same row order.

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fdag/dataset.hpp"
#include "fdag/errors.hpp"
#include "fdag/graph.hpp"
#include "fdag/random.hpp"
#include "fdag/splines.hpp"

namespace fdag {

struct Hyperparameters {
  double a_r = 1.0, b_r = 1.0;
  double a_gamma = 1.0, b_gamma = 1.0;
  double alpha = 1.0;
  double a_tau = 1.0, b_tau = 1.0;
  double a_sigma = 0.01, b_sigma = 0.01;
  int M = 5;
  int L = 20;
  int K = 5;
  double flat_variance = kFlatVariance;
  double lambda_upper = kLambdaUpper;
  double lambda_lower = kLambdaLower;
  /// Score graphs with r integrated out instead of carrying r in the state.
  bool marginalize_r = false;

  void validate() const {
    for (double v : {a_r, b_r, a_gamma, b_gamma, alpha, a_tau, b_tau, a_sigma, b_sigma, flat_variance,
                     lambda_upper, lambda_lower})
      if (!(v > 0.0)) throw InvalidConfiguration("hyperparameters must be positive");
    if (M < 1) throw InvalidConfiguration("M must be at least 1");
    if (L < 4) throw InvalidConfiguration("L must be at least 4 for cubic splines");
    if (K < 1) throw InvalidConfiguration("K must be at least 1");
    if (!(lambda_lower < lambda_upper)) throw InvalidConfiguration("lambda bounds out of order");
  }
};

/// Discrete scale mixtures for every exogenous coefficient (j, k).
struct MixtureNoise {
  Eigen::MatrixXd pi;   // pK x M, rows on the simplex
  Eigen::MatrixXd tau;  // pK x M, positive
  Eigen::MatrixXi c;    // n x pK component assignments

  int M() const { return static_cast<int>(pi.cols()); }
};

/// K x K effect blocks B_{jl} for every ordered pair plus the slab scale.
struct EffectBlocks {
  int p = 0, K = 0;
  std::vector<Eigen::MatrixXd> blocks;  // index j*p + l
  double gamma = 1.0;

  EffectBlocks() = default;
  EffectBlocks(int p_, int K_, double gamma_ = 1.0)
      : p(p_), K(K_), blocks(static_cast<std::size_t>(p_) * static_cast<std::size_t>(p_),
                             Eigen::MatrixXd::Zero(K_, K_)),
        gamma(gamma_) {}

  Eigen::MatrixXd& block(int j, int l) { return blocks[static_cast<std::size_t>(j * p + l)]; }
  const Eigen::MatrixXd& block(int j, int l) const { return blocks[static_cast<std::size_t>(j * p + l)]; }

  /// Dense pK x pK matrix with B_{jl} in block (j, l).
  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p * K, p * K);
    for (int j = 0; j < p; ++j)
      for (int l = 0; l < p; ++l) out.block(j * K, l * K, K, K) = block(j, l);
    return out;
  }
};

struct ModelState {
  Dag dag;
  EffectBlocks effects;
  MixtureNoise noise;
  Eigen::MatrixXd Z;      // n x pK
  Eigen::VectorXd sigma;  // observation-noise variances, length p
  double r = 0.5;
  AdaptiveBasis basis;
  std::shared_ptr<const PenaltySystem> splines;

  int n() const { return static_cast<int>(Z.rows()); }
  int p() const { return dag.p(); }
  int K() const { return static_cast<int>(basis.K()); }

  /// Z_i as a p x K matrix.
  Eigen::MatrixXd subject(int i) const {
    Eigen::MatrixXd out(p(), K());
    for (int j = 0; j < p(); ++j) out.row(j) = Z.row(i).segment(j * K(), K());
    return out;
  }
};

inline double neg_inf() { return -std::numeric_limits<double>::infinity(); }

/// Checks dimensions and invariants. Throws InvalidState.
inline void validate_state(const ModelState& s, double tol = 1e-8) {
  const int p = s.p(), K = s.K(), n = s.n();
  if (!s.splines) throw InvalidState("state has no spline system");
  if (s.basis.L() != s.splines->size()) throw InvalidState("basis dimension does not match spline system");
  if (s.Z.cols() != p * K) throw InvalidState("Z has the wrong number of columns");
  if (s.sigma.size() != p) throw InvalidState("sigma has the wrong length");
  for (Eigen::Index j = 0; j < p; ++j)
    if (!(s.sigma[j] > 0.0)) throw InvalidState("observation-noise variance must be positive");
  if (s.effects.p != p || s.effects.K != K) throw InvalidState("effect blocks have the wrong shape");
  if (!(s.effects.gamma > 0.0)) throw InvalidState("gamma must be positive");
  if (!is_acyclic(s.dag.adjacency())) throw InvalidState("graph is cyclic");
  for (int j = 0; j < p; ++j)
    for (int l = 0; l < p; ++l) {
      const auto& b = s.effects.block(j, l);
      if (!b.allFinite()) throw InvalidState("non-finite effect block");
      if (!s.dag.has_edge(j, l) && b.squaredNorm() != 0.0) throw InvalidState("nonzero block on an absent edge");
    }
  const auto& nz = s.noise;
  if (nz.pi.rows() != p * K || nz.tau.rows() != p * K || nz.pi.cols() != nz.tau.cols())
    throw InvalidState("mixture tables have the wrong shape");
  for (Eigen::Index row = 0; row < nz.pi.rows(); ++row) {
    if (std::abs(nz.pi.row(row).sum() - 1.0) > 1e-12 || (nz.pi.row(row).array() < 0.0).any())
      throw InvalidState("mixture weights are not on the simplex");
    if (!(nz.tau.row(row).array() > 0.0).all()) throw InvalidState("mixture variances must be positive");
  }
  if (nz.c.rows() != n || nz.c.cols() != p * K) throw InvalidState("assignments have the wrong shape");
  if (n > 0 && (nz.c.minCoeff() < 0 || nz.c.maxCoeff() >= nz.M())) throw InvalidState("assignment out of range");
  if (!(s.r > 0.0 && s.r < 1.0)) throw InvalidState("edge probability outside (0, 1)");
  if (!s.basis.lambda_ordered()) throw InvalidState("smoothness parameters are not strictly decreasing");
  if (s.basis.max_orthonormality_error(s.splines->J()) > tol) throw InvalidState("basis is not J-orthonormal");
}

/// eps_j = Z_j - sum_{l in pa(j)} B_{jl} Z_l for one subject (p x K in and out).
inline Eigen::MatrixXd sem_residual(const Eigen::MatrixXd& z, const EffectBlocks& effects, const Dag& dag) {
  if (z.rows() != dag.p() || effects.p != dag.p() || z.cols() != effects.K)
    throw InvalidConfiguration("sem_residual: dimension mismatch");
  Eigen::MatrixXd eps = z;
  for (int j = 0; j < dag.p(); ++j)
    for (int l : dag.parents(j)) eps.row(j) -= (effects.block(j, l) * z.row(l).transpose()).transpose();
  return eps;
}

/// All residuals as an n x pK matrix in the Z layout.
inline Eigen::MatrixXd sem_residuals(const ModelState& s) {
  const int p = s.p(), K = s.K();
  Eigen::MatrixXd eps = s.Z;
  for (int j = 0; j < p; ++j)
    for (int l : s.dag.parents(j))
      eps.middleCols(j * K, K).noalias() -= s.Z.middleCols(l * K, K) * s.effects.block(j, l).transpose();
  return eps;
}

/// Sum over subjects, functions and grid points of log N(W - Phi Z; 0, sigma_j).
inline double loglik_observation(const FunctionalDataset& data, const ModelState& s) {
  for (int j = 0; j < s.p(); ++j)
    if (!(s.sigma[j] > 0.0)) throw InvalidState("observation-noise variance must be positive");
  if (data.p() != s.p() || data.n() != s.n()) throw InvalidState("dataset and state sizes differ");
  const int K = s.K();
  double total = 0.0;
  for (int i = 0; i < data.n(); ++i)
    for (int j = 0; j < data.p(); ++j) {
      const Curve& c = data.curve(i, j);
      Eigen::MatrixXd phi = basis_functions_on_grid(s.basis, *s.splines, c.grid);
      Eigen::VectorXd fit = phi * s.Z.row(i).segment(j * K, K).transpose();
      for (std::size_t m = 0; m < c.grid.size(); ++m)
        total += log_normal_pdf(c.values[m] - fit[static_cast<Eigen::Index>(m)], s.sigma[j]);
    }
  return total;
}

/// Mixture log-likelihood of the SEM residuals, assignments summed out.
inline double loglik_latent(const ModelState& s) {
  const auto& nz = s.noise;
  const Eigen::MatrixXd eps = sem_residuals(s);
  Eigen::VectorXd terms(nz.M());
  double total = 0.0;
  for (Eigen::Index i = 0; i < eps.rows(); ++i)
    for (Eigen::Index col = 0; col < eps.cols(); ++col) {
      for (int m = 0; m < nz.M(); ++m)
        terms[m] = std::log(nz.pi(col, m)) + log_normal_pdf(eps(i, col), nz.tau(col, m));
      total += log_sum_exp(terms);
    }
  return total;
}

/// Complete-data version: sum of log pi_c + log N(eps; 0, tau_c).
inline double loglik_latent_given_assignments(const ModelState& s) {
  const auto& nz = s.noise;
  const Eigen::MatrixXd eps = sem_residuals(s);
  double total = 0.0;
  for (Eigen::Index i = 0; i < eps.rows(); ++i)
    for (Eigen::Index col = 0; col < eps.cols(); ++col) {
      int m = nz.c(i, col);
      total += std::log(nz.pi(col, m)) + log_normal_pdf(eps(i, col), nz.tau(col, m));
    }
  return total;
}

/// Log prior of the edge indicators (and r, unless marginalized).
inline double log_prior_graph(const Dag& dag, double r, const Hyperparameters& hp) {
  if (!is_acyclic(dag.adjacency())) return neg_inf();
  const double s = dag.edge_count();
  const double N = static_cast<double>(dag.p()) * (dag.p() - 1);
  if (hp.marginalize_r) return log_beta_fn(s + hp.a_r, N - s + hp.b_r) - log_beta_fn(hp.a_r, hp.b_r);
  if (!(r > 0.0 && r < 1.0)) return neg_inf();
  return log_beta_pdf(r, hp.a_r, hp.b_r) + s * std::log(r) + (N - s) * std::log1p(-r);
}

inline double log_prior_basis(const AdaptiveBasis& ab, const Hyperparameters& hp) {
  for (Eigen::Index k = 0; k < ab.K(); ++k) {
    if (!(ab.lambda[k] > hp.lambda_lower && ab.lambda[k] < hp.lambda_upper)) return neg_inf();
    if (k > 0 && !(ab.lambda[k] < ab.lambda[k - 1])) return neg_inf();
  }
  // The ordered-uniform prior on lambda is constant on its support.
  double total = 0.0;
  for (Eigen::Index k = 0; k < ab.K(); ++k)
    for (Eigen::Index l = 0; l < ab.L(); ++l) {
      double var = l < 2 ? hp.flat_variance : 1.0 / ab.lambda[k];
      total += log_normal_pdf(ab.atilde(l, k), var);
    }
  return total;
}

inline double log_prior_effects(const Dag& dag, const EffectBlocks& effects) {
  double total = 0.0;
  for (int j = 0; j < dag.p(); ++j)
    for (int l = 0; l < dag.p(); ++l) {
      const auto& b = effects.block(j, l);
      if (!dag.has_edge(j, l)) {
        if (b.squaredNorm() != 0.0) return neg_inf();
        continue;
      }
      total += -0.5 * static_cast<double>(b.size()) * (kLogTwoPi + std::log(effects.gamma)) -
               0.5 * b.squaredNorm() / effects.gamma;
    }
  return total;
}

inline double log_prior_mixture(const MixtureNoise& nz, const Hyperparameters& hp) {
  double total = 0.0;
  const Eigen::VectorXd alpha = Eigen::VectorXd::Constant(nz.M(), hp.alpha);
  for (Eigen::Index row = 0; row < nz.pi.rows(); ++row) {
    if (nz.M() > 1) total += log_dirichlet_pdf(nz.pi.row(row).transpose(), alpha);
    for (int m = 0; m < nz.M(); ++m) total += log_inv_gamma_pdf(nz.tau(row, m), hp.a_tau, hp.b_tau);
  }
  return total;
}

inline double log_prior(const ModelState& s, const Hyperparameters& hp) {
  double total = log_prior_graph(s.dag, s.r, hp);
  if (!std::isfinite(total)) return neg_inf();
  total += log_prior_basis(s.basis, hp);
  total += log_prior_effects(s.dag, s.effects);
  total += log_inv_gamma_pdf(s.effects.gamma, hp.a_gamma, hp.b_gamma);
  total += log_prior_mixture(s.noise, hp);
  for (Eigen::Index j = 0; j < s.sigma.size(); ++j) total += log_inv_gamma_pdf(s.sigma[j], hp.a_sigma, hp.b_sigma);
  return total;
}

/// log p(W, Z, state). With `marginal_assignments` the mixture assignments
/// are summed out; otherwise the complete-data density is returned.
inline double log_joint(const FunctionalDataset& data, const ModelState& s, const Hyperparameters& hp,
                        bool marginal_assignments = false) {
  double prior = log_prior(s, hp);
  if (!std::isfinite(prior)) return prior;
  return loglik_observation(data, s) +
         (marginal_assignments ? loglik_latent(s) : loglik_latent_given_assignments(s)) + prior;
}

}  // namespace fdag
