#pragma once

// Metropolis-within-Gibbs sampler. Every conditional is exposed alongside its
// update so that tests can audit it against the joint density in model.hpp.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fdag/dataset.hpp"
#include "fdag/design.hpp"
#include "fdag/errors.hpp"
#include "fdag/fpca.hpp"
#include "fdag/graph.hpp"
#include "fdag/model.hpp"
#include "fdag/random.hpp"
#include "fdag/splines.hpp"

namespace fdag {

enum class EdgeKernel {
  /// Slab blocks integrated out, conditional on assignments and mixture
  /// variances of the affected nodes.
  collapsed_slab,
  /// Assignments summed out; affected nodes get fresh slab blocks from a
  /// Gaussian proposal and their mixture variances rescaled by the change in
  /// residual scale.
  mixture_marginal,
};

struct McmcConfig {
  int iterations = 5000;
  int burn_in = -1;  // negative: iterations / 2
  int thin = 5;
  std::uint64_t seed = 1;
  double edge_threshold = 0.5;
  double weight_add = 4.0, weight_remove = 4.0, weight_reverse = 2.0;
  int edge_moves = -1;  // per sweep; negative: p (p - 1) / 2, at least 1
  int chains = 1;
  EdgeKernel edge_kernel = EdgeKernel::mixture_marginal;
  bool check_invariants = false;

  struct Blocks {
    bool Z = true, mixture = true, effects = true, edges = true, r = true, basis = true, sigma = true, gamma = true;
  } update;

  int resolved_burn_in() const { return burn_in < 0 ? iterations / 2 : burn_in; }
  int resolved_edge_moves(int p) const { return edge_moves >= 0 ? edge_moves : std::max(1, p * (p - 1) / 2); }

  void validate() const {
    if (iterations < 1) throw InvalidConfiguration("iterations must be positive");
    if (resolved_burn_in() >= iterations) throw InvalidConfiguration("burn-in must be smaller than iterations");
    if (thin < 1) throw InvalidConfiguration("thin must be at least 1");
    if (!(edge_threshold > 0.0 && edge_threshold < 1.0)) throw InvalidConfiguration("threshold must lie in (0, 1)");
    if (weight_add < 0 || weight_remove < 0 || weight_reverse < 0 || weight_add + weight_remove + weight_reverse <= 0)
      throw InvalidConfiguration("edge move weights must be nonnegative with a positive sum");
    if ((weight_add > 0) != (weight_remove > 0))
      throw InvalidConfiguration("add and remove moves must both be enabled or both disabled");
    if (chains < 1) throw InvalidConfiguration("chains must be at least 1");
  }
};

/// Multivariate normal given by its precision: N(mean, Q^{-1}).
struct GaussianConditional {
  Eigen::VectorXd mean;
  Eigen::LLT<Eigen::MatrixXd> llt;

  Eigen::Index dim() const { return mean.size(); }

  double log_density(const Eigen::VectorXd& x) const {
    if (dim() == 0) return 0.0;
    const Eigen::MatrixXd& Lm = llt.matrixLLT();
    Eigen::VectorXd u = llt.matrixU() * (x - mean);
    double logdet = 2.0 * Lm.diagonal().array().log().sum();
    return -0.5 * static_cast<double>(dim()) * kLogTwoPi + 0.5 * logdet - 0.5 * u.squaredNorm();
  }

  Eigen::VectorXd sample(Rng& rng) const {
    if (dim() == 0) return mean;
    Eigen::VectorXd xi = rand::normal_vector(rng, dim());
    return mean + llt.matrixU().solve(xi);
  }
};

inline GaussianConditional gaussian_from_precision(const Eigen::MatrixXd& Q, const Eigen::VectorXd& h,
                                                   const char* what) {
  GaussianConditional g;
  if (Q.rows() == 0) {
    g.mean = Eigen::VectorXd(0);
    return g;
  }
  g.llt.compute(Q);
  if (g.llt.info() != Eigen::Success)
    throw NumericalError(std::string("precision matrix of the ") + what + " conditional is not positive definite");
  g.mean = g.llt.solve(h);
  return g;
}

/// Gamma(shape, rate) restricted to (lower, upper).
struct TruncatedGamma {
  double shape = 1.0, rate = 0.0, lower = 0.0, upper = 1.0;

  /// Unnormalized log density.
  double log_density(double x) const {
    if (!(x > lower && x < upper)) return neg_inf();
    return (shape - 1.0) * std::log(x) - rate * x;
  }
  double sample(Rng& rng) const {
    for (;;) {
      double x = rand::truncated_gamma(rng, shape, rate, lower, upper);
      if (x > lower && x < upper) return x;
    }
  }
};

struct InvGamma {
  double shape, scale;
  double log_density(double x) const { return log_inv_gamma_pdf(x, shape, scale); }
};

struct SamplerDiagnostics {
  long proposed[3] = {0, 0, 0};  // add, remove, reverse
  long accepted[3] = {0, 0, 0};
  long cycle_rejections = 0;
  long collinearity_redraws = 0;
  long collinearity_failures = 0;
  long invariant_checks = 0;
};

/// A single-edge Metropolis-Hastings proposal with its log acceptance ratio
/// split into target, proposal and Jacobian parts.
struct EdgeProposal {
  EdgeOp op = EdgeOp::add;
  int j = 0, l = 0;  // edge l -> j being added, removed or reversed
  bool feasible = false;
  Dag dag;
  std::vector<int> affected;
  std::vector<std::vector<std::pair<int, Eigen::MatrixXd>>> blocks;  // per affected node: (parent, B)
  std::vector<Eigen::MatrixXd> tau;                                   // per affected node: K x M
  double log_target_ratio = 0.0;
  double log_proposal_ratio = 0.0;
  double log_jacobian = 0.0;

  double log_acceptance() const { return log_target_ratio + log_proposal_ratio + log_jacobian; }
};

class Sampler {
 public:
  Sampler(const FunctionalDataset& data, Hyperparameters hp, McmcConfig cfg, ModelState state)
      : data_(&data), hp_(hp), cfg_(cfg), state_(std::move(state)) {
    hp_.validate();
    cfg_.validate();
    if (data.n() != state_.n() || data.p() != state_.p()) throw InvalidState("dataset and state sizes differ");
    design_ = ObservationDesign(data, *state_.splines);
    projections_.refresh(design_, state_.basis.atilde);
  }

  const ModelState& state() const { return state_; }
  const Hyperparameters& hyperparameters() const { return hp_; }
  const McmcConfig& config() const { return cfg_; }
  const SamplerDiagnostics& diagnostics() const { return diag_; }
  const ObservationDesign& design() const { return design_; }

  /// Replace the state (tests use this to set up audits).
  void set_state(ModelState s) {
    state_ = std::move(s);
    projections_.refresh(design_, state_.basis.atilde);
  }

  // ---------------------------------------------------------------- Z

  /// Exact Gaussian conditional of Z_i (length pK) given everything else.
  GaussianConditional z_conditional(int i) const {
    const int p = state_.p(), K = state_.K(), pK = p * K;
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(pK, pK);
    Eigen::VectorXd h(pK);
    for (int j = 0; j < p; ++j) {
      const auto& cs = design_.stats(i, j);
      Q.block(j * K, j * K, K, K) += projections_.phitphi(cs.grid_id) / state_.sigma[j];
      h.segment(j * K, K) = projections_.phitw(i, j) / state_.sigma[j];
    }
    // (I - B)' T_i^{-1} (I - B), one block row of (I - B) at a time.
    for (int j = 0; j < p; ++j) {
      Eigen::VectorXd t(K);
      for (int k = 0; k < K; ++k) {
        int col = j * K + k;
        t[k] = 1.0 / state_.noise.tau(col, state_.noise.c(i, col));
      }
      std::vector<int> cols{j};
      std::vector<Eigen::MatrixXd> entries{Eigen::MatrixXd::Identity(K, K)};
      for (int l : state_.dag.parents(j)) {
        cols.push_back(l);
        entries.push_back(-state_.effects.block(j, l));
      }
      for (std::size_t a = 0; a < cols.size(); ++a) {
        Eigen::MatrixXd left = entries[a].transpose() * t.asDiagonal();
        for (std::size_t b = 0; b < cols.size(); ++b)
          Q.block(cols[a] * K, cols[b] * K, K, K).noalias() += left * entries[b];
      }
    }
    return gaussian_from_precision(0.5 * (Q + Q.transpose()), h, "latent coefficient");
  }

  void update_Z(Rng& rng) {
    for (int i = 0; i < state_.n(); ++i) state_.Z.row(i) = z_conditional(i).sample(rng).transpose();
  }

  // ---------------------------------------------------------------- mixture

  /// Normalized log probabilities of c_{i,col} over the M components.
  Eigen::VectorXd assignment_log_probs(int col, double residual) const {
    const auto& nz = state_.noise;
    Eigen::VectorXd lw(nz.M());
    for (int m = 0; m < nz.M(); ++m) lw[m] = std::log(nz.pi(col, m)) + log_normal_pdf(residual, nz.tau(col, m));
    return lw.array() - log_sum_exp(lw);
  }

  Eigen::VectorXd pi_conditional(int col) const {
    Eigen::VectorXd a = Eigen::VectorXd::Constant(state_.noise.M(), hp_.alpha);
    for (int i = 0; i < state_.n(); ++i) a[state_.noise.c(i, col)] += 1.0;
    return a;
  }

  InvGamma tau_conditional(int col, int m, const Eigen::MatrixXd& eps) const {
    double count = 0.0, ss = 0.0;
    for (int i = 0; i < state_.n(); ++i)
      if (state_.noise.c(i, col) == m) {
        count += 1.0;
        ss += eps(i, col) * eps(i, col);
      }
    return {hp_.a_tau + 0.5 * count, hp_.b_tau + 0.5 * ss};
  }

  void update_assignments(Rng& rng) {
    const Eigen::MatrixXd eps = sem_residuals(state_);
    for (int i = 0; i < state_.n(); ++i)
      for (Eigen::Index col = 0; col < eps.cols(); ++col)
        state_.noise.c(i, col) = rand::categorical_log(rng, assignment_log_probs(static_cast<int>(col), eps(i, col)));
  }

  void update_assignments_and_mixture(Rng& rng) {
    update_assignments(rng);
    const Eigen::MatrixXd eps = sem_residuals(state_);
    auto& nz = state_.noise;
    for (Eigen::Index col = 0; col < nz.pi.rows(); ++col) {
      nz.pi.row(col) = rand::dirichlet(rng, pi_conditional(static_cast<int>(col))).transpose();
      for (int m = 0; m < nz.M(); ++m) {
        InvGamma ig = tau_conditional(static_cast<int>(col), m, eps);
        nz.tau(col, m) = rand::inv_gamma(rng, ig.shape, ig.scale);
      }
    }
  }

  // ---------------------------------------------------------------- effects

  /// Stacked regressors Z_l for the given parents, n x (|parents| K).
  Eigen::MatrixXd parent_design(const std::vector<int>& parents) const {
    const int K = state_.K();
    Eigen::MatrixXd X(state_.n(), static_cast<Eigen::Index>(parents.size()) * K);
    for (std::size_t a = 0; a < parents.size(); ++a)
      X.middleCols(static_cast<Eigen::Index>(a) * K, K) = state_.Z.middleCols(parents[a] * K, K);
    return X;
  }

  /// Row k of all blocks B_{j, pa(j)} stacked, given assignments.
  GaussianConditional effect_row_conditional(int j, int k) const {
    return effect_row_conditional(j, k, state_.dag.parents(j));
  }

  GaussianConditional effect_row_conditional(int j, int k, const std::vector<int>& parents) const {
    const int col = j * state_.K() + k;
    const Eigen::MatrixXd X = parent_design(parents);
    Eigen::VectorXd w(state_.n());
    for (int i = 0; i < state_.n(); ++i) w[i] = 1.0 / state_.noise.tau(col, state_.noise.c(i, col));
    Eigen::MatrixXd Q = X.transpose() * w.asDiagonal() * X;
    Q.diagonal().array() += 1.0 / state_.effects.gamma;
    Eigen::VectorXd h = X.transpose() * w.cwiseProduct(state_.Z.col(col));
    return gaussian_from_precision(Q, h, "effect");
  }

  void set_effect_row(int j, int k, const std::vector<int>& parents, const Eigen::VectorXd& beta) {
    const int K = state_.K();
    for (std::size_t a = 0; a < parents.size(); ++a)
      state_.effects.block(j, parents[a]).row(k) = beta.segment(static_cast<Eigen::Index>(a) * K, K).transpose();
  }

  void update_effects(Rng& rng) {
    for (int j = 0; j < state_.p(); ++j) {
      auto parents = state_.dag.parents(j);
      if (parents.empty()) continue;
      for (int k = 0; k < state_.K(); ++k) set_effect_row(j, k, parents, effect_row_conditional(j, k, parents).sample(rng));
    }
  }

  // ---------------------------------------------------------------- edges

  /// Log marginal likelihood of node j's regression rows with the slab
  /// integrated out, conditional on assignments and mixture variances.
  double node_log_marginal(int j, const std::vector<int>& parents) const {
    const int K = state_.K();
    const Eigen::MatrixXd X = parent_design(parents);
    const double d = static_cast<double>(X.cols());
    double total = 0.0;
    for (int k = 0; k < K; ++k) {
      const int col = j * K + k;
      Eigen::VectorXd w(state_.n());
      for (int i = 0; i < state_.n(); ++i) w[i] = 1.0 / state_.noise.tau(col, state_.noise.c(i, col));
      const Eigen::VectorXd y = state_.Z.col(col);
      total += 0.5 * (w.array().log().sum() - static_cast<double>(state_.n()) * kLogTwoPi) -
               0.5 * y.cwiseProduct(w).dot(y);
      if (d == 0) continue;
      Eigen::MatrixXd Q = X.transpose() * w.asDiagonal() * X;
      Q.diagonal().array() += 1.0 / state_.effects.gamma;
      Eigen::LLT<Eigen::MatrixXd> llt(Q);
      if (llt.info() != Eigen::Success) throw NumericalError("collapsed edge score: precision not positive definite");
      Eigen::VectorXd h = X.transpose() * w.cwiseProduct(y);
      Eigen::VectorXd u = llt.matrixL().solve(h);
      total += 0.5 * u.squaredNorm() - llt.matrixL().toDenseMatrix().diagonal().array().log().sum() -
               0.5 * d * std::log(state_.effects.gamma);
    }
    return total;
  }

  /// Mixture log-likelihood of node j's residual rows (assignments summed
  /// out) for stacked coefficients beta[k] and mixture variances tau (K x M).
  double node_mixture_loglik(int j, const Eigen::MatrixXd& X, const std::vector<Eigen::VectorXd>& beta,
                             const Eigen::MatrixXd& tau) const {
    const int K = state_.K(), M = state_.noise.M();
    double total = 0.0;
    Eigen::VectorXd lw(M);
    for (int k = 0; k < K; ++k) {
      const int col = j * K + k;
      Eigen::VectorXd res = state_.Z.col(col);
      if (X.cols() > 0) res.noalias() -= X * beta[static_cast<std::size_t>(k)];
      Eigen::VectorXd logpi = state_.noise.pi.row(col).array().log();
      for (int i = 0; i < state_.n(); ++i) {
        for (int m = 0; m < M; ++m) lw[m] = logpi[m] + log_normal_pdf(res[i], tau(k, m));
        total += log_sum_exp(lw);
      }
    }
    return total;
  }

  /// Ridge residual sum of squares of Z_{jk} on the parents' coefficients;
  /// used to carry the mixture variances across a change of parent set.
  double residual_scale(int j, int k, const Eigen::MatrixXd& X) const {
    const Eigen::VectorXd y = state_.Z.col(j * state_.K() + k);
    double rss = y.squaredNorm();
    if (X.cols() > 0 && state_.n() > 0) {
      Eigen::MatrixXd A = X.transpose() * X;
      A.diagonal().array() += 1.0;
      Eigen::VectorXd xty = X.transpose() * y;
      rss -= xty.dot(A.ldlt().solve(xty));
    }
    return std::max(rss, 0.0) + 1e-12;
  }

  /// Gaussian proposal for node j's stacked effect row k: homoscedastic
  /// regression with the mixture variance sum_m pi tau as noise level.
  GaussianConditional effect_row_proposal(int j, int k, const Eigen::MatrixXd& X, const Eigen::MatrixXd& XtX,
                                          const Eigen::MatrixXd& tau) const {
    const int col = j * state_.K() + k;
    const double v = state_.noise.pi.row(col).dot(tau.row(k));
    Eigen::MatrixXd Q = XtX / v;
    Q.diagonal().array() += 1.0 / state_.effects.gamma;
    Eigen::VectorXd h = X.transpose() * state_.Z.col(col) / v;
    return gaussian_from_precision(Q, h, "effect proposal");
  }

  double log_graph_prior(const Dag& dag) const { return log_prior_graph(dag, state_.r, hp_); }

  /// Log of q(reverse move) / q(forward move) for the move-type and pair choice.
  double move_selection_log_ratio(EdgeOp op, int edges) const {
    const double N = static_cast<double>(state_.p()) * (state_.p() - 1);
    const double s = edges;
    switch (op) {
      case EdgeOp::add:
        return std::log(cfg_.weight_remove / (s + 1.0)) - std::log(cfg_.weight_add / (N - s));
      case EdgeOp::remove:
        return std::log(cfg_.weight_add / (N - s + 1.0)) - std::log(cfg_.weight_remove / s);
      case EdgeOp::reverse:
        return 0.0;
    }
    return 0.0;
  }

  /// Builds the proposal for `op` on edge l -> j, drawing any auxiliary
  /// variables it needs. Infeasible (cyclic) proposals have feasible = false.
  EdgeProposal propose_edge(EdgeOp op, int j, int l, Rng& rng) const { return build_edge_proposal(op, j, l, &rng, nullptr); }

  /// Scores a proposal whose new effect rows are given rather than drawn:
  /// rows[a][k] is the stacked row k of affected node a (mixture-marginal
  /// kernel only).
  EdgeProposal score_edge_move(EdgeOp op, int j, int l, const std::vector<std::vector<Eigen::VectorXd>>& rows) const {
    return build_edge_proposal(op, j, l, nullptr, &rows);
  }

  /// Stacked effect rows of node a under its current parents.
  std::vector<Eigen::VectorXd> current_rows(int a) const {
    const int K = state_.K();
    const auto parents = state_.dag.parents(a);
    std::vector<Eigen::VectorXd> out(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
      Eigen::VectorXd b(static_cast<Eigen::Index>(parents.size()) * K);
      for (std::size_t q = 0; q < parents.size(); ++q)
        b.segment(static_cast<Eigen::Index>(q) * K, K) = state_.effects.block(a, parents[q]).row(k).transpose();
      out[static_cast<std::size_t>(k)] = b;
    }
    return out;
  }

 private:
  EdgeProposal build_edge_proposal(EdgeOp op, int j, int l, Rng* rng,
                                   const std::vector<std::vector<Eigen::VectorXd>>* given) const {
    EdgeProposal prop;
    prop.op = op;
    prop.j = j;
    prop.l = l;
    auto next = edge_delta(state_.dag, j, l, op);
    if (!next) return prop;
    prop.feasible = true;
    prop.dag = *next;
    prop.affected = op == EdgeOp::reverse ? std::vector<int>{j, l} : std::vector<int>{j};
    prop.log_target_ratio = log_graph_prior(prop.dag) - log_graph_prior(state_.dag);
    prop.log_proposal_ratio = move_selection_log_ratio(op, state_.dag.edge_count());

    if (cfg_.edge_kernel == EdgeKernel::collapsed_slab) {
      for (int a : prop.affected)
        prop.log_target_ratio += node_log_marginal(a, prop.dag.parents(a)) - node_log_marginal(a, state_.dag.parents(a));
      return prop;
    }

    const int K = state_.K();
    for (std::size_t ai = 0; ai < prop.affected.size(); ++ai) {
      const int a = prop.affected[ai];
      const auto old_parents = state_.dag.parents(a);
      const auto new_parents = prop.dag.parents(a);
      const Eigen::MatrixXd X_old = parent_design(old_parents), X_new = parent_design(new_parents);
      const Eigen::MatrixXd XtX_old = X_old.transpose() * X_old, XtX_new = X_new.transpose() * X_new;
      const Eigen::MatrixXd tau_old = state_.noise.tau.middleRows(a * K, K);
      Eigen::MatrixXd tau_new = tau_old;
      for (int k = 0; k < K; ++k) {
        const double scale = residual_scale(a, k, X_new) / residual_scale(a, k, X_old);
        tau_new.row(k) *= scale;
        prop.log_jacobian += static_cast<double>(tau_old.cols()) * std::log(scale);
      }
      const std::vector<Eigen::VectorXd> beta_old = current_rows(a);
      std::vector<Eigen::VectorXd> beta_new(static_cast<std::size_t>(K));
      double log_q_forward = 0.0, log_q_backward = 0.0;
      for (int k = 0; k < K; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        log_q_backward += effect_row_proposal(a, k, X_old, XtX_old, tau_old).log_density(beta_old[kk]);
        GaussianConditional fwd = effect_row_proposal(a, k, X_new, XtX_new, tau_new);
        if (given) {
          beta_new[kk] = (*given)[ai][kk];
          if (beta_new[kk].size() != fwd.dim()) throw InvalidConfiguration("given effect row has the wrong length");
        } else {
          beta_new[kk] = fwd.sample(*rng);
        }
        log_q_forward += fwd.log_density(beta_new[kk]);
      }
      auto slab = [&](const std::vector<Eigen::VectorXd>& beta) {
        double out = 0.0;
        for (const auto& b : beta)
          out += -0.5 * static_cast<double>(b.size()) * (kLogTwoPi + std::log(state_.effects.gamma)) -
                 0.5 * b.squaredNorm() / state_.effects.gamma;
        return out;
      };
      auto tau_prior = [&](const Eigen::MatrixXd& tau) {
        double out = 0.0;
        for (Eigen::Index r = 0; r < tau.rows(); ++r)
          for (Eigen::Index m = 0; m < tau.cols(); ++m) out += log_inv_gamma_pdf(tau(r, m), hp_.a_tau, hp_.b_tau);
        return out;
      };
      prop.log_target_ratio += node_mixture_loglik(a, X_new, beta_new, tau_new) -
                               node_mixture_loglik(a, X_old, beta_old, tau_old) + slab(beta_new) - slab(beta_old) +
                               tau_prior(tau_new) - tau_prior(tau_old);
      prop.log_proposal_ratio += log_q_backward - log_q_forward;

      std::vector<std::pair<int, Eigen::MatrixXd>> blocks;
      for (std::size_t q = 0; q < new_parents.size(); ++q) {
        Eigen::MatrixXd B(K, K);
        for (int k = 0; k < K; ++k)
          B.row(k) = beta_new[static_cast<std::size_t>(k)].segment(static_cast<Eigen::Index>(q) * K, K).transpose();
        blocks.emplace_back(new_parents[q], B);
      }
      prop.blocks.push_back(std::move(blocks));
      prop.tau.push_back(std::move(tau_new));
    }
    return prop;
  }

 public:
  /// Commits an accepted proposal. The collapsed kernel draws the affected
  /// nodes' slab blocks from their conditionals here.
  void apply_edge_proposal(const EdgeProposal& prop, Rng& rng) {
    const int K = state_.K();
    for (int a : prop.affected)
      for (int l : state_.dag.parents(a)) state_.effects.block(a, l).setZero();
    state_.dag = prop.dag;
    if (cfg_.edge_kernel == EdgeKernel::collapsed_slab) {
      for (int a : prop.affected) {
        auto parents = state_.dag.parents(a);
        if (parents.empty()) continue;
        for (int k = 0; k < K; ++k) set_effect_row(a, k, parents, effect_row_conditional(a, k, parents).sample(rng));
      }
      return;
    }
    for (std::size_t q = 0; q < prop.affected.size(); ++q) {
      const int a = prop.affected[q];
      for (const auto& [l, B] : prop.blocks[q]) state_.effects.block(a, l) = B;
      state_.noise.tau.middleRows(a * K, K) = prop.tau[q];
    }
  }

  /// One Metropolis-Hastings edge move. Returns whether the graph changed.
  bool edge_move(Rng& rng) {
    const int p = state_.p();
    if (p < 2) return false;
    const double total = cfg_.weight_add + cfg_.weight_remove + cfg_.weight_reverse;
    const double u = rand::uniform(rng) * total;
    const EdgeOp op = u < cfg_.weight_add ? EdgeOp::add
                      : u < cfg_.weight_add + cfg_.weight_remove ? EdgeOp::remove
                                                                 : EdgeOp::reverse;
    std::vector<std::pair<int, int>> candidates;
    for (int j = 0; j < p; ++j)
      for (int l = 0; l < p; ++l)
        if (j != l && state_.dag.has_edge(j, l) == (op != EdgeOp::add)) candidates.emplace_back(j, l);
    if (candidates.empty()) return false;
    const auto [j, l] = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
    const int slot = static_cast<int>(op);
    ++diag_.proposed[slot];
    EdgeProposal prop = propose_edge(op, j, l, rng);
    if (!prop.feasible) {
      ++diag_.cycle_rejections;
      return false;
    }
    const double log_a = prop.log_acceptance();
    if (std::isnan(log_a)) throw NumericalError("edge move produced a NaN acceptance ratio");
    if (std::log(rand::uniform(rng)) < log_a) {
      apply_edge_proposal(prop, rng);
      ++diag_.accepted[slot];
      return true;
    }
    return false;
  }

  void update_edges(Rng& rng) {
    const int moves = cfg_.resolved_edge_moves(state_.p());
    for (int t = 0; t < moves; ++t) edge_move(rng);
    // The mixture-marginal kernel sums the assignments out; redraw them so the
    // next conditional steps see assignments consistent with the new graph.
    if (cfg_.edge_kernel == EdgeKernel::mixture_marginal && cfg_.update.mixture) update_assignments(rng);
  }

  // ---------------------------------------------------------------- r

  std::pair<double, double> r_conditional() const {
    const double s = state_.dag.edge_count();
    const double N = static_cast<double>(state_.p()) * (state_.p() - 1);
    return {hp_.a_r + s, hp_.b_r + N - s};
  }

  void update_r(Rng& rng) {
    if (hp_.marginalize_r) return;
    auto [a, b] = r_conditional();
    double r = rand::beta(rng, a, b);
    state_.r = std::clamp(r, 1e-300, 1.0 - 1e-16);
  }

  // ---------------------------------------------------------------- basis

  /// Unconstrained Gaussian conditional of Atilde_k given everything else.
  GaussianConditional basis_conditional(int k) const {
    const int L = static_cast<int>(state_.basis.L()), K = state_.K();
    const Eigen::VectorXd s = state_.basis.prior_variance(k);
    Eigen::MatrixXd Q = s.cwiseInverse().asDiagonal();
    Q(0, 0) = Q(1, 1) = 1.0 / hp_.flat_variance;
    Eigen::VectorXd h = Eigen::VectorXd::Zero(L);
    std::vector<double> weight(design_.grid_count(), 0.0);
    std::vector<Eigen::VectorXd> other(design_.grid_count(), Eigen::VectorXd::Zero(L));
    const Eigen::MatrixXd& A = state_.basis.atilde;
    for (int i = 0; i < state_.n(); ++i)
      for (int j = 0; j < state_.p(); ++j) {
        const auto& cs = design_.stats(i, j);
        const double zk = state_.Z(i, j * K + k);
        const double w = zk / state_.sigma[j];
        weight[static_cast<std::size_t>(cs.grid_id)] += zk * w;
        h.noalias() += w * cs.btw;
        Eigen::VectorXd zo = state_.Z.row(i).segment(j * K, K).transpose();
        zo[k] = 0.0;
        other[static_cast<std::size_t>(cs.grid_id)].noalias() += w * (A * zo);
      }
    for (std::size_t g = 0; g < design_.grid_count(); ++g) {
      const auto& btb = design_.btb(static_cast<int>(g));
      Q.noalias() += weight[g] * btb;
      h.noalias() -= btb * other[g];
    }
    return gaussian_from_precision(0.5 * (Q + Q.transpose()), h, "basis");
  }

  TruncatedGamma lambda_conditional(int k) const {
    const auto& ab = state_.basis;
    TruncatedGamma tg;
    tg.shape = 0.5 * static_cast<double>(ab.L() - 2) + 1.0;
    tg.rate = 0.5 * ab.roughness(k);
    tg.lower = k + 1 < ab.K() ? ab.lambda[k + 1] : hp_.lambda_lower;
    tg.upper = k > 0 ? ab.lambda[k - 1] : hp_.lambda_upper;
    return tg;
  }

  /// Draws Atilde_k from its Gaussian conditional restricted to the
  /// J-orthogonal complement of the other basis vectors, then J-normalizes.
  Eigen::VectorXd draw_basis_vector(int k, Rng& rng) {
    const auto& A = state_.basis.atilde;
    const auto& J = state_.splines->J();
    const int K = state_.K();
    GaussianConditional g = basis_conditional(k);
    Eigen::MatrixXd others(A.rows(), K - 1);
    for (int h = 0, c = 0; h < K; ++h)
      if (h != k) others.col(c++) = A.col(h);
    const Eigen::MatrixXd C = (J * others).transpose();  // (K-1) x L
    Eigen::MatrixXd cov_ct;
    Eigen::LDLT<Eigen::MatrixXd> gram;
    if (K > 1) {
      cov_ct = g.llt.solve(C.transpose());
      gram.compute(C * cov_ct);
    }
    for (int attempt = 0; attempt < 100; ++attempt) {
      Eigen::VectorXd x = g.sample(rng);
      if (K > 1) x -= cov_ct * gram.solve(C * x);  // conditioning by kriging
      try {
        return project_and_normalize(x, others, J, static_cast<std::size_t>(k));
      } catch (const CollinearityError&) {
        ++diag_.collinearity_redraws;
      }
    }
    ++diag_.collinearity_failures;
    return A.col(k);
  }

  void update_basis(Rng& rng) {
    for (int k = 0; k < state_.K(); ++k) {
      state_.basis.atilde.col(k) = draw_basis_vector(k, rng);
      state_.basis.lambda[k] = lambda_conditional(k).sample(rng);
    }
    projections_.refresh(design_, state_.basis.atilde);
  }

  // ---------------------------------------------------------------- sigma, gamma

  /// Residual sum of squares of function j's observations.
  double observation_rss(int j) const {
    const int K = state_.K();
    double rss = 0.0;
    for (int i = 0; i < state_.n(); ++i) {
      const auto& cs = design_.stats(i, j);
      Eigen::VectorXd z = state_.Z.row(i).segment(j * K, K).transpose();
      rss += cs.wtw - 2.0 * z.dot(projections_.phitw(i, j)) + z.dot(projections_.phitphi(cs.grid_id) * z);
    }
    return std::max(rss, 0.0);
  }

  InvGamma sigma_conditional(int j) const {
    return {hp_.a_sigma + 0.5 * static_cast<double>(design_.observation_count(j)),
            hp_.b_sigma + 0.5 * observation_rss(j)};
  }

  InvGamma gamma_conditional() const {
    double count = 0.0, ss = 0.0;
    for (int j = 0; j < state_.p(); ++j)
      for (int l : state_.dag.parents(j)) {
        count += static_cast<double>(state_.effects.block(j, l).size());
        ss += state_.effects.block(j, l).squaredNorm();
      }
    return {hp_.a_gamma + 0.5 * count, hp_.b_gamma + 0.5 * ss};
  }

  void update_sigma_gamma(Rng& rng) {
    if (cfg_.update.sigma)
      for (int j = 0; j < state_.p(); ++j) {
        InvGamma ig = sigma_conditional(j);
        double s = rand::inv_gamma(rng, ig.shape, ig.scale);
        if (std::isfinite(s) && s > 0.0) state_.sigma[j] = s;
      }
    if (cfg_.update.gamma) {
      InvGamma ig = gamma_conditional();
      double g = rand::inv_gamma(rng, ig.shape, ig.scale);
      if (std::isfinite(g) && g > 0.0) state_.effects.gamma = g;
    }
  }

  // ---------------------------------------------------------------- sweep

  /// Z, mixture, effects, edges, r, basis and lambda, then sigma and gamma.
  void sweep(Rng& rng) {
    const auto& u = cfg_.update;
    if (u.Z) update_Z(rng);
    if (u.mixture) update_assignments_and_mixture(rng);
    if (u.effects) update_effects(rng);
    if (u.edges) update_edges(rng);
    if (u.r) update_r(rng);
    if (u.basis) update_basis(rng);
    if (u.sigma || u.gamma) update_sigma_gamma(rng);
    if (cfg_.check_invariants) check_invariants();
  }

  void check_invariants() {
    ++diag_.invariant_checks;
    if (!is_acyclic(state_.dag.adjacency())) throw InvalidState("sampler produced a cyclic graph");
    if (!state_.basis.lambda_ordered()) throw InvalidState("smoothness parameters lost their ordering");
    if (state_.basis.max_orthonormality_error(state_.splines->J()) > 1e-10)
      throw InvalidState("basis lost J-orthonormality");
  }

  /// Observation log-likelihood from sufficient statistics.
  double loglik_observation_fast() const {
    double total = 0.0;
    for (int j = 0; j < state_.p(); ++j)
      total += -0.5 * static_cast<double>(design_.observation_count(j)) * (kLogTwoPi + std::log(state_.sigma[j])) -
               0.5 * observation_rss(j) / state_.sigma[j];
    return total;
  }

  /// Complete-data log joint density of the current state.
  double log_joint() const {
    double prior = log_prior(state_, hp_);
    if (!std::isfinite(prior)) return prior;
    return loglik_observation_fast() + loglik_latent_given_assignments(state_) + prior;
  }

 private:
  const FunctionalDataset* data_;
  Hyperparameters hp_;
  McmcConfig cfg_;
  ModelState state_;
  ObservationDesign design_;
  BasisProjections projections_;
  SamplerDiagnostics diag_;
};

// ------------------------------------------------------------------ initialization

/// Starting state: empty graph, basis from a functional PCA of smoothed
/// curves, Z by ridge regression, uniform random assignments.
inline ModelState initialize_state(const FunctionalDataset& data, const Hyperparameters& hp, Rng& rng) {
  hp.validate();
  const int n = data.n(), p = data.p(), K = hp.K, L = hp.L, M = hp.M;
  auto splines = std::make_shared<const PenaltySystem>(BSplineBasis(L, 4));
  const auto& J = splines->J();
  ModelState s;
  s.splines = splines;
  s.dag = Dag(p);
  s.effects = EffectBlocks(p, K, 1.0);
  s.r = hp.a_r / (hp.a_r + hp.b_r);

  ObservationDesign design(data, *splines);
  std::vector<Eigen::VectorXd> candidates;
  if (n > 0) {
    FunctionalPca pca = functional_pca(smooth_curves(design, *splines), *splines);
    for (Eigen::Index k = 0; k < L; ++k)
      if (pca.eigenvalues[k] > 1e-12 * std::max(1e-300, pca.eigenvalues[0])) candidates.push_back(pca.eigenfunctions.col(k));
    if (static_cast<int>(candidates.size()) > K) candidates.resize(static_cast<std::size_t>(K));
  }
  // Pad with smooth coordinate directions when the data span fewer than K.
  for (int e = 0; static_cast<int>(candidates.size()) < K + L && e < L; ++e)
    candidates.push_back(Eigen::VectorXd::Unit(L, e));
  Eigen::MatrixXd A(L, K);
  int filled = 0;
  for (const auto& v : candidates) {
    if (filled == K) break;
    try {
      A.col(filled) = project_and_normalize(v, A.leftCols(filled), J, static_cast<std::size_t>(filled));
      ++filled;
    } catch (const CollinearityError&) {
    }
  }
  if (filled < K) throw NumericalError("could not initialize K orthonormal basis functions");
  // Smoothest first, matching the decreasing lambda ordering.
  std::vector<int> idx(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) idx[static_cast<std::size_t>(k)] = k;
  auto rough = [&](int k) { return A.col(k).tail(L - 2).squaredNorm(); };
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return rough(a) < rough(b); });
  s.basis.atilde.resize(L, K);
  for (int k = 0; k < K; ++k) s.basis.atilde.col(k) = A.col(idx[static_cast<std::size_t>(k)]);
  s.basis.atilde = orthonormalize(s.basis.atilde, J);
  s.basis.lambda.resize(K);
  for (int k = 0; k < K; ++k) {
    double lam = static_cast<double>(L - 2) / std::max(s.basis.roughness(k), 1e-300);
    lam = std::clamp(lam, hp.lambda_lower * 10.0, hp.lambda_upper / 10.0);
    if (k > 0) lam = std::min(lam, s.basis.lambda[k - 1] * 0.9);
    s.basis.lambda[k] = std::max(lam, hp.lambda_lower * std::pow(2.0, K - k));
  }

  BasisProjections proj;
  proj.refresh(design, s.basis.atilde);
  s.Z.resize(n, p * K);
  s.sigma.resize(p);
  for (int j = 0; j < p; ++j) {
    double rss = 0.0, wtw = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto& cs = design.stats(i, j);
      Eigen::MatrixXd G = proj.phitphi(cs.grid_id);
      G.diagonal().array() += 1e-6;
      Eigen::VectorXd z = G.ldlt().solve(proj.phitw(i, j));
      s.Z.row(i).segment(j * K, K) = z.transpose();
      rss += cs.wtw - 2.0 * z.dot(proj.phitw(i, j)) + z.dot(proj.phitphi(cs.grid_id) * z);
      wtw += cs.wtw;
    }
    const double count = static_cast<double>(design.observation_count(j));
    s.sigma[j] = count > 0 ? std::max(rss / count, 1e-6 * (wtw / count) + 1e-12) : 1.0;
  }

  s.noise.pi = Eigen::MatrixXd::Constant(p * K, M, 1.0 / M);
  s.noise.tau.resize(p * K, M);
  for (int col = 0; col < p * K; ++col) {
    double v = n > 0 ? s.Z.col(col).squaredNorm() / n : 1.0;
    v = std::max(v, 1e-6);
    for (int m = 0; m < M; ++m)
      s.noise.tau(col, m) = M == 1 ? v : v * std::pow(4.0, 2.0 * m / (M - 1) - 1.0);  // v/4 .. 4v
  }
  s.noise.c.resize(n, p * K);
  for (int i = 0; i < n; ++i)
    for (int col = 0; col < p * K; ++col) s.noise.c(i, col) = std::uniform_int_distribution<int>(0, M - 1)(rng);
  return s;
}

// ------------------------------------------------------------------ summaries

struct Interval {
  double mean = 0.0, lower = 0.0, upper = 0.0;
};

inline Interval summarize_draws(std::vector<double> v) {
  Interval out;
  if (v.empty()) return out;
  double sum = 0.0;
  for (double x : v) sum += x;
  out.mean = sum / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  auto q = [&](double prob) {
    double pos = prob * static_cast<double>(v.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  out.lower = q(0.025);
  out.upper = q(0.975);
  return out;
}

struct PosteriorSummary {
  int p = 0, K = 0, L = 0, M = 0;
  int retained = 0;
  Eigen::MatrixXd edge_ppi;                 // p x p, (j, l) = P(l -> j)
  std::vector<Eigen::MatrixXd> B_mean;      // index j*p + l, mean given inclusion
  std::vector<Eigen::MatrixXd> basis_draws; // retained Atilde (L x K)
  std::vector<Eigen::VectorXd> lambda_draws;
  std::vector<Interval> sigma_summary;
  Interval gamma_summary;
  Eigen::MatrixXd pi_mean, tau_mean;        // pK x M
  std::vector<Interval> mixture_variance;   // pK, label-invariant sum_m pi tau
  std::vector<double> log_joint_trace;      // one per retained draw
  std::vector<int> trace_iterations;
  SamplerDiagnostics diagnostics;
  std::shared_ptr<const PenaltySystem> splines;
  ModelState final_state;
  std::string final_rng;
  std::uint64_t seed = 0;

  const Eigen::MatrixXd& effect_mean(int j, int l) const { return B_mean[static_cast<std::size_t>(j * p + l)]; }
};

/// Runs one chain from `init` (or the default initialization) and
/// summarizes the thinned post-burn-in draws.
inline PosteriorSummary run_chain(const FunctionalDataset& data, const Hyperparameters& hp, const McmcConfig& cfg,
                                  Rng& rng, std::optional<ModelState> init = std::nullopt,
                                  const std::function<void(int, const Sampler&)>& on_sweep = {}) {
  cfg.validate();
  ModelState start = init ? std::move(*init) : initialize_state(data, hp, rng);
  Sampler sampler(data, hp, cfg, std::move(start));
  const int p = data.p(), K = sampler.state().K();
  const int M = sampler.state().noise.M();
  PosteriorSummary out;
  out.p = p;
  out.K = K;
  out.L = static_cast<int>(sampler.state().basis.L());
  out.M = M;
  out.seed = cfg.seed;
  out.splines = sampler.state().splines;
  out.edge_ppi = Eigen::MatrixXd::Zero(p, p);
  out.B_mean.assign(static_cast<std::size_t>(p) * static_cast<std::size_t>(p), Eigen::MatrixXd::Zero(K, K));
  out.pi_mean = Eigen::MatrixXd::Zero(p * K, M);
  out.tau_mean = Eigen::MatrixXd::Zero(p * K, M);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(p, p);
  std::vector<std::vector<double>> sigma_draws(static_cast<std::size_t>(p)), mixvar_draws(static_cast<std::size_t>(p * K));
  std::vector<double> gamma_draws;

  const int burn = cfg.resolved_burn_in();
  for (int it = 0; it < cfg.iterations; ++it) {
    sampler.sweep(rng);
    if (on_sweep) on_sweep(it, sampler);
    if (it < burn || (it - burn + 1) % cfg.thin != 0) continue;
    const ModelState& s = sampler.state();
    if (!is_acyclic(s.dag.adjacency())) throw InvalidState("retained draw is cyclic");
    ++out.retained;
    for (int j = 0; j < p; ++j)
      for (int l = 0; l < p; ++l)
        if (s.dag.has_edge(j, l)) {
          counts(j, l) += 1.0;
          out.B_mean[static_cast<std::size_t>(j * p + l)] += s.effects.block(j, l);
        }
    out.basis_draws.push_back(s.basis.atilde);
    out.lambda_draws.push_back(s.basis.lambda);
    for (int j = 0; j < p; ++j) sigma_draws[static_cast<std::size_t>(j)].push_back(s.sigma[j]);
    gamma_draws.push_back(s.effects.gamma);
    out.pi_mean += s.noise.pi;
    out.tau_mean += s.noise.tau;
    for (int col = 0; col < p * K; ++col)
      mixvar_draws[static_cast<std::size_t>(col)].push_back(s.noise.pi.row(col).dot(s.noise.tau.row(col)));
    out.log_joint_trace.push_back(sampler.log_joint());
    out.trace_iterations.push_back(it);
  }
  if (out.retained > 0) {
    out.edge_ppi = counts / out.retained;
    for (int j = 0; j < p; ++j)
      for (int l = 0; l < p; ++l)
        if (counts(j, l) > 0) out.B_mean[static_cast<std::size_t>(j * p + l)] /= counts(j, l);
    out.pi_mean /= out.retained;
    out.tau_mean /= out.retained;
  }
  for (auto& d : sigma_draws) out.sigma_summary.push_back(summarize_draws(d));
  for (auto& d : mixvar_draws) out.mixture_variance.push_back(summarize_draws(d));
  out.gamma_summary = summarize_draws(gamma_draws);
  out.diagnostics = sampler.diagnostics();
  out.final_state = sampler.state();
  out.final_rng = serialize_rng(rng);
  return out;
}

/// Independent chains on named sub-streams of cfg.seed, run concurrently.
inline std::vector<PosteriorSummary> run_chains(const FunctionalDataset& data, const Hyperparameters& hp,
                                                const McmcConfig& cfg) {
  cfg.validate();
  std::vector<PosteriorSummary> out(static_cast<std::size_t>(cfg.chains));
  std::vector<std::exception_ptr> errors(out.size());
  auto work = [&](std::size_t c) {
    try {
      Rng rng = make_stream(cfg.seed, "chain", c);
      out[c] = run_chain(data, hp, cfg, rng);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (out.size() == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t c = 0; c < out.size(); ++c) threads.emplace_back(work, c);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline Eigen::MatrixXd average_ppi(const std::vector<PosteriorSummary>& chains) {
  if (chains.empty()) throw InvalidConfiguration("no chains to average");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(chains.front().p, chains.front().p);
  for (const auto& c : chains) out += c.edge_ppi;
  return out / static_cast<double>(chains.size());
}

struct MedianProbabilityModel {
  Dag dag;
  std::vector<std::pair<int, int>> dropped;  // (j, l) edges removed to break cycles
};

/// Edges with inclusion probability >= threshold; any cycle is broken by
/// dropping its lowest-probability edge.
inline MedianProbabilityModel median_probability_model(const Eigen::MatrixXd& ppi, double threshold = 0.5) {
  const auto p = ppi.rows();
  Adjacency e = Adjacency::Zero(p, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index l = 0; l < p; ++l)
      if (j != l && ppi(j, l) >= threshold) e(j, l) = 1;
  MedianProbabilityModel out;
  for (auto cycle = find_cycle(e); !cycle.empty(); cycle = find_cycle(e)) {
    auto worst = *std::min_element(cycle.begin(), cycle.end(), [&](auto a, auto b) {
      return ppi(a.first, a.second) < ppi(b.first, b.second);
    });
    e(worst.first, worst.second) = 0;
    out.dropped.push_back(worst);
  }
  if (!out.dropped.empty())
    std::cerr << "warning: median probability model was cyclic; dropped " << out.dropped.size() << " edge(s)\n";
  out.dag = Dag::from_adjacency(e);
  return out;
}

inline MedianProbabilityModel median_probability_model(const PosteriorSummary& summary, double threshold = 0.5) {
  return median_probability_model(summary.edge_ppi, threshold);
}

}  // namespace fdag
