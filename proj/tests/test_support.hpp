#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include "fdag/fdag.hpp"

namespace testing_support {

using namespace fdag;

/// Random curves with uneven grids of 1..max_points points.
inline FunctionalDataset random_dataset(int n, int p, Rng& rng, int max_points = 6) {
  std::vector<Curve> curves;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) {
      Curve c;
      const int m = std::uniform_int_distribution<int>(1, max_points)(rng);
      for (int t = 0; t < m; ++t) c.grid.push_back(rand::uniform(rng));
      std::sort(c.grid.begin(), c.grid.end());
      for (int t = 0; t < m; ++t) c.values.push_back(rand::normal(rng));
      curves.push_back(std::move(c));
    }
  return FunctionalDataset(n, p, std::move(curves));
}

/// A valid state with every block randomized. Edges are drawn with
/// probability `edge_prob` over a random ordering.
inline ModelState random_state(int n, int p, int K, int L, int M, Rng& rng, double edge_prob = 0.5) {
  ModelState s;
  s.splines = std::make_shared<const PenaltySystem>(BSplineBasis(L, 4));
  s.dag = random_er_dag(p, edge_prob, rng);
  s.effects = EffectBlocks(p, K, 0.5 + rand::uniform(rng));
  for (int j = 0; j < p; ++j)
    for (int l : s.dag.parents(j))
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) s.effects.block(j, l)(a, b) = 0.5 * rand::normal(rng);
  s.noise.pi.resize(p * K, M);
  s.noise.tau.resize(p * K, M);
  for (int col = 0; col < p * K; ++col) {
    s.noise.pi.row(col) = rand::dirichlet(rng, Eigen::VectorXd::Constant(M, 2.0)).transpose();
    for (int m = 0; m < M; ++m) s.noise.tau(col, m) = 0.2 + 2.0 * rand::uniform(rng);
  }
  s.noise.c.resize(n, p * K);
  for (int i = 0; i < n; ++i)
    for (int col = 0; col < p * K; ++col) s.noise.c(i, col) = std::uniform_int_distribution<int>(0, M - 1)(rng);
  s.Z.resize(n, p * K);
  for (int i = 0; i < n; ++i)
    for (int col = 0; col < p * K; ++col) s.Z(i, col) = rand::normal(rng);
  s.sigma.resize(p);
  for (int j = 0; j < p; ++j) s.sigma[j] = 0.3 + rand::uniform(rng);
  s.r = 0.1 + 0.8 * rand::uniform(rng);
  Eigen::MatrixXd A(L, K);
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < L; ++l) A(l, k) = rand::normal(rng);
  s.basis.atilde = orthonormalize(A, s.splines->J());
  s.basis.lambda.resize(K);
  double lam = 50.0 * (1.0 + rand::uniform(rng));
  for (int k = 0; k < K; ++k) {
    s.basis.lambda[k] = lam;
    lam *= 0.2 + 0.6 * rand::uniform(rng);
  }
  return s;
}

}  // namespace testing_support
