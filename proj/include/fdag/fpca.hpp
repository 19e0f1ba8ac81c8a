#pragma once

// Penalized-spline smoothing of the observed curves and a functional PCA of
// the pooled smooths. Used to choose K and to initialize the adaptive basis.

#include <algorithm>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "fdag/dataset.hpp"
#include "fdag/design.hpp"
#include "fdag/errors.hpp"
#include "fdag/splines.hpp"

namespace fdag {

/// Smoothing parameter on the integrated scale; the per-curve penalty weight
/// is this times the number of grid points.
inline constexpr double kDefaultSmoothing = 1e-5;

/// Coefficients (in btilde coordinates) of a penalized spline fit of every
/// curve, one row per (subject, function) in subject-major order.
inline Eigen::MatrixXd smooth_curves(const ObservationDesign& design, const PenaltySystem& ps,
                                     double smoothing = kDefaultSmoothing) {
  const int L = ps.size();
  Eigen::VectorXd pen = Eigen::VectorXd::Ones(L);
  pen[0] = pen[1] = 0.0;
  Eigen::MatrixXd coef(static_cast<Eigen::Index>(design.n()) * design.p(), L);
  for (int i = 0; i < design.n(); ++i)
    for (int j = 0; j < design.p(); ++j) {
      const auto& s = design.stats(i, j);
      Eigen::MatrixXd A = design.btb(s.grid_id);
      A.diagonal() += smoothing * static_cast<double>(s.m) * pen;
      A.diagonal().array() += 1e-10 * (1.0 + A.diagonal().maxCoeff());
      coef.row(static_cast<Eigen::Index>(i) * design.p() + j) = A.ldlt().solve(s.btw).transpose();
    }
  return coef;
}

struct FunctionalPca {
  Eigen::VectorXd eigenvalues;    // descending, nonnegative
  Eigen::MatrixXd eigenfunctions; // L x L, btilde coordinates, J-orthonormal columns

  /// Fraction of the (uncentered) pooled variation captured by the first k components.
  double fve(int k) const {
    const double total = eigenvalues.sum();
    if (!(total > 0.0)) return 1.0;
    return eigenvalues.head(std::min<Eigen::Index>(k, eigenvalues.size())).sum() / total;
  }
};

/// Eigen-decomposition of the pooled second-moment operator of smoothed
/// curves, carried out exactly in coefficient space under the J metric.
inline FunctionalPca functional_pca(const Eigen::MatrixXd& coef, const PenaltySystem& ps) {
  const Eigen::Index N = coef.rows();
  if (N == 0) throw InvalidConfiguration("functional PCA needs at least one curve");
  const Eigen::MatrixXd G = coef.transpose() * coef / static_cast<double>(N);
  Eigen::LLT<Eigen::MatrixXd> llt(ps.J());
  const Eigen::MatrixXd LJ = llt.matrixL();
  Eigen::MatrixXd S = LJ.transpose() * G * LJ;
  S = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  FunctionalPca out;
  out.eigenvalues = eig.eigenvalues().reverse().cwiseMax(0.0);
  Eigen::MatrixXd V = eig.eigenvectors().rowwise().reverse();
  out.eigenfunctions = LJ.transpose().triangularView<Eigen::Upper>().solve(V);
  return out;
}

struct KSelection {
  int K = 0;
  std::vector<int> candidates;
  std::vector<double> fve;  // aligned with candidates
};

/// Smallest candidate whose fraction of variance explained reaches
/// `threshold`; the largest candidate when none does.
inline KSelection select_K(const FunctionalDataset& data, const PenaltySystem& ps, std::vector<int> candidates,
                           double threshold = 0.9) {
  if (candidates.empty()) throw InvalidConfiguration("select_K: no candidate values");
  if (data.n() == 0) throw InvalidConfiguration("select_K: dataset is empty");
  std::sort(candidates.begin(), candidates.end());
  if (candidates.front() < 1) throw InvalidConfiguration("select_K: candidates must be positive");
  ObservationDesign design(data, ps);
  FunctionalPca pca = functional_pca(smooth_curves(design, ps), ps);
  KSelection out;
  out.candidates = candidates;
  out.K = candidates.back();
  bool found = false;
  for (int k : candidates) {
    double f = pca.fve(k);
    out.fve.push_back(f);
    if (!found && f >= threshold) {
      out.K = k;
      found = true;
    }
  }
  return out;
}

}  // namespace fdag
