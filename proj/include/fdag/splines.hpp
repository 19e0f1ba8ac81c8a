#pragma once

// Cubic B-spline machinery behind the shared adaptive basis:
//
//   phi_k(w) = Atilde_k' btilde(w),
//   btilde(w) = (1, w, b(w)' U_P D_P^{-1/2})',
//
// where b is an equally spaced clamped B-spline basis on [0, 1] and
// Omega = U D U' is the integrated squared second derivative penalty.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>

#include "fdag/errors.hpp"

namespace fdag {

/// Clamped B-spline basis with equally spaced interior knots on [0, 1].
class BSplineBasis {
 public:
  BSplineBasis() = default;

  BSplineBasis(int n_basis, int order) : n_basis_(n_basis), order_(order) {
    if (order < 2) throw InvalidConfiguration("B-spline order must be at least 2");
    if (n_basis < order)
      throw InvalidConfiguration("number of B-splines (" + std::to_string(n_basis) +
                                 ") must be at least the order (" + std::to_string(order) + ")");
    const int n_interior = n_basis - order;
    knots_.reserve(static_cast<std::size_t>(n_basis + order));
    for (int i = 0; i < order; ++i) knots_.push_back(0.0);
    for (int i = 1; i <= n_interior; ++i)
      knots_.push_back(static_cast<double>(i) / static_cast<double>(n_interior + 1));
    for (int i = 0; i < order; ++i) knots_.push_back(1.0);
  }

  int size() const { return n_basis_; }
  int order() const { return order_; }
  int degree() const { return order_ - 1; }
  const std::vector<double>& knots() const { return knots_; }

  /// Distinct breakpoints 0 = x_0 < ... < x_q = 1.
  std::vector<double> breakpoints() const {
    std::vector<double> out(knots_.begin() + order_ - 1, knots_.end() - order_ + 1);
    return out;
  }

  /// Greville abscissae; sum_l greville[l] b_l(w) = w.
  Eigen::VectorXd greville() const {
    Eigen::VectorXd g(n_basis_);
    for (int l = 0; l < n_basis_; ++l) {
      double s = 0.0;
      for (int r = 1; r < order_; ++r) s += knots_[static_cast<std::size_t>(l + r)];
      g[l] = s / (order_ - 1);
    }
    return g;
  }

  /// All basis functions (or their `deriv`-th derivatives) at x.
  Eigen::VectorXd evaluate(double x, int deriv = 0) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n_basis_);
    int span = find_span(x);
    Eigen::VectorXd local = local_derivatives(span, x, deriv);
    for (int r = 0; r < order_; ++r) out[span - degree() + r] = local[r];
    return out;
  }

  /// Design matrix: row m holds (b_1(x_m), ..., b_L(x_m)).
  Eigen::MatrixXd evaluate(std::span<const double> points, int deriv = 0) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(points.size()), n_basis_);
    for (std::size_t m = 0; m < points.size(); ++m) {
      int span = find_span(points[m]);
      Eigen::VectorXd local = local_derivatives(span, points[m], deriv);
      for (int r = 0; r < order_; ++r)
        out(static_cast<Eigen::Index>(m), span - degree() + r) = local[r];
    }
    return out;
  }

  /// Index s with knots[s] <= x < knots[s+1]; x = 1 maps to the last interval.
  int find_span(double x) const {
    if (!(x >= 0.0 && x <= 1.0))
      throw DomainError("B-spline evaluation point " + std::to_string(x) + " outside [0, 1]");
    const int last = n_basis_ - 1;
    if (x >= knots_[static_cast<std::size_t>(last + 1)]) return last;
    auto it = std::upper_bound(knots_.begin() + degree(), knots_.begin() + last + 1, x);
    return static_cast<int>(it - knots_.begin()) - 1;
  }

 private:
  // Nonzero basis values or derivatives on a span (The NURBS Book, A2.3).
  Eigen::VectorXd local_derivatives(int span, double x, int deriv) const {
    const int p = degree();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(order_);
    if (deriv > p) return out;
    const auto& U = knots_;
    Eigen::MatrixXd ndu(order_, order_);
    std::vector<double> left(static_cast<std::size_t>(order_)), right(static_cast<std::size_t>(order_));
    ndu(0, 0) = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = x - U[static_cast<std::size_t>(span + 1 - j)];
      right[j] = U[static_cast<std::size_t>(span + j)] - x;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        ndu(j, r) = right[r + 1] + left[j - r];
        double temp = ndu(r, j - 1) / ndu(j, r);
        ndu(r, j) = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      ndu(j, j) = saved;
    }
    if (deriv == 0) {
      for (int j = 0; j <= p; ++j) out[j] = ndu(j, p);
      return out;
    }
    Eigen::MatrixXd a(2, order_);
    for (int r = 0; r <= p; ++r) {
      int s1 = 0, s2 = 1;
      a(0, 0) = 1.0;
      double d = 0.0;
      for (int k = 1; k <= deriv; ++k) {
        d = 0.0;
        int rk = r - k, pk = p - k;
        if (r >= k) {
          a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
          d = a(s2, 0) * ndu(rk, pk);
        }
        int j1 = rk >= -1 ? 1 : -rk;
        int j2 = (r - 1 <= pk) ? k - 1 : p - r;
        for (int j = j1; j <= j2; ++j) {
          a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
          d += a(s2, j) * ndu(rk + j, pk);
        }
        if (r <= pk) {
          a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
          d += a(s2, k) * ndu(r, pk);
        }
        std::swap(s1, s2);
      }
      out[r] = d;
    }
    double factor = 1.0;  // p! / (p - deriv)!
    for (int k = 0; k < deriv; ++k) factor *= p - k;
    return out * factor;
  }

  int n_basis_ = 0;
  int order_ = 0;
  std::vector<double> knots_;
};

namespace detail {

// Integrates f(x) * g(x)' over [0, 1] knot interval by knot interval with a
// 10-point Gauss-Legendre rule, exact for piecewise polynomials of degree <= 19.
template <class RowFn>
Eigen::MatrixXd integrate_outer(const BSplineBasis& basis, RowFn&& row, Eigen::Index dim) {
  using Rule = boost::math::quadrature::gauss<double, 10>;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim, dim);
  const auto bp = basis.breakpoints();
  const auto& abscissa = Rule::abscissa();
  const auto& weights = Rule::weights();
  for (std::size_t s = 0; s + 1 < bp.size(); ++s) {
    const double a = bp[s], b = bp[s + 1];
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (std::size_t q = 0; q < abscissa.size(); ++q) {
      // The rule stores nonnegative abscissae; the origin appears once.
      const double nodes[2] = {mid - half * abscissa[q], mid + half * abscissa[q]};
      const int count = abscissa[q] == 0.0 ? 1 : 2;
      for (int side = 0; side < count; ++side) {
        Eigen::VectorXd v = row(nodes[side]);
        out.noalias() += (half * weights[q]) * v * v.transpose();
      }
    }
  }
  return 0.5 * (out + out.transpose());
}

}  // namespace detail

/// Roughness penalty Omega, its eigen-factorization and the reparameterized
/// basis btilde with Gram matrix J.
class PenaltySystem {
 public:
  PenaltySystem() = default;

  explicit PenaltySystem(BSplineBasis basis) : basis_(std::move(basis)) {
    const int L = basis_.size();
    if (L < 3) throw InvalidConfiguration("penalty system needs at least 3 B-splines");
    omega_ = detail::integrate_outer(
        basis_, [&](double x) { return basis_.evaluate(x, 2); }, L);
    gram_ = detail::integrate_outer(
        basis_, [&](double x) { return basis_.evaluate(x, 0); }, L);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(omega_);
    if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of Omega failed");
    // Descending order.
    D_ = eig.eigenvalues().reverse();
    U_ = eig.eigenvectors().rowwise().reverse();
    const double dmax = D_.maxCoeff();
    int n_small = 0;
    for (Eigen::Index l = 0; l < D_.size(); ++l)
      if (std::abs(D_[l]) < 1e-10 * dmax) ++n_small;
    if (n_small != 2)
      throw NumericalError("roughness penalty has " + std::to_string(L - n_small) +
                           " nonzero singular values; expected " + std::to_string(L - 2));
    U_P_ = U_.leftCols(L - 2);
    D_P_ = D_.head(L - 2);

    transform_.resize(L, L);
    transform_.col(0).setOnes();
    transform_.col(1) = basis_.greville();
    transform_.rightCols(L - 2) = U_P_ * D_P_.cwiseSqrt().cwiseInverse().asDiagonal();
    J_ = transform_.transpose() * gram_ * transform_;
    J_ = 0.5 * (J_ + J_.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(J_);
    if (llt.info() != Eigen::Success) throw NumericalError("Gram matrix J is not positive definite");
    transform_lu_ = transform_.partialPivLu();
  }

  const BSplineBasis& basis() const { return basis_; }
  int size() const { return basis_.size(); }

  const Eigen::MatrixXd& omega() const { return omega_; }
  /// Gram matrix of the raw B-splines, integral of b b'.
  const Eigen::MatrixXd& bspline_gram() const { return gram_; }
  const Eigen::MatrixXd& U() const { return U_; }
  const Eigen::VectorXd& D() const { return D_; }
  const Eigen::MatrixXd& U_P() const { return U_P_; }
  const Eigen::VectorXd& D_P() const { return D_P_; }
  const Eigen::MatrixXd& J() const { return J_; }
  /// R with btilde(w) = R' b(w).
  const Eigen::MatrixXd& transform() const { return transform_; }

  /// Rows btilde(w_m)' (or derivatives).
  Eigen::MatrixXd btilde(std::span<const double> points, int deriv = 0) const {
    return basis_.evaluate(points, deriv) * transform_;
  }
  Eigen::VectorXd btilde(double x, int deriv = 0) const {
    return transform_.transpose() * basis_.evaluate(x, deriv);
  }

  /// B-spline coefficients A with A' b = Atilde' btilde.
  Eigen::MatrixXd to_bspline(const Eigen::MatrixXd& atilde) const { return transform_ * atilde; }
  Eigen::MatrixXd from_bspline(const Eigen::MatrixXd& a) const { return transform_lu_.solve(a); }

 private:
  BSplineBasis basis_;
  Eigen::MatrixXd omega_, gram_, U_, U_P_, J_, transform_;
  Eigen::VectorXd D_, D_P_;
  Eigen::PartialPivLU<Eigen::MatrixXd> transform_lu_;
};

/// Large variance standing in for the flat prior on constant and linear parts.
inline constexpr double kFlatVariance = 1e8;
inline constexpr double kLambdaUpper = 1e8;
inline constexpr double kLambdaLower = 1e-8;

/// Data-adaptive orthonormal basis: column k of `atilde` holds Atilde_k.
struct AdaptiveBasis {
  Eigen::MatrixXd atilde;  // L x K
  Eigen::VectorXd lambda;  // K, strictly decreasing

  Eigen::Index K() const { return atilde.cols(); }
  Eigen::Index L() const { return atilde.rows(); }

  /// Diagonal of the prior covariance S_k.
  Eigen::VectorXd prior_variance(Eigen::Index k) const {
    Eigen::VectorXd s = Eigen::VectorXd::Constant(L(), 1.0 / lambda[k]);
    s[0] = s[1] = kFlatVariance;
    return s;
  }

  /// Integrated squared second derivative of phi_k.
  double roughness(Eigen::Index k) const { return atilde.col(k).tail(L() - 2).squaredNorm(); }

  double max_orthonormality_error(const Eigen::MatrixXd& J) const {
    Eigen::MatrixXd g = atilde.transpose() * J * atilde;
    return (g - Eigen::MatrixXd::Identity(K(), K())).cwiseAbs().maxCoeff();
  }

  bool lambda_ordered() const {
    for (Eigen::Index k = 0; k < K(); ++k) {
      if (!(lambda[k] > kLambdaLower && lambda[k] < kLambdaUpper)) return false;
      if (k > 0 && !(lambda[k] < lambda[k - 1])) return false;
    }
    return true;
  }
};

/// Projects x off the J-span of `others` (columns assumed J-orthonormal) and
/// J-normalizes the remainder. Two projection passes keep the result
/// orthogonal to rounding level.
inline Eigen::VectorXd project_and_normalize(const Eigen::VectorXd& x, const Eigen::MatrixXd& others,
                                             const Eigen::MatrixXd& J, std::size_t index = 0) {
  Eigen::VectorXd v = x;
  const double before = std::sqrt(std::max(0.0, v.dot(J * v)));
  for (int pass = 0; pass < 2; ++pass)
    for (Eigen::Index h = 0; h < others.cols(); ++h) v -= others.col(h).dot(J * v) * others.col(h);
  const double after = std::sqrt(std::max(0.0, v.dot(J * v)));
  if (!(after > 1e-12 * std::max(1.0, before)))
    throw CollinearityError(index, "basis vector " + std::to_string(index) +
                                       " is J-collinear with the preceding vectors");
  return v / after;
}

/// Gram-Schmidt in the J inner product, columns processed in index order.
inline Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& atilde, const Eigen::MatrixXd& J) {
  Eigen::MatrixXd out(atilde.rows(), atilde.cols());
  for (Eigen::Index k = 0; k < atilde.cols(); ++k)
    out.col(k) = project_and_normalize(atilde.col(k), out.leftCols(k), J, static_cast<std::size_t>(k));
  return out;
}

/// Column k holds phi_k evaluated on `grid`.
inline Eigen::MatrixXd basis_functions_on_grid(const AdaptiveBasis& ab, const PenaltySystem& ps,
                                               std::span<const double> grid) {
  return ps.btilde(grid) * ab.atilde;
}

inline Eigen::MatrixXd basis_functions_on_grid(const AdaptiveBasis& ab, const PenaltySystem& ps,
                                               const BSplineBasis& basis,
                                               std::span<const double> grid) {
  return basis.evaluate(grid) * ps.transform() * ab.atilde;
}

inline std::vector<double> even_grid(std::size_t d) {
  std::vector<double> g(d);
  if (d == 1) {
    g[0] = 0.5;
    return g;
  }
  for (std::size_t m = 0; m < d; ++m) g[m] = static_cast<double>(m) / static_cast<double>(d - 1);
  return g;
}

/// Trapezoid weights for a sorted grid.
inline Eigen::VectorXd trapezoid_weights(std::span<const double> grid) {
  const auto m = static_cast<Eigen::Index>(grid.size());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i + 1 < m; ++i) {
    double h = grid[static_cast<std::size_t>(i + 1)] - grid[static_cast<std::size_t>(i)];
    w[i] += 0.5 * h;
    w[i + 1] += 0.5 * h;
  }
  return w;
}

}  // namespace fdag
