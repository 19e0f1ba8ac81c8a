#pragma once

#include <map>
#include <vector>

#include <Eigen/Dense>

#include "fdag/dataset.hpp"
#include "fdag/splines.hpp"

namespace fdag {

/// Reparameterized design for every curve, reduced to sufficient statistics.
/// Curves observed on identical grids share one Gram matrix, so the even-grid
/// case costs a single L x L matrix.
class ObservationDesign {
 public:
  struct CurveStats {
    int grid_id = 0;
    Eigen::VectorXd btw;  // btilde' W
    double wtw = 0.0;
    std::size_t m = 0;
  };

  ObservationDesign() = default;

  ObservationDesign(const FunctionalDataset& data, const PenaltySystem& ps) : n_(data.n()), p_(data.p()) {
    std::map<std::vector<double>, int> ids;
    std::vector<Eigen::MatrixXd> designs;
    stats_.resize(static_cast<std::size_t>(n_) * static_cast<std::size_t>(p_));
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < p_; ++j) {
        const Curve& c = data.curve(i, j);
        auto [it, inserted] = ids.emplace(c.grid, static_cast<int>(designs.size()));
        if (inserted) {
          designs.push_back(ps.btilde(c.grid));
          btb_.push_back(designs.back().transpose() * designs.back());
        }
        CurveStats& s = stats_[static_cast<std::size_t>(i * p_ + j)];
        s.grid_id = it->second;
        Eigen::Map<const Eigen::VectorXd> w(c.values.data(), static_cast<Eigen::Index>(c.values.size()));
        s.btw = designs[static_cast<std::size_t>(it->second)].transpose() * w;
        s.wtw = w.squaredNorm();
        s.m = c.values.size();
      }
    counts_.assign(static_cast<std::size_t>(p_), 0);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < p_; ++j) counts_[static_cast<std::size_t>(j)] += stats(i, j).m;
  }

  int n() const { return n_; }
  int p() const { return p_; }
  std::size_t grid_count() const { return btb_.size(); }
  const CurveStats& stats(int i, int j) const { return stats_[static_cast<std::size_t>(i * p_ + j)]; }
  const Eigen::MatrixXd& btb(int grid_id) const { return btb_[static_cast<std::size_t>(grid_id)]; }
  std::size_t observation_count(int j) const { return counts_[static_cast<std::size_t>(j)]; }

 private:
  int n_ = 0, p_ = 0;
  std::vector<CurveStats> stats_;
  std::vector<Eigen::MatrixXd> btb_;
  std::vector<std::size_t> counts_;
};

/// Phi'Phi per grid and Phi'W per curve for the current basis.
class BasisProjections {
 public:
  void refresh(const ObservationDesign& design, const Eigen::MatrixXd& atilde) {
    phitphi_.resize(design.grid_count());
    for (std::size_t g = 0; g < design.grid_count(); ++g)
      phitphi_[g] = atilde.transpose() * design.btb(static_cast<int>(g)) * atilde;
    phitw_.resize(static_cast<std::size_t>(design.n()) * static_cast<std::size_t>(design.p()));
    for (int i = 0; i < design.n(); ++i)
      for (int j = 0; j < design.p(); ++j)
        phitw_[static_cast<std::size_t>(i * design.p() + j)] = atilde.transpose() * design.stats(i, j).btw;
    p_ = design.p();
  }

  const Eigen::MatrixXd& phitphi(int grid_id) const { return phitphi_[static_cast<std::size_t>(grid_id)]; }
  const Eigen::VectorXd& phitw(int i, int j) const { return phitw_[static_cast<std::size_t>(i * p_ + j)]; }

 private:
  int p_ = 0;
  std::vector<Eigen::MatrixXd> phitphi_;
  std::vector<Eigen::VectorXd> phitw_;
};

}  // namespace fdag
