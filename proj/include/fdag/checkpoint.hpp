#pragma once

// JSON checkpoints of a full sampler state plus its random-number stream.

#include <fstream>
#include <memory>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "fdag/errors.hpp"
#include "fdag/model.hpp"
#include "fdag/random.hpp"

namespace fdag {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

template <class Derived>
nlohmann::json matrix_to_json(const Eigen::MatrixBase<Derived>& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <class Matrix>
Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw ParseError(0, std::string("checkpoint field '") + what + "' has the wrong number of rows");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw ParseError(0, std::string("checkpoint field '") + what + "' has the wrong number of columns");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<typename Matrix::Scalar>();
  }
  return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

struct Checkpoint {
  ModelState state;
  std::string rng;
  int iteration = 0;
};

inline nlohmann::json checkpoint_to_json(const ModelState& s, const Rng& rng, int iteration) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["iteration"] = iteration;
  j["n"] = s.n();
  j["p"] = s.p();
  j["K"] = s.K();
  j["L"] = s.basis.L();
  j["M"] = s.noise.M();
  j["spline_order"] = s.splines->basis().order();
  j["adjacency"] = detail::matrix_to_json(s.dag.adjacency());
  nlohmann::json blocks = nlohmann::json::array();
  for (int jj = 0; jj < s.p(); ++jj)
    for (int l : s.dag.parents(jj))
      blocks.push_back({{"child", jj}, {"parent", l}, {"B", detail::matrix_to_json(s.effects.block(jj, l))}});
  j["effects"] = blocks;
  j["gamma"] = s.effects.gamma;
  j["pi"] = detail::matrix_to_json(s.noise.pi);
  j["tau"] = detail::matrix_to_json(s.noise.tau);
  j["assignments"] = detail::matrix_to_json(s.noise.c);
  j["Z"] = detail::matrix_to_json(s.Z);
  j["sigma"] = detail::vector_to_json(s.sigma);
  j["r"] = s.r;
  j["atilde"] = detail::matrix_to_json(s.basis.atilde);
  j["lambda"] = detail::vector_to_json(s.basis.lambda);
  j["rng"] = serialize_rng(rng);
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ParseError(0, "unsupported checkpoint version " + j.at("version").dump());
    Checkpoint out;
    out.iteration = j.at("iteration").get<int>();
    const int n = j.at("n").get<int>(), p = j.at("p").get<int>(), K = j.at("K").get<int>();
    const int L = j.at("L").get<int>(), M = j.at("M").get<int>(), order = j.at("spline_order").get<int>();
    ModelState& s = out.state;
    s.splines = std::make_shared<const PenaltySystem>(BSplineBasis(L, order));
    s.dag = Dag::from_adjacency(detail::matrix_from_json<Adjacency>(j.at("adjacency"), p, p, "adjacency"));
    s.effects = EffectBlocks(p, K, j.at("gamma").get<double>());
    for (const auto& b : j.at("effects")) {
      const int child = b.at("child").get<int>(), parent = b.at("parent").get<int>();
      if (child < 0 || child >= p || parent < 0 || parent >= p || !s.dag.has_edge(child, parent))
        throw ParseError(0, "checkpoint effect block does not match an edge");
      s.effects.block(child, parent) = detail::matrix_from_json<Eigen::MatrixXd>(b.at("B"), K, K, "B");
    }
    s.noise.pi = detail::matrix_from_json<Eigen::MatrixXd>(j.at("pi"), p * K, M, "pi");
    s.noise.tau = detail::matrix_from_json<Eigen::MatrixXd>(j.at("tau"), p * K, M, "tau");
    s.noise.c = detail::matrix_from_json<Eigen::MatrixXi>(j.at("assignments"), n, p * K, "assignments");
    s.Z = detail::matrix_from_json<Eigen::MatrixXd>(j.at("Z"), n, p * K, "Z");
    s.sigma = detail::vector_from_json(j.at("sigma"));
    s.r = j.at("r").get<double>();
    s.basis.atilde = detail::matrix_from_json<Eigen::MatrixXd>(j.at("atilde"), L, K, "atilde");
    s.basis.lambda = detail::vector_from_json(j.at("lambda"));
    out.rng = j.at("rng").get<std::string>();
    validate_state(s);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("malformed checkpoint: ") + e.what());
  }
}

inline void write_checkpoint(const std::string& path, const ModelState& s, const Rng& rng, int iteration) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write checkpoint " + path);
  os << checkpoint_to_json(s, rng, iteration).dump(1) << '\n';
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("malformed checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace fdag
