#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fdag/errors.hpp"
#include "fdag/random.hpp"

namespace fdag {

/// Square 0/1 matrix with E(j, l) = 1 iff l -> j.
using Adjacency = Eigen::MatrixXi;

namespace detail {

inline void check_square_binary(const Adjacency& e) {
  if (e.rows() != e.cols()) throw MalformedGraph("adjacency matrix is not square");
  for (Eigen::Index j = 0; j < e.rows(); ++j) {
    if (e(j, j) != 0) throw MalformedGraph("adjacency matrix has a self-loop at node " + std::to_string(j));
    for (Eigen::Index l = 0; l < e.cols(); ++l)
      if (e(j, l) != 0 && e(j, l) != 1) throw MalformedGraph("adjacency entries must be 0 or 1");
  }
}

// Kahn's algorithm, smallest available index first. Empty result on a cycle.
inline std::vector<int> kahn_order(const Adjacency& e) {
  const auto p = static_cast<int>(e.rows());
  std::vector<int> indegree(static_cast<std::size_t>(p), 0);
  for (int j = 0; j < p; ++j)
    for (int l = 0; l < p; ++l) indegree[j] += e(j, l);
  std::vector<char> done(static_cast<std::size_t>(p), 0);
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(p));
  for (int step = 0; step < p; ++step) {
    int next = -1;
    for (int v = 0; v < p; ++v)
      if (!done[v] && indegree[v] == 0) {
        next = v;
        break;
      }
    if (next < 0) return {};
    done[next] = 1;
    order.push_back(next);
    for (int j = 0; j < p; ++j)
      if (e(j, next)) --indegree[j];
  }
  return order;
}

}  // namespace detail

/// True iff the graph has no directed cycle.
inline bool is_acyclic(const Adjacency& e) {
  detail::check_square_binary(e);
  return static_cast<Eigen::Index>(detail::kahn_order(e).size()) == e.rows();
}

/// Directed acyclic graph on nodes 0..p-1. Mutations go through edge_delta.
class Dag {
 public:
  Dag() = default;
  explicit Dag(int p) : e_(Adjacency::Zero(p, p)) {}

  static Dag from_adjacency(const Adjacency& e) {
    if (!is_acyclic(e)) throw MalformedGraph("adjacency matrix contains a directed cycle");
    Dag g;
    g.e_ = e;
    return g;
  }

  int p() const { return static_cast<int>(e_.rows()); }
  const Adjacency& adjacency() const { return e_; }

  /// E[j][l]: whether l -> j.
  bool has_edge(int j, int l) const { return e_(j, l) != 0; }

  int edge_count() const { return e_.sum(); }

  std::vector<int> parents(int j) const {
    std::vector<int> out;
    for (int l = 0; l < p(); ++l)
      if (e_(j, l)) out.push_back(l);
    return out;
  }

  std::vector<int> children(int l) const {
    std::vector<int> out;
    for (int j = 0; j < p(); ++j)
      if (e_(j, l)) out.push_back(j);
    return out;
  }

  /// Whether a directed path from -> ... -> to exists (from == to counts).
  bool reachable(int from, int to) const {
    std::vector<char> seen(static_cast<std::size_t>(p()), 0);
    std::vector<int> stack{from};
    seen[from] = 1;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      if (v == to) return true;
      for (int c = 0; c < p(); ++c)
        if (e_(c, v) && !seen[c]) {
          seen[c] = 1;
          stack.push_back(c);
        }
    }
    return false;
  }

  bool operator==(const Dag& other) const { return e_ == other.e_; }

 private:
  friend std::optional<Dag> edge_delta_impl(const Dag&, int, int, int);
  Adjacency e_;
};

/// A topological order; ties broken by smallest node index.
inline std::vector<int> topological_order(const Dag& dag) {
  auto order = detail::kahn_order(dag.adjacency());
  if (static_cast<int>(order.size()) != dag.p()) throw MalformedGraph("graph contains a directed cycle");
  return order;
}

inline std::vector<int> topological_order(const Adjacency& e) {
  detail::check_square_binary(e);
  auto order = detail::kahn_order(e);
  if (static_cast<Eigen::Index>(order.size()) != e.rows())
    throw MalformedGraph("graph contains a directed cycle");
  return order;
}

/// Erdos-Renyi DAG: a uniformly random node ordering, then each forward pair
/// joined independently with probability `prob`.
inline Dag random_er_dag(int p, double prob, Rng& rng) {
  if (p < 0 || !(prob >= 0.0 && prob <= 1.0)) throw InvalidConfiguration("random_er_dag: bad arguments");
  std::vector<int> perm(static_cast<std::size_t>(p));
  for (int v = 0; v < p; ++v) perm[v] = v;
  for (int v = p - 1; v > 0; --v) {
    int u = static_cast<int>(std::uniform_int_distribution<int>(0, v)(rng));
    std::swap(perm[v], perm[u]);
  }
  Adjacency e = Adjacency::Zero(p, p);
  for (int a = 0; a < p; ++a)
    for (int b = a + 1; b < p; ++b)
      if (rand::uniform(rng) < prob) e(perm[b], perm[a]) = 1;  // perm[a] -> perm[b]
  return Dag::from_adjacency(e);
}

enum class EdgeOp { add, remove, reverse };

inline std::optional<Dag> edge_delta_impl(const Dag& dag, int j, int l, int op) {
  Dag out = dag;
  switch (static_cast<EdgeOp>(op)) {
    case EdgeOp::add:
      if (dag.has_edge(j, l)) return out;
      if (dag.reachable(j, l)) return std::nullopt;  // j ~> l plus l -> j closes a cycle
      out.e_(j, l) = 1;
      return out;
    case EdgeOp::remove:
      out.e_(j, l) = 0;
      return out;
    case EdgeOp::reverse: {
      if (!dag.has_edge(j, l)) throw MalformedGraph("cannot reverse a missing edge");
      out.e_(j, l) = 0;
      if (out.reachable(l, j)) return std::nullopt;
      out.e_(l, j) = 1;
      return out;
    }
  }
  return std::nullopt;
}

/// Applies add/remove/reverse to the edge l -> j. nullopt when the result
/// would contain a cycle; the input is never modified.
inline std::optional<Dag> edge_delta(const Dag& dag, int j, int l, EdgeOp op) {
  if (j == l) throw MalformedGraph("self-loop requested at node " + std::to_string(j));
  if (j < 0 || l < 0 || j >= dag.p() || l >= dag.p()) throw MalformedGraph("node index out of range");
  return edge_delta_impl(dag, j, l, static_cast<int>(op));
}

/// Edges (j, l) meaning l -> j lying on some directed cycle, empty if acyclic.
inline std::vector<std::pair<int, int>> find_cycle(const Adjacency& e) {
  const auto p = static_cast<int>(e.rows());
  std::vector<int> color(static_cast<std::size_t>(p), 0), parent(static_cast<std::size_t>(p), -1);
  for (int root = 0; root < p; ++root) {
    if (color[root]) continue;
    std::vector<std::pair<int, int>> stack{{root, 0}};
    color[root] = 1;
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      if (next == p) {
        color[v] = 2;
        stack.pop_back();
        continue;
      }
      int c = next++;
      if (!e(c, v)) continue;
      if (color[c] == 1) {
        std::vector<std::pair<int, int>> cycle{{c, v}};
        for (int u = v; u != c; u = parent[u]) cycle.emplace_back(u, parent[u]);
        return cycle;
      }
      if (color[c] == 0) {
        color[c] = 1;
        parent[c] = v;
        stack.emplace_back(c, 0);
      }
    }
  }
  return {};
}

inline std::string to_dot(const Dag& dag, const std::vector<std::string>& labels = {}) {
  auto name = [&](int v) {
    return v < static_cast<int>(labels.size()) ? labels[v] : "X" + std::to_string(v + 1);
  };
  std::ostringstream os;
  os << "digraph G {\n";
  for (int v = 0; v < dag.p(); ++v) os << "  \"" << name(v) << "\";\n";
  for (int j = 0; j < dag.p(); ++j)
    for (int l = 0; l < dag.p(); ++l)
      if (dag.has_edge(j, l)) os << "  \"" << name(l) << "\" -> \"" << name(j) << "\";\n";
  os << "}\n";
  return os.str();
}

inline void write_adjacency_csv(std::ostream& os, const Adjacency& e) {
  for (Eigen::Index j = 0; j < e.rows(); ++j) {
    for (Eigen::Index l = 0; l < e.cols(); ++l) os << (l ? "," : "") << e(j, l);
    os << '\n';
  }
}

inline Adjacency read_adjacency_csv(std::istream& is) {
  std::vector<std::vector<int>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<int> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell == "0") row.push_back(0);
      else if (cell == "1") row.push_back(1);
      else throw ParseError(lineno, "adjacency entry '" + cell + "' is not 0 or 1");
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(lineno, "adjacency row length differs from the first row");
    rows.push_back(std::move(row));
  }
  const auto p = static_cast<Eigen::Index>(rows.size());
  if (p > 0 && static_cast<Eigen::Index>(rows.front().size()) != p)
    throw ParseError(lineno, "adjacency matrix is not square");
  Adjacency e(p, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index l = 0; l < p; ++l) e(j, l) = rows[j][l];
  return e;
}

inline Adjacency read_adjacency_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfiguration("cannot open adjacency file " + path);
  return read_adjacency_csv(in);
}

}  // namespace fdag
