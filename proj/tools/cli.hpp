#pragma once

// Subcommand implementations behind the command-line front end. Each takes a
// plain options struct so tests can drive them without parsing argv.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdag/fdag.hpp"

namespace fdag::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  return os;
}

inline void write_json(const fs::path& path, const json& j) { open_output(path) << j.dump(2) << '\n'; }

inline std::string grid_mode_name(GridMode g) { return g == GridMode::even ? "even" : "uneven"; }

inline GridMode parse_grid_mode(const std::string& s) {
  if (s == "even") return GridMode::even;
  if (s == "uneven") return GridMode::uneven;
  throw InvalidConfiguration("grid mode must be 'even' or 'uneven', got '" + s + "'");
}

/// child,parent,row,col,value for every nonzero block.
inline void write_effects_csv(std::ostream& os, const Dag& dag, const std::vector<Eigen::MatrixXd>& blocks,
                              const std::vector<std::string>& labels) {
  const int p = dag.p();
  os << "child,parent,row,col,value\n";
  for (int j = 0; j < p; ++j)
    for (int l : dag.parents(j)) {
      const auto& B = blocks[static_cast<std::size_t>(j * p + l)];
      for (Eigen::Index a = 0; a < B.rows(); ++a)
        for (Eigen::Index b = 0; b < B.cols(); ++b)
          os << labels[static_cast<std::size_t>(j)] << ',' << labels[static_cast<std::size_t>(l)] << ',' << a + 1
             << ',' << b + 1 << ',' << format_double(B(a, b)) << '\n';
    }
}

inline void write_matrix_csv(std::ostream& os, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? "," : "") << format_double(m(r, c));
    os << '\n';
  }
}

// ------------------------------------------------------------------ simulate

struct SimulateOptions {
  SimulationConfig sim;
  std::uint64_t seed = 1;
  fs::path out = "sim";
};

inline SimulationResult cmd_simulate(const SimulateOptions& opt) {
  Rng rng = make_stream(opt.seed, "simulation");
  SimulationResult res = simulate(opt.sim, rng);
  fs::create_directories(opt.out);
  {
    auto os = open_output(opt.out / "dataset.csv");
    write_dataset_csv(os, res.data);
  }
  {
    auto os = open_output(opt.out / "adjacency.csv");
    write_adjacency_csv(os, res.truth.dag.adjacency());
  }
  {
    auto os = open_output(opt.out / "effects.csv");
    write_effects_csv(os, res.truth.dag, res.truth.effects.blocks, res.data.labels());
  }
  json noise;
  noise["exogenous"] = {{"distribution", "laplace"}, {"location", 0.0}, {"scale", opt.sim.laplace_scale}};
  noise["observation_sd"] = std::vector<double>(res.noise_sd.data(), res.noise_sd.data() + res.noise_sd.size());
  write_json(opt.out / "noise.json", noise);
  const auto& s = opt.sim;
  json meta = {{"seed", opt.seed},
               {"p", s.p},
               {"n", s.n},
               {"d", s.d},
               {"K_true", s.K_true},
               {"L_true", s.L_true},
               {"laplace_scale", s.laplace_scale},
               {"snr", s.snr},
               {"grid", grid_mode_name(s.grid)},
               {"edge_prob", s.edge_prob >= 0 ? s.edge_prob : 2.0 / s.p},
               {"edges", res.truth.dag.edge_count()},
               {"labels", res.data.labels()}};
  write_json(opt.out / "metadata.json", meta);
  return res;
}

// ------------------------------------------------------------------ fit

struct FitOptions {
  fs::path dataset;
  fs::path out = "fit";
  Hyperparameters hp;
  McmcConfig mcmc;
  std::optional<int> K;
  std::vector<int> K_candidates{1, 2, 3, 4, 5, 6, 7, 8};
  int export_grid_points = 101;
  bool quiet = false;
};

/// Applies a named protocol: "sim-default" or "eeg".
inline void apply_profile(McmcConfig& cfg, const std::string& profile) {
  if (profile == "sim-default") {
    cfg.iterations = 5000;
    cfg.burn_in = -1;
    cfg.thin = 5;
    cfg.edge_threshold = 0.5;
  } else if (profile == "eeg") {
    cfg.iterations = 10000;
    cfg.burn_in = -1;
    cfg.thin = 10;
    cfg.edge_threshold = 0.9;
  } else {
    throw InvalidConfiguration("unknown profile '" + profile + "' (expected sim-default or eeg)");
  }
}

inline void write_chain_outputs(const fs::path& dir, const PosteriorSummary& s, const FunctionalDataset& data,
                                const McmcConfig& cfg, int grid_points) {
  fs::create_directories(dir);
  {
    auto os = open_output(dir / "edge_ppi.csv");
    write_matrix_csv(os, s.edge_ppi);
  }
  {
    auto os = open_output(dir / "B_mean.csv");
    // One block per edge present in at least one retained draw.
    os << "child,parent,row,col,value\n";
    for (int j = 0; j < s.p; ++j)
      for (int l = 0; l < s.p; ++l) {
        if (!(s.edge_ppi(j, l) > 0.0)) continue;
        const auto& B = s.effect_mean(j, l);
        for (Eigen::Index a = 0; a < B.rows(); ++a)
          for (Eigen::Index b = 0; b < B.cols(); ++b)
            os << data.labels()[static_cast<std::size_t>(j)] << ',' << data.labels()[static_cast<std::size_t>(l)]
               << ',' << a + 1 << ',' << b + 1 << ',' << format_double(B(a, b)) << '\n';
      }
  }
  {
    auto os = open_output(dir / "trace.csv");
    os << "iteration,log_joint\n";
    for (std::size_t t = 0; t < s.log_joint_trace.size(); ++t)
      os << s.trace_iterations[t] + 1 << ',' << format_double(s.log_joint_trace[t]) << '\n';
  }
  {
    const auto grid = even_grid(static_cast<std::size_t>(grid_points));
    auto os = open_output(dir / "basis_functions.csv");
    os << "draw,grid_point,k,value\n";
    AdaptiveBasis ab;
    for (std::size_t d = 0; d < s.basis_draws.size(); ++d) {
      ab.atilde = s.basis_draws[d];
      ab.lambda = s.lambda_draws[d];
      const Eigen::MatrixXd phi = basis_functions_on_grid(ab, *s.splines, grid);
      for (Eigen::Index m = 0; m < phi.rows(); ++m)
        for (Eigen::Index k = 0; k < phi.cols(); ++k)
          os << d + 1 << ',' << format_double(grid[static_cast<std::size_t>(m)]) << ',' << k + 1 << ','
             << format_double(phi(m, k)) << '\n';
    }
  }
  auto interval = [](const Interval& v) { return json{{"mean", v.mean}, {"lower", v.lower}, {"upper", v.upper}}; };
  json sig = json::array(), mix = json::array();
  for (const auto& v : s.sigma_summary) sig.push_back(interval(v));
  for (const auto& v : s.mixture_variance) mix.push_back(interval(v));
  const auto& d = s.diagnostics;
  json summary = {{"seed", s.seed},
                  {"iterations", cfg.iterations},
                  {"burn_in", cfg.resolved_burn_in()},
                  {"thin", cfg.thin},
                  {"retained", s.retained},
                  {"p", s.p},
                  {"K", s.K},
                  {"L", s.L},
                  {"M", s.M},
                  {"sigma", sig},
                  {"gamma", interval(s.gamma_summary)},
                  {"mixture_variance", mix},
                  {"diagnostics",
                   {{"proposed", {{"add", d.proposed[0]}, {"remove", d.proposed[1]}, {"reverse", d.proposed[2]}}},
                    {"accepted", {{"add", d.accepted[0]}, {"remove", d.accepted[1]}, {"reverse", d.accepted[2]}}},
                    {"cycle_rejections", d.cycle_rejections},
                    {"collinearity_redraws", d.collinearity_redraws},
                    {"collinearity_failures", d.collinearity_failures}}}};
  write_json(dir / "summary.json", summary);
  write_json(dir / "checkpoint.json",
             checkpoint_to_json(s.final_state, deserialize_rng(s.final_rng), cfg.iterations));
}

struct FitResult {
  std::vector<PosteriorSummary> chains;
  Eigen::MatrixXd edge_ppi;
  MedianProbabilityModel mpm;
  int K = 0;
};

inline FitResult cmd_fit(FitOptions opt) {
  const FunctionalDataset data = read_dataset_csv(opt.dataset.string());
  FitResult res;
  if (opt.K) {
    opt.hp.K = *opt.K;
  } else {
    const PenaltySystem ps{BSplineBasis(opt.hp.L, 4)};
    KSelection sel = select_K(data, ps, opt.K_candidates);
    opt.hp.K = sel.K;
    if (!opt.quiet) std::cerr << "selected K = " << sel.K << '\n';
  }
  res.K = opt.hp.K;
  opt.mcmc.validate();
  res.chains = run_chains(data, opt.hp, opt.mcmc);
  res.edge_ppi = average_ppi(res.chains);
  res.mpm = median_probability_model(res.edge_ppi, opt.mcmc.edge_threshold);

  fs::create_directories(opt.out);
  if (res.chains.size() == 1) {
    write_chain_outputs(opt.out, res.chains.front(), data, opt.mcmc, opt.export_grid_points);
  } else {
    for (std::size_t c = 0; c < res.chains.size(); ++c)
      write_chain_outputs(opt.out / ("chain" + std::to_string(c + 1)), res.chains[c], data, opt.mcmc,
                          opt.export_grid_points);
    auto os = open_output(opt.out / "edge_ppi.csv");
    write_matrix_csv(os, res.edge_ppi);
  }
  {
    auto os = open_output(opt.out / "mpm_adjacency.csv");
    write_adjacency_csv(os, res.mpm.dag.adjacency());
  }
  open_output(opt.out / "mpm.dot") << to_dot(res.mpm.dag, data.labels());
  return res;
}

// ------------------------------------------------------------------ evaluate

struct EvaluateOptions {
  fs::path estimated, truth;
  std::optional<fs::path> out;  // metrics CSV; stdout when absent
  std::uint64_t seed = 0;
  int d = 0, n = 0;
};

inline GraphScore cmd_evaluate(const EvaluateOptions& opt) {
  const Adjacency est = read_adjacency_csv(opt.estimated.string());
  const Adjacency truth = read_adjacency_csv(opt.truth.string());
  const GraphScore s = score_graph(est, truth);
  std::ostringstream row;
  row << kMetricsHeader << '\n'
      << opt.seed << ',' << truth.rows() << ',' << opt.d << ',' << opt.n << ',' << format_double(s.tpr) << ','
      << format_double(s.fdr) << ',' << format_double(s.mcc) << '\n';
  if (opt.out) open_output(*opt.out) << row.str();
  else std::cout << row.str();
  return s;
}

// ------------------------------------------------------------------ demo

struct DemoOptions {
  std::string which = "example1";
  fs::path out = "demo";
  std::uint64_t seed = 1;
  Example1Config example1;
  Example2Params example2;
};

inline void cmd_demo(const DemoOptions& opt) {
  fs::create_directories(opt.out);
  if (opt.which == "example1") {
    Rng rng = make_stream(opt.seed, "demo");
    const Example1Result r = example1_demo(opt.example1, rng);
    auto os = open_output(opt.out / "example1_slopes.csv");
    os << "group,size,causal_slope,anticausal_slope\n";
    const char* names[] = {"pooled", "C1", "C2", "C3", "C4"};
    for (std::size_t g = 0; g < 5; ++g)
      os << names[g] << ',' << r.sizes[g] << ',' << format_double(r.causal[g]) << ','
         << format_double(r.anticausal[g]) << '\n';
    write_json(opt.out / "example1_summary.json", {{"seed", opt.seed},
                                                   {"n", opt.example1.n},
                                                   {"causal_spread", r.causal_spread()},
                                                   {"anticausal_spread", r.anticausal_spread()},
                                                   {"expected_pooled_causal_slope", example1_pooled_slope(opt.example1)}});
  } else if (opt.which == "example2") {
    const Example2Result r = example2_check(opt.example2);
    if (!r.feasible) throw InvalidConfiguration("example 2 parameters are infeasible: " + r.reason);
    auto cov = [](const Eigen::Matrix2d& m) { return json{{m(0, 0), m(0, 1)}, {m(1, 0), m(1, 1)}}; };
    const auto& q = opt.example2;
    write_json(opt.out / "example2_certificate.json",
               {{"input",
                 {{"b", q.b}, {"tau1", q.tau1}, {"tau2", q.tau2}, {"sigma1", q.sigma1}, {"sigma2", q.sigma2},
                  {"tau1_alt", q.tau1_alt}, {"sigma1_alt", q.sigma1_alt}}},
                {"b_alt", r.b_alt},
                {"tau2_alt", r.tau2_alt},
                {"sigma2_alt", r.sigma2_alt},
                {"causal_covariance", cov(r.causal_cov)},
                {"anticausal_covariance", cov(r.anticausal_cov)},
                {"max_difference", r.max_difference},
                {"equivalent", r.max_difference < 1e-10}});
  } else {
    throw InvalidConfiguration("demo must be 'example1' or 'example2', got '" + opt.which + "'");
  }
}

// ------------------------------------------------------------------ export

struct ExportOptions {
  fs::path checkpoint;
  fs::path out = "export";
  int grid_points = 101;
};

/// Writes the graph, effects and basis functions stored in a checkpoint.
inline void cmd_export(const ExportOptions& opt) {
  const Checkpoint cp = read_checkpoint(opt.checkpoint.string());
  const ModelState& s = cp.state;
  std::vector<std::string> labels;
  for (int j = 0; j < s.p(); ++j) labels.push_back("X" + std::to_string(j + 1));
  fs::create_directories(opt.out);
  {
    auto os = open_output(opt.out / "adjacency.csv");
    write_adjacency_csv(os, s.dag.adjacency());
  }
  open_output(opt.out / "graph.dot") << to_dot(s.dag, labels);
  {
    auto os = open_output(opt.out / "effects.csv");
    write_effects_csv(os, s.dag, s.effects.blocks, labels);
  }
  {
    const auto grid = even_grid(static_cast<std::size_t>(opt.grid_points));
    const Eigen::MatrixXd phi = basis_functions_on_grid(s.basis, *s.splines, grid);
    auto os = open_output(opt.out / "basis_functions.csv");
    os << "grid_point,k,value\n";
    for (Eigen::Index m = 0; m < phi.rows(); ++m)
      for (Eigen::Index k = 0; k < phi.cols(); ++k)
        os << format_double(grid[static_cast<std::size_t>(m)]) << ',' << k + 1 << ',' << format_double(phi(m, k))
           << '\n';
  }
}

}  // namespace fdag::cli
