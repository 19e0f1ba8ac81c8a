#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cli.hpp"

namespace {

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw fdag::InvalidConfiguration("expected a comma-separated list of integers, got '" + text + "'");
    }
  }
  return out;
}

fdag::EdgeKernel parse_kernel(const std::string& s) {
  if (s == "mixture-marginal") return fdag::EdgeKernel::mixture_marginal;
  if (s == "collapsed-slab") return fdag::EdgeKernel::collapsed_slab;
  throw fdag::InvalidConfiguration("edge kernel must be 'mixture-marginal' or 'collapsed-slab'");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace fdag;
  CLI::App app{"Bayesian causal structure learning for multivariate functional data"};
  app.require_subcommand(1);

  // simulate
  cli::SimulateOptions sim;
  std::string grid = "even";
  auto* simulate_cmd = app.add_subcommand("simulate", "Simulate a functional dataset with a random causal graph");
  simulate_cmd->add_option("--out", sim.out, "Output directory")->required();
  simulate_cmd->add_option("--seed", sim.seed, "Random seed");
  simulate_cmd->add_option("--p", sim.sim.p, "Number of functions")->check(CLI::PositiveNumber);
  simulate_cmd->add_option("--n", sim.sim.n, "Number of subjects")->check(CLI::PositiveNumber);
  simulate_cmd->add_option("--d", sim.sim.d, "Grid size")->check(CLI::PositiveNumber);
  simulate_cmd->add_option("--snr", sim.sim.snr, "Signal-to-noise ratio")->check(CLI::PositiveNumber);
  simulate_cmd->add_option("--grid", grid, "Grid layout: even or uneven");
  simulate_cmd->add_option("--K-true", sim.sim.K_true, "Number of true basis functions");
  simulate_cmd->add_option("--L-true", sim.sim.L_true, "Spline dimension of the true basis");
  simulate_cmd->add_option("--laplace-scale", sim.sim.laplace_scale, "Scale of the Laplace exogenous terms");
  simulate_cmd->add_option("--edge-prob", sim.sim.edge_prob, "Edge probability (default 2/p)");

  // fit
  cli::FitOptions fit;
  std::string profile = "sim-default", kernel = "mixture-marginal", candidates;
  std::optional<int> iterations, burn_in, thin;
  std::optional<double> threshold;
  int K = 0;
  auto* fit_cmd = app.add_subcommand("fit", "Fit the model by MCMC");
  fit_cmd->add_option("--dataset", fit.dataset, "Long-format dataset CSV")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", fit.out, "Output directory")->required();
  fit_cmd->add_option("--seed", fit.mcmc.seed, "Random seed");
  fit_cmd->add_option("--profile", profile, "Protocol: sim-default or eeg");
  fit_cmd->add_option("--iterations", iterations, "MCMC iterations");
  fit_cmd->add_option("--burn-in", burn_in, "Burn-in iterations (default half)");
  fit_cmd->add_option("--thin", thin, "Keep every thin-th draw after burn-in");
  fit_cmd->add_option("--threshold", threshold, "Inclusion threshold for the median probability model");
  auto* k_opt = fit_cmd->add_option("--K", K, "Number of basis functions")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--K-candidates", candidates, "Comma-separated K values to choose from")->excludes(k_opt);
  fit_cmd->add_option("--M", fit.hp.M, "Mixture components")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--L", fit.hp.L, "Number of B-spline functions")->check(CLI::Range(4, 1000));
  fit_cmd->add_option("--chains", fit.mcmc.chains, "Independent chains")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--edge-moves", fit.mcmc.edge_moves, "Edge proposals per sweep (default p(p-1)/2)");
  fit_cmd->add_option("--edge-kernel", kernel, "mixture-marginal or collapsed-slab");
  fit_cmd->add_flag("--marginal-r", fit.hp.marginalize_r, "Integrate the edge probability out");
  fit_cmd->add_flag("--check-invariants", fit.mcmc.check_invariants, "Verify invariants after every sweep");
  fit_cmd->add_option("--export-grid", fit.export_grid_points, "Grid points for basis-function output")
      ->check(CLI::Range(2, 100000));

  // evaluate
  cli::EvaluateOptions ev;
  std::string ev_out;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score an estimated graph against the truth");
  eval_cmd->add_option("--estimated", ev.estimated, "Estimated adjacency CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--truth", ev.truth, "True adjacency CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", ev_out, "Metrics CSV (stdout if omitted)");
  eval_cmd->add_option("--seed", ev.seed, "Seed recorded in the metrics row");
  eval_cmd->add_option("--d", ev.d, "Grid size recorded in the metrics row");
  eval_cmd->add_option("--n", ev.n, "Sample size recorded in the metrics row");

  // demo
  cli::DemoOptions demo;
  auto* demo_cmd = app.add_subcommand("demo", "Bivariate identifiability examples");
  demo_cmd->add_option("which", demo.which, "example1 or example2")->required();
  demo_cmd->add_option("--out", demo.out, "Output directory");
  demo_cmd->add_option("--seed", demo.seed, "Random seed");
  demo_cmd->add_option("--n", demo.example1.n, "Sample size for example1")->check(CLI::PositiveNumber);
  demo_cmd->add_option("--b", demo.example2.b, "Causal effect");
  demo_cmd->add_option("--tau1", demo.example2.tau1);
  demo_cmd->add_option("--tau2", demo.example2.tau2);
  demo_cmd->add_option("--sigma1", demo.example2.sigma1);
  demo_cmd->add_option("--sigma2", demo.example2.sigma2);
  demo_cmd->add_option("--tau1-alt", demo.example2.tau1_alt);
  demo_cmd->add_option("--sigma1-alt", demo.example2.sigma1_alt);

  // export
  cli::ExportOptions ex;
  auto* export_cmd = app.add_subcommand("export", "Export graph, effects and basis functions from a checkpoint");
  export_cmd->add_option("--checkpoint", ex.checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--out", ex.out, "Output directory")->required();
  export_cmd->add_option("--grid-points", ex.grid_points, "Grid points for basis functions")
      ->check(CLI::Range(2, 100000));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate_cmd) {
      sim.sim.grid = cli::parse_grid_mode(grid);
      cli::cmd_simulate(sim);
    } else if (*fit_cmd) {
      cli::apply_profile(fit.mcmc, profile);
      if (iterations) fit.mcmc.iterations = *iterations;
      if (burn_in) fit.mcmc.burn_in = *burn_in;
      if (thin) fit.mcmc.thin = *thin;
      if (threshold) fit.mcmc.edge_threshold = *threshold;
      fit.mcmc.edge_kernel = parse_kernel(kernel);
      if (*k_opt) fit.K = K;
      if (!candidates.empty()) fit.K_candidates = parse_int_list(candidates);
      cli::cmd_fit(fit);
    } else if (*eval_cmd) {
      if (!ev_out.empty()) ev.out = ev_out;
      cli::cmd_evaluate(ev);
    } else if (*demo_cmd) {
      cli::cmd_demo(demo);
    } else if (*export_cmd) {
      cli::cmd_export(ex);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
