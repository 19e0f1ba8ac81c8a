// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero if
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "fdag/fdag.hpp"
#include "gibbs_audit.hpp"

namespace {

using namespace fdag;

// Pinned thresholds.
constexpr int kRecoverySeeds = 10;
constexpr double kMinMedianMcc = 0.6;
constexpr double kMaxMedianFdr = 0.3;
constexpr int kIdentifiabilitySeeds = 20;
constexpr int kIdentifiabilityMinWins = 18;  // 90% of 20
constexpr int kExample2Draws = 100;
constexpr double kExample2Tol = 1e-10;
constexpr int kPriorSweeps = 100000;
constexpr int kPriorBurnIn = 1000;
constexpr double kPriorMaxTv = 0.02;
constexpr double kOddsRelTol = 1e-12;
constexpr int kAuditInstances = 100;
constexpr double kAuditTol = 1e-8;
constexpr double kOrthonormalityTol = 1e-10;
constexpr double kPartitionTol = 1e-12;

bool all_passed = true;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
  all_passed = all_passed && pass;
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << title << ": " << detail << std::endl;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Sweep-level invariants observed across every chain in this run.
struct InvariantTracker {
  long sweeps = 0;
  double max_orthonormality_error = 0.0;
  long unordered_lambda = 0;
  long cyclic = 0;

  std::function<void(int, const Sampler&)> hook() {
    return [this](int, const Sampler& s) {
      ++sweeps;
      const auto& st = s.state();
      max_orthonormality_error =
          std::max(max_orthonormality_error, st.basis.max_orthonormality_error(st.splines->J()));
      if (!st.basis.lambda_ordered()) ++unordered_lambda;
      if (!is_acyclic(st.dag.adjacency())) ++cyclic;
    };
  }
};

InvariantTracker tracker;

PosteriorSummary fit(const FunctionalDataset& data, const Hyperparameters& hp, const McmcConfig& cfg) {
  Rng rng = make_stream(cfg.seed, "chain", 0);
  return run_chain(data, hp, cfg, rng, std::nullopt, tracker.hook());
}

// ---------------------------------------------------------------- 1

void graph_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> mcc, fdr;
  std::map<int, int> chosen_K;
  for (int seed = 1; seed <= kRecoverySeeds; ++seed) {
    SimulationConfig sc;
    sc.p = 10;
    sc.n = 100;
    sc.d = 125;
    sc.K_true = 3;
    sc.L_true = 6;
    sc.snr = 5.0;
    sc.laplace_scale = 0.5;
    Rng rng = make_stream(static_cast<std::uint64_t>(seed), "simulation");
    const SimulationResult sim = simulate(sc, rng);
    Hyperparameters hp;  // M = 5, L = 20
    const PenaltySystem ps{BSplineBasis(hp.L, 4)};
    hp.K = select_K(sim.data, ps, {1, 2, 3, 4, 5, 6, 7, 8}).K;
    ++chosen_K[hp.K];
    McmcConfig cfg;  // 5000 iterations, burn-in 2500, thin 5
    cfg.seed = static_cast<std::uint64_t>(seed);
    const PosteriorSummary post = fit(sim.data, hp, cfg);
    const GraphScore s = score_graph(median_probability_model(post, cfg.edge_threshold).dag, sim.truth.dag);
    mcc.push_back(s.mcc);
    fdr.push_back(s.fdr);
    std::cout << "  seed " << seed << ": K=" << hp.K << " TPR=" << s.tpr << " FDR=" << s.fdr << " MCC=" << s.mcc
              << std::endl;
  }
  const double med_mcc = median(mcc), med_fdr = median(fdr);
  std::string ks;
  for (auto [k, c] : chosen_K) ks += " K=" + std::to_string(k) + "x" + std::to_string(c);
  report(1, "graph recovery (p=10, n=100, d=125, 10 seeds)",
         med_mcc >= kMinMedianMcc && med_fdr <= kMaxMedianFdr,
         fmt("median MCC %.3f (>= 0.6)", med_mcc) + fmt(", median FDR %.3f (<= 0.3)", med_fdr) + ", selected" + ks +
             fmt(", %.0f s", seconds_since(t0)));
}

// ---------------------------------------------------------------- 2

void bivariate_identifiability() {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  for (int seed = 1; seed <= kIdentifiabilitySeeds; ++seed) {
    Example1FunctionalConfig ec;
    ec.n = 500;
    Rng rng = make_stream(static_cast<std::uint64_t>(seed), "example1");
    const FunctionalDataset data = example1_functional(ec, rng);
    Hyperparameters hp;
    hp.K = 1;
    hp.M = 2;
    McmcConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(seed);
    const PosteriorSummary post = fit(data, hp, cfg);
    const double causal = post.edge_ppi(1, 0), anticausal = post.edge_ppi(0, 1);
    wins += causal > anticausal;
    std::cout << "  seed " << seed << ": ppi(true)=" << causal << " ppi(reversed)=" << anticausal << std::endl;
  }
  report(2, "bivariate identifiability (p=2, K=1, M=2, n=500, 20 seeds)", wins >= kIdentifiabilityMinWins,
         std::to_string(wins) + "/20 seeds favour the true direction (>= 18)" + fmt(", %.0f s", seconds_since(t0)));
}

// ---------------------------------------------------------------- 3

void gaussian_counterexample() {
  Rng rng = make_stream(3, "example2");
  double worst = 0.0;
  int feasible = 0;
  for (int t = 0; t < kExample2Draws; ++t) {
    Example2Params q;
    q.b = (rand::uniform(rng) < 0.5 ? -1.0 : 1.0) * (0.1 + 1.9 * rand::uniform(rng));
    q.tau1 = 0.05 + 2.0 * rand::uniform(rng);
    q.tau2 = 0.05 + 2.0 * rand::uniform(rng);
    q.sigma1 = 0.05 + 2.0 * rand::uniform(rng);
    q.sigma2 = 0.05 + 2.0 * rand::uniform(rng);
    const double bound = q.tau1 + q.sigma1 - q.b * q.b * q.tau1 * q.tau1 / (q.b * q.b * q.tau1 + q.tau2 + q.sigma2);
    const double total = bound * (0.05 + 0.9 * rand::uniform(rng));
    const double share = 0.1 + 0.8 * rand::uniform(rng);
    q.tau1_alt = share * total;
    q.sigma1_alt = (1.0 - share) * total;
    const Example2Result r = example2_check(q);
    feasible += r.feasible;
    worst = std::max(worst, r.feasible ? r.max_difference : std::numeric_limits<double>::infinity());
  }
  report(3, "Gaussian counter-example (100 random feasible draws)",
         feasible == kExample2Draws && worst < kExample2Tol,
         std::to_string(feasible) + "/100 feasible, max covariance difference " + fmt("%.2e (< 1e-10)", worst));
}

// ---------------------------------------------------------------- 4

/// All acyclic graphs on three nodes, keyed by their off-diagonal bit code.
std::map<int, Adjacency> three_node_dags() {
  std::map<int, Adjacency> out;
  const std::pair<int, int> slots[6] = {{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}};
  for (int code = 0; code < 64; ++code) {
    Adjacency e = Adjacency::Zero(3, 3);
    for (int b = 0; b < 6; ++b)
      if (code >> b & 1) e(slots[b].first, slots[b].second) = 1;
    if (is_acyclic(e)) out[code] = e;
  }
  return out;
}

int dag_code(const Dag& d) {
  const std::pair<int, int> slots[6] = {{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}};
  int code = 0;
  for (int b = 0; b < 6; ++b)
    if (d.has_edge(slots[b].first, slots[b].second)) code |= 1 << b;
  return code;
}

double prior_tv(bool marginalize_r, EdgeKernel kernel, std::size_t& graphs) {
  const auto dags = three_node_dags();
  graphs = dags.size();
  Hyperparameters hp;
  hp.K = 1;
  hp.L = 6;
  hp.M = 1;
  hp.marginalize_r = marginalize_r;
  std::map<int, double> weight;
  double total = 0.0;
  for (const auto& [code, e] : dags) {
    const double s = static_cast<double>(e.sum());
    weight[code] = std::exp(log_beta_fn(s + hp.a_r, 6.0 - s + hp.b_r));
    total += weight[code];
  }
  McmcConfig cfg;
  cfg.iterations = kPriorSweeps + kPriorBurnIn;
  cfg.burn_in = kPriorBurnIn;
  cfg.thin = 1;
  cfg.seed = 4;
  cfg.edge_kernel = kernel;
  std::map<int, double> freq;
  auto inv = tracker.hook();
  auto count = [&](int it, const Sampler& s) {
    inv(it, s);
    if (it >= kPriorBurnIn) freq[dag_code(s.state().dag)] += 1.0;
  };
  const FunctionalDataset empty(0, 3, {});
  Rng rng = make_stream(cfg.seed, "chain", 0);
  run_chain(empty, hp, cfg, rng, std::nullopt, count);
  double tv = 0.0;
  for (const auto& [code, w] : weight) tv += std::abs(freq[code] / kPriorSweeps - w / total);
  for (const auto& [code, f] : freq)
    if (!weight.count(code)) tv += f / kPriorSweeps;  // a cyclic graph would land here
  return 0.5 * tv;
}

void prior_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t graphs = 0;
  const double tv_r = prior_tv(false, EdgeKernel::mixture_marginal, graphs);
  const double tv_marg = prior_tv(true, EdgeKernel::mixture_marginal, graphs);
  const double tv_collapsed = prior_tv(false, EdgeKernel::collapsed_slab, graphs);

  Hyperparameters hp;
  hp.marginalize_r = true;
  Adjacency one = Adjacency::Zero(3, 3);
  one(1, 0) = 1;
  const double odds =
      std::exp(log_prior_graph(Dag(3), 0.5, hp) - log_prior_graph(Dag::from_adjacency(one), 0.5, hp));
  const double expected = 3.0 * 3.0 - 3.0;
  const bool odds_ok = std::abs(odds - expected) <= kOddsRelTol * expected;
  const double worst = std::max({tv_r, tv_marg, tv_collapsed});
  report(4, "prior recovery (n=0, p=3, 1e5 sweeps)", graphs == 25 && worst <= kPriorMaxTv && odds_ok,
         std::to_string(graphs) + " DAGs; TV " + fmt("%.4f", tv_r) + " (r sampled), " + fmt("%.4f", tv_marg) +
             " (r integrated), " + fmt("%.4f", tv_collapsed) + " (collapsed kernel) (<= 0.02); empty/one-edge odds " +
             fmt("%.12g", odds) + " (= p^2 - p = 6)" + fmt(", %.0f s", seconds_since(t0)));
}

// ---------------------------------------------------------------- 5

void gibbs_audit_summary() {
  bool ok = true;
  std::string detail;
  for (const auto& audit : gibbs_audit::all_audits()) {
    const gibbs_audit::Outcome o = audit(kAuditInstances);
    const bool pass = o.instances == kAuditInstances && o.max_error < kAuditTol;
    ok = ok && pass;
    std::cout << "  " << (pass ? "ok  " : "BAD ") << o.name << ": " << o.instances << " instances, max error "
              << fmt("%.2e", o.max_error) << std::endl;
  }
  report(5, "Gibbs audit (13 checks x 100 instances)", ok, "every conditional within 1e-8 of the joint");
}

// ---------------------------------------------------------------- 6

void numerical_invariants() {
  // A dedicated chain on uneven grids adds to the sweeps already tracked.
  SimulationConfig sc;
  sc.p = 4;
  sc.n = 40;
  sc.d = 30;
  sc.K_true = 3;
  sc.grid = GridMode::uneven;
  Rng rng = make_stream(6, "simulation");
  const SimulationResult sim = simulate(sc, rng);
  Hyperparameters hp;
  hp.K = 3;
  McmcConfig cfg;
  cfg.iterations = 1000;
  cfg.seed = 6;
  cfg.check_invariants = true;
  fit(sim.data, hp, cfg);

  double partition = 0.0;
  for (int order : {2, 3, 4, 5})
    for (int L = order; L <= 30; ++L) {
      const BSplineBasis basis(L, order);
      for (int t = 0; t <= 10000; ++t) {
        const double x = t / 10000.0;
        partition = std::max(partition, std::abs(basis.evaluate(x).sum() - 1.0));
      }
    }
  const bool ok = tracker.sweeps > 0 && tracker.max_orthonormality_error <= kOrthonormalityTol &&
                  tracker.unordered_lambda == 0 && tracker.cyclic == 0 && partition <= kPartitionTol;
  report(6, "numerical invariants", ok,
         std::to_string(tracker.sweeps) + " sweeps: max |A'JA - I| " + fmt("%.2e (<= 1e-10)", tracker.max_orthonormality_error) +
             ", " + std::to_string(tracker.unordered_lambda) + " lambda-order violations, " +
             std::to_string(tracker.cyclic) + " cyclic graphs; B-spline partition of unity " +
             fmt("%.2e (<= 1e-12)", partition));
}

}  // namespace

int main() {
  try {
    gaussian_counterexample();
    gibbs_audit_summary();
    prior_recovery();
    bivariate_identifiability();
    graph_recovery();
    numerical_invariants();
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance run aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << "NOTE [7] the full simulation grid (p up to 90, n up to 200, 50 repetitions) and the EEG application "
               "are out of scope at desk scale; criteria 1-6 stand in for them."
            << std::endl;
  return all_passed ? 0 : 1;
}
