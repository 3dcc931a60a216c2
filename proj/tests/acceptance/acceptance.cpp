// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance [configs-dir]

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "fusion_oracles.hpp"
#include "rbfusion/metrics.hpp"
#include "test_support.hpp"

using namespace rbfusion;
using namespace rbfusion::testing;

namespace {

std::string g_configs = RBFUSION_SOURCE_DIR "/configs";

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// A1 -------------------------------------------------------------------------
Verdict a1_kalman_equivalence() {
  const auto motion = discretize_ct_model(turn_rate_model(0.3, 0.1), 0.025);
  const auto meas = position_measurement(0.05);
  const ClutterModel clutter{50.0, 0.0};
  const auto prior = AssociationPrior::forced_target();
  double worst = 0.0;
  for (std::uint64_t run = 0; run < 3; ++run) {
    Engine eng(derive_seed(101, {run}));
    Vector x(4);
    x << 0, 0, 1, 0;
    const GaussianEstimate init{x, Matrix::Identity(4, 4)};
    GaussianEstimate kf = init;
    auto set = make_particle_set(20, init);
    for (int k = 0; k < 500; ++k) {
      x = motion.A * x + sample_gaussian(eng, motion.Q);
      const Vector y = meas.H * x + sample_gaussian(eng, meas.R);
      kf = kf_update(kf_predict(kf, motion), y, meas);
      set = resample(rbpf_step(std::move(set), y, motion, meas, clutter, prior, derive_seed(run, {std::uint64_t(k)})),
                     0.5, derive_seed(run, {std::uint64_t(k), 1}));
      worst = std::max(worst, (point_estimate(set).mean - kf.mean).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= 1e-6, fmt("max |m_rbpf - m_kf| = %.3g over 3 x 500 steps (tol 1e-6)", worst)};
}

// A2 -------------------------------------------------------------------------
Verdict a2_reductions() {
  std::mt19937_64 eng(202);
  double mod_ci = 0, mbci_bci = 0, batch_pair = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto n = 1 + static_cast<Eigen::Index>(t % 4);
    const GaussianEstimate a{random_vector(eng, n), random_spd(eng, n)};
    const GaussianEstimate b{random_vector(eng, n), random_spd(eng, n)};
    const GaussianEstimate c{random_vector(eng, n), random_spd(eng, n)};
    const NodeProfile pa{uniform(eng, 0, 1), 1.0, 0}, pb{uniform(eng, 0, 1), 1.0, 0}, pc{uniform(eng, 0, 1), 1.0, 0};

    const auto m = modified_ci_fuse(a, b, pa, pb), ci = ci_fuse_optimal(a, b);
    mod_ci = std::max({mod_ci, max_abs(m.estimate.mean - ci.estimate.mean), max_abs(m.estimate.cov - ci.estimate.cov)});

    const std::vector<GaussianEstimate> three = {a, b, c};
    const std::vector<NodeProfile> p3 = {pa, pb, pc};
    const auto mb = mbci_fuse(three, p3), bb = bci_fuse_optimal(three);
    mbci_bci = std::max({mbci_bci, max_abs(mb.estimate.mean - bb.estimate.mean), max_abs(mb.estimate.cov - bb.estimate.cov)});

    // N = 2 batch vs pairwise: fixed weight, optimal weight, and the modified forms.
    const std::vector<GaussianEstimate> two = {a, b};
    const NodeProfile qa{uniform(eng, 0, 1), uniform(eng, 0.05, 1), 0}, qb{uniform(eng, 0, 1), uniform(eng, 0.05, 1), 0};
    const std::vector<NodeProfile> q2 = {qa, qb};
    const double w = uniform(eng, 0, 1);
    const auto bf = bci_fuse(two, MixingWeights::pair(w)), cf = ci_fuse(a, b, w);
    const auto bo = bci_fuse_optimal(two);
    const auto mo = mbci_fuse(two, q2), mc = modified_ci_fuse(a, b, qa, qb);
    batch_pair = std::max({batch_pair, max_abs(bf.mean - cf.mean), max_abs(bf.cov - cf.cov),
                           max_abs(bo.estimate.cov - ci.estimate.cov), max_abs(bo.estimate.mean - ci.estimate.mean),
                           max_abs(mo.estimate.cov - mc.estimate.cov), max_abs(mo.estimate.mean - mc.estimate.mean)});
  }
  const bool ok = mod_ci <= 1e-12 && mbci_bci <= 1e-12 && batch_pair <= 1e-12;
  return {ok, fmt("1000 inputs: modCI(chi=1) vs CI %.2g, MBCI(chi=1) vs BCI %.2g, N=2 batch vs pair %.2g (tol 1e-12)",
                  mod_ci, mbci_bci, batch_pair)};
}

// A3 -------------------------------------------------------------------------
Verdict a3_table2_ordering() {
  auto cfg = load_config(g_configs + "/one_target.json");
  cfg.particles = 20;
  cfg.baseline_kf = true;
  cfg.method = FusionMethod::Both;
  std::vector<MetricsRow> rows;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto r = compute_metrics(run_network(cfg, seed));
    rows.insert(rows.end(), r.begin(), r.end());
  }
  const auto col = [&](const std::string& src, const std::string& alg, bool want_mse) {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.source == src && r.algorithm == alg) v.push_back(want_mse ? r.mse : r.mncm);
    return median(v);
  };
  const double kf_a = col("a", "kf", true), kf_b = col("b", "kf", true);
  const double pf_a = col("a", "rbpf", true), pf_b = col("b", "rbpf", true);
  const double mse_ci = col("c", "ci", true), mse_mod = col("c", "modci", true);
  const double mncm_ci = col("c", "ci", false), mncm_mod = col("c", "modci", false);
  const auto rep = compare_fusion(rows);
  const double frac = static_cast<double>(rep.mncm.wins + rep.mncm.ties) / static_cast<double>(rep.pairs.size());

  const bool i = kf_a > 5 * pf_a && kf_b > 5 * pf_b;
  const bool ii = mse_mod <= mse_ci;
  const bool iii = mncm_mod <= mncm_ci;
  const bool iv = frac >= 0.9;
  std::string d = fmt("(i) %s KF %.3g/%.3g vs RBPF %.3g/%.3g; ", i ? "ok" : "FAIL", kf_a, kf_b, pf_a, pf_b);
  d += fmt("(ii) %s MSE modCI %.5g vs CI %.5g; ", ii ? "ok" : "FAIL", mse_mod, mse_ci);
  d += fmt("(iii) %s MNCM modCI %.5g vs CI %.5g; ", iii ? "ok" : "FAIL", mncm_mod, mncm_ci);
  d += fmt("(iv) %s modCI MNCM <= CI on %.0f%% of 50 seeds (need 90%%, sign-test p=%.2g). ", iv ? "ok" : "FAIL",
           100 * frac, rep.mncm.p_value);
  d += fmt("RBPF MNCM %.4g/%.4g. Reference table: KF 1.447/1.613, RBPF 0.141/0.161, CI 0.141, modCI 0.109; "
           "MNCM RBPF 0.0632/0.0666, CI 0.0613, modCI 0.0592",
           col("a", "rbpf", false), col("b", "rbpf", false));
  return {i && ii && iii && iv, d};
}

// A4 -------------------------------------------------------------------------
Verdict a4_consistency() {
  std::mt19937_64 eng(404);
  double worst[4] = {INFINITY, INFINITY, INFINITY, INFINITY};
  for (int t = 0; t < 1000; ++t) {
    const auto dim = 1 + static_cast<Eigen::Index>(t % 4);
    {
      const auto trial = make_correlated_trial(eng, 2, dim);
      const auto& in = trial.inputs;
      const std::vector<Matrix> plain = {in[0].cov.inverse(), in[1].cov.inverse()};
      const auto ci = ci_fuse_optimal(in[0], in[1]);
      worst[0] = std::min(worst[0], consistency_margin(trial, plain, ci.weights.omega, ci.estimate.cov));
      const auto mc = modified_ci_fuse(in[0], in[1], trial.profiles[0], trial.profiles[1]);
      const auto [ha, hb] = modified_precisions(in[0].cov, in[1].cov, trial.profiles[0], trial.profiles[1]);
      worst[1] = std::min(worst[1], consistency_margin(trial, {ha, hb}, mc.weights.omega, mc.estimate.cov));
    }
    {
      const auto trial = make_correlated_trial(eng, 3 + t % 3, dim);
      std::vector<Matrix> plain, scaled;
      const auto f = modified_scale_factors(trial.profiles);
      for (std::size_t i = 0; i < trial.inputs.size(); ++i) {
        plain.push_back(trial.inputs[i].cov.inverse());
        scaled.push_back(f[i] * plain.back());
      }
      const auto b = bci_fuse_optimal(trial.inputs);
      worst[2] = std::min(worst[2], consistency_margin(trial, plain, b.weights.omega, b.estimate.cov));
      const auto mb = mbci_fuse(trial.inputs, trial.profiles);
      worst[3] = std::min(worst[3], consistency_margin(trial, scaled, mb.weights.omega, mb.estimate.cov));
    }
  }
  const bool ok = std::all_of(std::begin(worst), std::end(worst), [](double w) { return w >= -1e-9; });
  return {ok, fmt("1000 trials each, worst min-eig(P - Pbar): CI %.3g, modCI %.3g, BCI %.3g, MBCI %.3g (need >= -1e-9)",
                  worst[0], worst[1], worst[2], worst[3])};
}

// A5 -------------------------------------------------------------------------
Verdict a5_optimizers() {
  std::mt19937_64 eng(505);
  double pair_gap = -INFINITY;
  for (int t = 0; t < 200; ++t) {
    const auto n = 1 + static_cast<Eigen::Index>(t % 4);
    const std::vector<Matrix> prec = {random_spd(eng, n), random_spd(eng, n)};
    double grid = INFINITY;
    Vector w(2);
    for (int i = 0; i <= 10000; ++i) {
      w << i / 10000.0, 1 - i / 10000.0;
      grid = std::min(grid, trace_objective(prec, w));
    }
    const double opt = optimize_omega_pair(prec[0], prec[1]);
    w << opt, 1 - opt;
    pair_gap = std::max(pair_gap, trace_objective(prec, w) - grid);
  }
  double simplex_gap = -INFINITY;
  for (int t = 0; t < 50; ++t) {
    for (std::size_t n_in : {3u, 4u}) {
      const auto n = 1 + static_cast<Eigen::Index>(t % 4);
      std::vector<Matrix> prec;
      for (std::size_t i = 0; i < n_in; ++i) prec.push_back(random_spd(eng, n));
      const auto w = optimize_omega_simplex(prec);
      simplex_gap = std::max(simplex_gap, trace_objective(prec, w.omega) - dirichlet_search(eng, prec, 100000));
    }
  }
  return {pair_gap <= 1e-6 && simplex_gap <= 1e-4,
          fmt("pairwise - grid(1e4) worst %.3g (tol 1e-6) on 200 pairs; simplex - Dirichlet(1e5) worst %.3g (tol 1e-4) "
              "on 50 sets x N=3,4",
              pair_gap, simplex_gap)};
}

// A6 / A7 --------------------------------------------------------------------
struct MultiRuns {
  std::vector<MetricsRow> rows;
};

const MultiRuns& multi_runs() {
  static const MultiRuns runs = [] {
    MultiRuns r;
    auto cfg = load_config(g_configs + "/multi_target.json");
    cfg.method = FusionMethod::Both;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto m = compute_metrics(run_network(cfg, seed));
      r.rows.insert(r.rows.end(), m.begin(), m.end());
    }
    return r;
  }();
  return runs;
}

Verdict a6_table3_ordering() {
  const auto& rows = multi_runs().rows;
  bool ok = true;
  std::string d;
  const char* reference[] = {"0.0501 vs 0.0508", "0.0523 vs 0.0560", "0.0493 vs 0.0505"};
  int idx = 0;
  for (const char* proc : {"8", "9", "10"}) {
    std::vector<double> ci, mod;
    for (const auto& r : rows)
      if (r.source == proc) (r.algorithm == "ci" ? ci : mod).push_back(r.mncm);
    const double mci = median(ci), mmod = median(mod);
    ok = ok && mmod <= mci;
    d += fmt("node %s: median MNCM modCI %.5g vs CI %.5g %s (reference %s); ", proc, mmod, mci,
             mmod <= mci ? "ok" : "FAIL", reference[idx++]);
  }
  return {ok, d + "20 seeds"};
}

Verdict a7_count_tracking() {
  const auto& rows = multi_runs().rows;
  bool ok = true;
  std::string d;
  for (const auto& r0 : rows) {
    if (r0.seed != 1 || r0.algorithm != "rbmcda") continue;
    std::vector<double> within;
    for (const auto& r : rows)
      if (r.source == r0.source && r.algorithm == "rbmcda") within.push_back(r.count_within_one);
    const double m = median(within);
    ok = ok && m >= 0.6;
    d += fmt("node %s %.3f; ", r0.source.c_str(), m);
  }
  return {ok, "median over 20 seeds of the fraction of steps with |count error| <= 1 (need >= 0.60): " + d};
}

// A8 -------------------------------------------------------------------------
Verdict a8_death_model() {
  BirthDeathModel model;
  model.lifetime_shape = 2.0;
  model.lifetime_scale = 0.5;
  const double p = death_probability(0.025, 0.0, 0.0, model);
  // Numeric CDF: integrate the gamma(2, 0.5) density over [0, 0.025].
  const double oracle = simpson([](double t) { return t / 0.25 * std::exp(-t / 0.5); }, 0.0, 0.025, 2000);
  const bool ok = std::abs(p - oracle) <= 1e-6 && std::abs(p - 0.001210) <= 1e-6;
  return {ok, fmt("death_probability = %.9f, numeric CDF = %.9f, reference 0.001210 (tol 1e-6)", p, oracle)};
}

// A9 -------------------------------------------------------------------------
Verdict a9_payoff() {
  std::mt19937_64 eng(909);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto n = 1 + static_cast<Eigen::Index>(t % 4);
    const Matrix pa = random_spd(eng, n), pb = random_spd(eng, n);
    const NodeProfile a{uniform(eng, 0, 1), uniform(eng, 0.05, 1), 0}, b{uniform(eng, 0, 1), uniform(eng, 0.05, 1), 0};
    const double w = uniform(eng, 0, 1);
    const auto [ha, hb] = modified_precisions(pa, pb, a, b);
    worst = std::max(worst, std::abs(expected_payoff(pa, pb, a, b, w) - (w * ha + (1 - w) * hb).trace()));
  }
  return {worst <= 1e-10, fmt("max |E[payoff] - tr(fused modified precision)| = %.3g over 1000 inputs (tol 1e-10)", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_configs = argv[1];
  struct Criterion {
    const char* id;
    const char* name;
    double limit_s;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria = {
      {"A1", "oracle equivalence", 5, a1_kalman_equivalence},
      {"A2", "reductions", 0, a2_reductions},
      {"A3", "one-target ordering", 120, a3_table2_ordering},
      {"A4", "consistency", 30, a4_consistency},
      {"A5", "optimizers vs brute force", 60, a5_optimizers},
      {"A6", "multi-target ordering", 300, a6_table3_ordering},
      {"A7", "count tracking", 300, a7_count_tracking},
      {"A8", "death model", 0, a8_death_model},
      {"A9", "payoff matching", 0, a9_payoff},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    // A6 and A7 share one batch of runs; the limit applies to the pair.
    const bool in_time = c.limit_s <= 0 || secs <= c.limit_s;
    const bool pass = v.pass && in_time;
    failures += !pass;
    std::printf("%s %s (%s): %s [%.1fs%s]\n", c.id, pass ? "PASS" : "FAIL", c.name, v.detail.c_str(), secs,
                c.limit_s > 0 ? fmt(", limit %.0fs", c.limit_s).c_str() : "");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
