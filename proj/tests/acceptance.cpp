// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Statistical checks use pinned seeds and tolerances stated
// inline; full-scale simulation checks take a few minutes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "causalfuse/causal.hpp"
#include "causalfuse/core.hpp"
#include "causalfuse/rng.hpp"
#include "causalfuse/sensitivity.hpp"
#include "causalfuse/shrinkage.hpp"
#include "causalfuse/simulation.hpp"

using namespace causalfuse;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << criterion << ": " << what;
  if (!detail.empty()) std::cout << " (" << detail << ")";
  std::cout << std::endl;
  if (!pass) ++g_failures;
}

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", x);
  return buf;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double m = 0.0;
  for (double x : v) m += x;
  m /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

// --- criterion 1: URE unbiasedness ------------------------------------------

void criterion_1() {
  const double t0 = now_seconds();
  const std::size_t K = 8;
  FusionInput base;
  base.weights.d = {0.05, 0.10, 0.15, 0.08, 0.12, 0.20, 0.18, 0.12};
  base.sigma_r2 = {0.5, 0.8, 1.0, 1.2, 0.6, 1.5, 0.9, 1.1};
  std::vector<double> tau = {0.1, -0.2, 0.3, 0.0, 0.5, -0.4, 0.2, 0.1};
  base.tau_o = {0.4, 0.1, 0.1, 0.3, 0.9, -0.1, 0.0, 0.4};  // fixed biased estimate

  const std::vector<double> lambdas = {0.1, 0.3, 0.5, 0.7, 0.9};
  const int N = 50000;
  RngStream rng(20240817);
  std::vector<double> sd(K);
  for (std::size_t k = 0; k < K; ++k) sd[k] = std::sqrt(base.sigma_r2[k]);

  std::vector<std::vector<double>> diffs(lambdas.size());
  for (auto& d : diffs) d.reserve(N);
  base.tau_r.resize(K);
  std::vector<double> est(K);
  for (int i = 0; i < N; ++i) {
    for (std::size_t k = 0; k < K; ++k) base.tau_r[k] = rng.normal(tau[k], sd[k]);
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
      const double lambda = lambdas[li];
      for (std::size_t k = 0; k < K; ++k)
        est[k] = (1.0 - lambda) * base.tau_r[k] + lambda * base.tau_o[k];
      diffs[li].push_back(ure_common_factor(lambda, base) -
                          weighted_loss(est, tau, base.weights));
    }
  }
  bool pass = true;
  std::string detail;
  for (std::size_t li = 0; li < lambdas.size(); ++li) {
    const auto [m, se] = mean_se(diffs[li]);
    if (std::abs(m) >= 4.0 * se) pass = false;
    detail += (li ? ", " : "") + std::string("z(") + fmt(lambdas[li]) +
              ")=" + fmt(se > 0 ? m / se : 0.0);
  }
  const double elapsed = now_seconds() - t0;
  if (elapsed >= 10.0) pass = false;
  report(1, pass, "URE mean matches loss mean within 4 SE at 5 shrinkage levels",
         detail + ", " + fmt(elapsed) + " s");
}

// --- criteria 2-4: finite-sample dominance ----------------------------------

void dominance_mc(int criterion, const std::string& what, bool star_vs_kappa1) {
  const std::size_t K = 8;
  FusionInput base;
  base.weights = WeightedLossSpec::uniform(K);
  base.sigma_r2.assign(K, 1.0);
  auto rep = check_dominance_conditions(base.sigma_r2, base.weights);
  if (!(rep.lemma1_holds && rep.lemma2_holds && rep.lemma3_holds)) {
    report(criterion, false, what, "dominance precondition unexpectedly violated");
    return;
  }
  std::vector<double> tau(K, 0.0);
  base.tau_o.assign(K, 0.8);
  base.tau_r.resize(K);

  RngStream rng(criterion * 7919 + 11);
  const int N = 20000;
  std::vector<double> diffs;
  diffs.reserve(N);
  const double t0 = now_seconds();
  for (int i = 0; i < N; ++i) {
    for (std::size_t k = 0; k < K; ++k) base.tau_r[k] = rng.normal();
    if (star_vs_kappa1) {
      const double l1 = weighted_loss(kappa1(base).estimate, tau, base.weights);
      const double ls = weighted_loss(kappa1_star(base, /*positive_part=*/false).estimate,
                                      tau, base.weights);
      diffs.push_back(ls - l1);
    } else if (criterion == 2) {
      const double lr = weighted_loss(base.tau_r, tau, base.weights);
      const double l1 = weighted_loss(kappa1(base).estimate, tau, base.weights);
      diffs.push_back(lr - l1);
    } else {
      const double lr = weighted_loss(base.tau_r, tau, base.weights);
      const double l2 = weighted_loss(kappa2_family(base, Kappa2Variant::plain).estimate,
                                      tau, base.weights);
      diffs.push_back(lr - l2);
    }
  }
  const auto [m, se] = mean_se(diffs);
  const double elapsed = now_seconds() - t0;
  bool pass;
  std::string detail;
  if (star_vs_kappa1) {
    pass = m <= 2.0 * se;  // risk(kappa1*) <= risk(kappa1) + 2 SE
    detail = "mean excess " + fmt(m) + ", se " + fmt(se);
  } else {
    pass = m >= 2.0 * se && m > 0.0;
    detail = "margin " + fmt(m) + " = " + fmt(se > 0 ? m / se : 0.0) + " SE";
  }
  if (criterion == 2 && elapsed >= 30.0) pass = false;
  report(criterion, pass, what, detail);
}

// --- criteria 5-7: full-scale simulation magnitudes -------------------------

const std::vector<std::string> kProposed = {"kappa1_plus", "kappa1_plus_star",
                                            "kappa2_plus", "kappa2_plus_star"};

SimConfig paper_config(int K, StrataScheme scheme, Adjustment adj) {
  SimConfig c;
  c.K = K;
  c.strata_scheme = scheme;
  c.adjustment = adj;
  c.seed = 20240817;
  return c;
}

struct ConditionResult {
  std::string tag;
  RiskTable table;
};

void criteria_5_6_7() {
  // pool several independent full-scale runs per condition so the range
  // checks test the condition's risk profile rather than one seed's draw
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<ConditionResult> results;
  for (Adjustment adj : {Adjustment::none, Adjustment::sipw}) {
    for (int K : {6, 20}) {
      for (StrataScheme scheme : {StrataScheme::similar, StrataScheme::variable}) {
        ConditionResult r;
        r.tag = "K" + std::to_string(K) + "_" +
                (scheme == StrataScheme::similar ? "similar" : "variable") + "_" +
                (adj == Adjustment::sipw ? "sipw" : "none");
        for (std::size_t s = 0; s < seeds.size(); ++s) {
          auto c = paper_config(K, scheme, adj);
          c.seed = seeds[s];
          auto t = run_condition(c);
          if (s == 0) {
            r.table = std::move(t);
          } else {
            for (std::size_t i = 0; i < t.rows.size(); ++i) {
              r.table.rows[i].risk += t.rows[i].risk;
              r.table.rows[i].se = std::sqrt(r.table.rows[i].se * r.table.rows[i].se +
                                             t.rows[i].se * t.rows[i].se);
            }
          }
        }
        const double ns = static_cast<double>(seeds.size());
        for (auto& row : r.table.rows) {
          row.risk /= ns;
          row.se /= ns;
        }
        const double risk_r = risk_of(r.table, "tau_r");
        for (auto& row : r.table.rows)
          row.pct_reduction = 100.0 * (1.0 - row.risk / risk_r);
        results.push_back(std::move(r));
      }
    }
  }

  auto check_block = [&](int criterion, Adjustment adj, const std::string& what) {
    bool pass = true;
    std::string detail;
    for (const auto& r : results) {
      const bool is_sipw = r.tag.find("sipw") != std::string::npos;
      if ((adj == Adjustment::sipw) != is_sipw) continue;
      const bool k6 = r.tag.find("K6_") == 0;
      const double lo = adj == Adjustment::none ? 0.0 : (k6 ? 10.0 : 25.0);
      const double hi = adj == Adjustment::none ? (k6 ? 10.0 : 15.0) : (k6 ? 40.0 : 55.0);
      double worst = 1e300, best = -1e300;
      for (const auto& id : kProposed) {
        const double pct = row_of(r.table, id).pct_reduction;
        worst = std::min(worst, pct);
        best = std::max(best, pct);
        if (!(pct > lo && pct < hi)) pass = false;
      }
      const double ratio = risk_of(r.table, "tau_o") / risk_of(r.table, "tau_r");
      bool ratio_ok = true;
      if (adj == Adjustment::none)
        ratio_ok = k6 ? (ratio >= 25.0 && ratio <= 100.0) : (ratio >= 7.5 && ratio <= 30.0);
      else if (k6)
        ratio_ok = ratio >= 1.1 && ratio <= 1.7;
      if (!ratio_ok) pass = false;
      detail += r.tag + ": red[" + fmt(worst) + "," + fmt(best) + "]% ratio " + fmt(ratio) +
                "; ";
    }
    report(criterion, pass, what, detail);
  };

  check_block(5, Adjustment::none,
              "unadjusted full-scale reductions and tau_o risk ratios in range");
  check_block(6, Adjustment::sipw,
              "SIPW full-scale reductions and tau_o risk ratio in range");

  bool oracle_pass = true;
  std::string detail;
  for (const auto& r : results) {
    const auto& orow = row_of(r.table, "oracle");
    for (const auto& row : r.table.rows) {
      if (row.name == "oracle") continue;
      const double slack = 2.0 * std::sqrt(orow.se * orow.se + row.se * row.se);
      if (orow.risk > row.risk + slack) {
        oracle_pass = false;
        detail += r.tag + ":" + row.name + " ";
      }
    }
  }
  report(7, oracle_pass, "oracle risk is lowest in every condition within 2 SE",
         detail.empty() ? "all 8 conditions" : detail);
}

// --- criterion 8: URE-loss sup-gap shrinks with dimension -------------------

void criterion_8() {
  RngStream setup(31415);
  auto median_supgap = [&](std::size_t K, bool variance_weighted) {
    FusionInput base;
    base.weights = WeightedLossSpec::uniform(K);
    std::vector<double> tau(K, 0.0), xi(K), sd(K);
    for (std::size_t k = 0; k < K; ++k) {
      base.sigma_r2.push_back(setup.uniform(0.5, 1.5));
      sd[k] = std::sqrt(base.sigma_r2.back());
      xi[k] = setup.uniform(0.2, 1.0);
    }
    base.tau_o = xi;
    base.tau_r.resize(K);
    RngStream rng(271828 + K);
    const int R = 200;
    std::vector<double> sups;
    sups.reserve(R);
    std::vector<double> est(K);
    for (int r = 0; r < R; ++r) {
      for (std::size_t k = 0; k < K; ++k) base.tau_r[k] = rng.normal(0.0, sd[k]);
      double sup = 0.0;
      for (int gi = 0; gi <= 100; ++gi) {
        const double lambda = gi / 100.0;
        double ure, loss;
        if (variance_weighted) {
          for (std::size_t k = 0; k < K; ++k)
            est[k] = base.tau_r[k] -
                     lambda * base.sigma_r2[k] * (base.tau_r[k] - base.tau_o[k]);
          ure = ure_variance_weighted(lambda, base);
        } else {
          for (std::size_t k = 0; k < K; ++k)
            est[k] = (1.0 - lambda) * base.tau_r[k] + lambda * base.tau_o[k];
          ure = ure_common_factor(lambda, base);
        }
        loss = weighted_loss(est, tau, base.weights);
        sup = std::max(sup, std::abs(ure - loss));
      }
      sups.push_back(sup);
    }
    std::nth_element(sups.begin(), sups.begin() + R / 2, sups.end());
    return sups[R / 2];
  };

  bool pass = true;
  std::string detail;
  for (bool vw : {false, true}) {
    double prev = 1e300;
    detail += vw ? "; variance-weighted:" : "common:";
    for (std::size_t K : {10, 100, 1000}) {
      const double med = median_supgap(K, vw);
      detail += " " + fmt(med);
      if (!(med < prev)) pass = false;
      prev = med;
    }
  }
  report(8, pass, "median sup |URE - loss| strictly decreases along K in {10,100,1000}",
         detail);
}

// --- criterion 9: sensitivity extrema equal brute force ---------------------

std::pair<double, double> brute_force_extrema(const detail::StratumUnits& su, double gamma) {
  auto [treated, control] = detail::make_bounds(su, gamma);
  auto arm_minmax = [](const detail::ArmBounds& arm) {
    const std::size_t n = arm.y.size();
    double lo = 1e300, hi = -1e300;
    for (std::size_t mask = 0; mask < (1ull << n); ++mask) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = (mask >> i) & 1 ? arm.hi[i] : arm.lo[i];
        num += w * arm.y[i];
        den += w;
      }
      const double v = num / den;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    return std::pair{lo, hi};
  };
  auto [t_lo, t_hi] = arm_minmax(treated);
  auto [c_lo, c_hi] = arm_minmax(control);
  return {t_lo - c_hi, t_hi - c_lo};
}

void criterion_9() {
  const double t0 = now_seconds();
  RngStream rng(54321);
  bool pass = true;
  double max_err = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n_t = 1 + rng.uniform_int(6);
    const std::size_t n_c = 1 + rng.uniform_int(6);
    detail::StratumUnits su;
    for (std::size_t i = 0; i < n_t + n_c; ++i) {
      su.y.push_back(rng.normal());
      su.p_hat.push_back(rng.uniform(0.05, 0.95));
      su.w.push_back(i < n_t ? 1 : 0);
    }
    const double gamma = rng.uniform(1.0, 6.0);
    auto [lo, hi] = sipw_extrema(su, gamma);
    auto [blo, bhi] = brute_force_extrema(su, gamma);
    max_err = std::max({max_err, std::abs(lo - blo), std::abs(hi - bhi)});
    if (std::abs(lo - blo) > 1e-9 || std::abs(hi - bhi) > 1e-9) pass = false;
  }
  const double elapsed = now_seconds() - t0;
  if (elapsed >= 5.0) pass = false;
  report(9, pass, "threshold-scan extrema match brute-force enumeration on 500 instances",
         "max abs err " + fmt(max_err) + ", " + fmt(elapsed) + " s");
}

// --- criterion 10: implied-Gamma self-consistency ---------------------------

void criterion_10() {
  RngStream rng(98765);
  StratifiedDataset data;
  data.K = 3;
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 60; ++i) {
      Unit u;
      u.y = rng.normal(0.4 * k, 1.0);
      u.w = i % 2;
      u.stratum = k;
      u.p_hat = rng.uniform(0.25, 0.75);
      data.units.push_back(u);
    }
  FusionInput fusion;
  fusion.tau_r = diff_in_means(data);
  for (double& t : fusion.tau_r) t += rng.normal(0.0, 0.1);
  fusion.tau_o = sipw(data);
  fusion.sigma_r2.assign(3, 0.05);
  fusion.weights = stratum_weights(data);

  SensitivityConfig config;
  config.seed = 1234;
  config.epsilon = 1e-5;

  bool pass = true;
  std::string detail;
  for (double planted : {1.2, 2.0, 5.0}) {
    SensitivityConfig c = config;
    c.gamma = planted;
    const double target = lambda_of_gamma(data, fusion, c);
    auto res = implied_gamma_for_target(target, data, fusion, config);
    const bool ok = res.converged && std::abs(res.lambda_at_gamma - target) < config.epsilon;
    if (!ok) pass = false;
    detail += "G*=" + fmt(planted) + "->" + fmt(res.gamma_imp) + " ";
  }

  double prev = 2.0;
  bool monotone = true;
  for (int g = 0; g < 20; ++g) {
    SensitivityConfig c = config;
    c.gamma = 1.0 + 0.3 * g;
    const double lam = lambda_of_gamma(data, fusion, c);
    if (lam > prev + 1e-12) monotone = false;
    prev = lam;
  }
  if (!monotone) pass = false;
  report(10, pass, "planted Gamma recovered within tolerance; lambda(Gamma) non-increasing",
         detail + (monotone ? "monotone on 20-point grid" : "monotonicity violated"));
}

// --- criterion 11: delta-method bias diagnostic -----------------------------

void criterion_11() {
  SimConfig c;
  c.K = 6;
  c.n_o = 10000;
  c.n_r = 1000;
  c.seed = 424242;
  auto studies = generate_populations(c, 0);
  auto xi = delta_method_bias(studies.obs, c.K);

  std::vector<long> n_k(c.K, 0);
  for (int s : studies.obs.stratum) ++n_k[s];

  const int draws = 2000;
  std::vector<double> bias_mean(c.K, 0.0);
  RngStream rng(555);
  std::vector<double> sum_t(c.K), sum_c(c.K);
  std::vector<long> cnt_t(c.K), cnt_c(c.K);
  for (int d = 0; d < draws; ++d) {
    std::fill(sum_t.begin(), sum_t.end(), 0.0);
    std::fill(sum_c.begin(), sum_c.end(), 0.0);
    std::fill(cnt_t.begin(), cnt_t.end(), 0);
    std::fill(cnt_c.begin(), cnt_c.end(), 0);
    for (std::size_t i = 0; i < studies.obs.size(); ++i) {
      const int k = studies.obs.stratum[i];
      if (rng.bernoulli(studies.obs.p[i])) {
        sum_t[k] += studies.obs.y1[i];
        ++cnt_t[k];
      } else {
        sum_c[k] += studies.obs.y0[i];
        ++cnt_c[k];
      }
    }
    for (int k = 0; k < c.K; ++k) {
      const double est = sum_t[k] / cnt_t[k] - sum_c[k] / cnt_c[k];
      bias_mean[k] += (est - studies.truth.tau[k]) / draws;
    }
  }

  bool pass = true;
  std::string detail;
  for (int k = 0; k < c.K; ++k) {
    const double tol = std::max(0.05, 10.0 / static_cast<double>(n_k[k]));
    const double err = std::abs(bias_mean[k] - xi[k]);
    if (n_k[k] < 1000) continue;  // criterion applies at n_ok >= 1000
    if (err > tol) pass = false;
    detail += fmt(err) + "/" + fmt(tol) + " ";
  }
  report(11, pass, "delta-method bias matches empirical bias per stratum", detail);
}

}  // namespace

int main() {
  criterion_1();
  dominance_mc(2, "kappa1 dominates tau_r with margin >= 2 SE under its condition", false);
  dominance_mc(3, "kappa1* risk does not exceed kappa1 risk + 2 SE", true);
  dominance_mc(4, "kappa2 dominates tau_r with margin >= 2 SE under its condition", false);
  criteria_5_6_7();
  criterion_8();
  criterion_9();
  criterion_10();
  criterion_11();
  std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES: ")
            << (g_failures == 0 ? "" : std::to_string(g_failures)) << std::endl;
  return g_failures == 0 ? 0 : 1;
}
