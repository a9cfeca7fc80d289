#pragma once

// Marginal-sensitivity-model analysis for SIPW estimates. A single parameter
// Gamma >= 1 bounds the odds ratio between the true and estimated propensity
// of every unit; under that bound the per-unit total weights range over known
// intervals, and the worst-case SIPW contrast in each stratum is found
// exactly by a threshold scan over sorted outcomes. Bootstrap replicates give
// the variance of those extrema, which plug into the optimal-tradeoff formula
// to produce lambda(Gamma) and, by binary search, the implied Gamma of a
// data-driven shrinkage factor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "causal.hpp"
#include "core.hpp"
#include "rng.hpp"
#include "shrinkage.hpp"

namespace causalfuse {

struct SensitivityConfig {
  double gamma = 1.0;
  int bootstrap_B = 200;
  std::uint64_t seed = 0;
  double epsilon = 1e-3;       // binary-search tolerance on lambda
  double gamma_max = 16.0;     // initial search ceiling, doubled when needed
  bool arm_stratified_bootstrap = false;

  void validate() const {
    if (!(gamma >= 1.0)) throw validation_error("gamma must be >= 1");
    if (bootstrap_B < 2) throw validation_error("bootstrap_B must be >= 2");
    if (!(epsilon > 0.0)) throw validation_error("epsilon must be > 0");
    if (!(gamma_max > 1.0)) throw validation_error("gamma_max must be > 1");
  }
};

struct StratumSensitivity {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double bias_l = 0.0;
  double bias_r = 0.0;
  double var_l = 0.0;
  double var_r = 0.0;
  double combined = 0.0;
};

struct SensitivityReport {
  double gamma = 1.0;
  double lambda_at_gamma = 1.0;
  std::vector<StratumSensitivity> strata;
};

struct ImpliedGammaResult {
  double gamma_imp = 1.0;
  double lambda_target = 0.0;
  double lambda_at_gamma = 0.0;
  int iterations = 0;
  bool converged = false;
  bool bracketed = true;
};

namespace detail {

// One stratum-arm: outcomes plus total-weight bounds per unit at a given Gamma.
struct ArmBounds {
  std::vector<double> y;
  std::vector<double> lo;
  std::vector<double> hi;
};

// Extremum of sum(w*y)/sum(w) over box constraints w_i in [lo_i, hi_i].
// The optimum sits at a vertex where, after sorting by outcome, all units
// below a cut take one endpoint and all above take the other; scan every cut.
inline double arm_extremum(const ArmBounds& arm, bool maximize) {
  const std::size_t n = arm.y.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return arm.y[a] < arm.y[b]; });

  // prefix sums over sorted order for lo- and hi-weighted mass
  std::vector<double> lo_w(n + 1, 0.0), lo_wy(n + 1, 0.0), hi_w(n + 1, 0.0), hi_wy(n + 1, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t i = order[j];
    lo_w[j + 1] = lo_w[j] + arm.lo[i];
    lo_wy[j + 1] = lo_wy[j] + arm.lo[i] * arm.y[i];
    hi_w[j + 1] = hi_w[j] + arm.hi[i];
    hi_wy[j + 1] = hi_wy[j] + arm.hi[i] * arm.y[i];
  }
  double best = maximize ? -std::numeric_limits<double>::infinity()
                         : std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c <= n; ++c) {
    // maximize: lo weight on the c smallest outcomes, hi on the rest;
    // minimize: the reverse.
    double num, den;
    if (maximize) {
      num = lo_wy[c] + (hi_wy[n] - hi_wy[c]);
      den = lo_w[c] + (hi_w[n] - hi_w[c]);
    } else {
      num = hi_wy[c] + (lo_wy[n] - lo_wy[c]);
      den = hi_w[c] + (lo_w[n] - lo_w[c]);
    }
    const double val = num / den;
    best = maximize ? std::max(best, val) : std::min(best, val);
  }
  return best;
}

struct StratumUnits {
  std::vector<double> y;
  std::vector<double> p_hat;
  std::vector<int> w;

  bool degenerate() const {
    bool any_t = false, any_c = false;
    for (int wi : w) (wi == 1 ? any_t : any_c) = true;
    return !(any_t && any_c);
  }
};

inline StratumUnits extract_stratum(const StratifiedDataset& data, int k) {
  StratumUnits su;
  for (const Unit& u : data.units) {
    if (u.stratum != k) continue;
    if (!u.p_hat)
      throw validation_error("sensitivity analysis requires p_hat on every unit (stratum " +
                             std::to_string(k) + ")");
    su.y.push_back(u.y);
    su.p_hat.push_back(*u.p_hat);
    su.w.push_back(u.w);
  }
  return su;
}

inline std::pair<ArmBounds, ArmBounds> make_bounds(const StratumUnits& su, double gamma) {
  ArmBounds treated, control;
  for (std::size_t i = 0; i < su.y.size(); ++i) {
    if (su.w[i] == 1) {
      const double base = 1.0 / su.p_hat[i] - 1.0;  // 1/odds(p_hat)
      treated.y.push_back(su.y[i]);
      treated.lo.push_back(1.0 + base / gamma);
      treated.hi.push_back(1.0 + base * gamma);
    } else {
      const double base = su.p_hat[i] / (1.0 - su.p_hat[i]);  // odds(p_hat)
      control.y.push_back(su.y[i]);
      control.lo.push_back(1.0 + base / gamma);
      control.hi.push_back(1.0 + base * gamma);
    }
  }
  return {treated, control};
}

inline double sipw_point(const StratumUnits& su) {
  KahanSum num_t, den_t, num_c, den_c;
  for (std::size_t i = 0; i < su.y.size(); ++i) {
    if (su.w[i] == 1) {
      num_t.add(su.y[i] / su.p_hat[i]);
      den_t.add(1.0 / su.p_hat[i]);
    } else {
      num_c.add(su.y[i] / (1.0 - su.p_hat[i]));
      den_c.add(1.0 / (1.0 - su.p_hat[i]));
    }
  }
  return num_t.sum / den_t.sum - num_c.sum / den_c.sum;
}

}  // namespace detail

// Worst-case SIPW contrast bounds for one stratum's units at level gamma.
// The upper bound maximizes the treated-arm mean and minimizes the control
// mean; the lower bound does the reverse (the arms are independent sums).
inline std::pair<double, double> sipw_extrema(const detail::StratumUnits& su, double gamma) {
  if (!(gamma >= 1.0)) throw validation_error("gamma must be >= 1");
  if (su.degenerate())
    throw validation_error("sipw_extrema: stratum has an empty treatment arm");
  auto [treated, control] = detail::make_bounds(su, gamma);
  const double lower = detail::arm_extremum(treated, false) - detail::arm_extremum(control, true);
  const double upper = detail::arm_extremum(treated, true) - detail::arm_extremum(control, false);
  return {lower, upper};
}

inline std::pair<double, double> sipw_extrema(const StratifiedDataset& data, int k,
                                              double gamma) {
  return sipw_extrema(detail::extract_stratum(data, k), gamma);
}

// Bootstrap variance of the lower and upper extrema: resamples the stratum's
// units with replacement B times (deterministic given the stream) and takes
// the sample variance across replicates. Replicates that lose an arm are
// redrawn, capped at 10B total attempts.
inline std::pair<double, double> bootstrap_extrema_variance(const detail::StratumUnits& su,
                                                            double gamma, int B,
                                                            RngStream stream,
                                                            bool arm_stratified = false) {
  if (B < 2) throw validation_error("bootstrap_extrema_variance: B must be >= 2");
  const std::size_t n = su.y.size();
  std::vector<std::size_t> treated_idx, control_idx;
  for (std::size_t i = 0; i < n; ++i) (su.w[i] == 1 ? treated_idx : control_idx).push_back(i);
  if (treated_idx.size() < 1 || control_idx.size() < 1 || n < 2)
    throw validation_error("bootstrap_extrema_variance: stratum too small");

  std::vector<double> lowers, uppers;
  lowers.reserve(B);
  uppers.reserve(B);
  long attempts = 0;
  const long cap = 10L * B;
  while (static_cast<int>(lowers.size()) < B) {
    if (++attempts > cap)
      throw validation_error("stratum too small for bootstrap: too many degenerate replicates");
    detail::StratumUnits rep;
    auto draw_from = [&](const std::vector<std::size_t>& pool, std::size_t count) {
      for (std::size_t j = 0; j < count; ++j) {
        const std::size_t i = pool[stream.uniform_int(pool.size())];
        rep.y.push_back(su.y[i]);
        rep.p_hat.push_back(su.p_hat[i]);
        rep.w.push_back(su.w[i]);
      }
    };
    if (arm_stratified) {
      draw_from(treated_idx, treated_idx.size());
      draw_from(control_idx, control_idx.size());
    } else {
      std::vector<std::size_t> all(n);
      std::iota(all.begin(), all.end(), 0);
      draw_from(all, n);
    }
    if (rep.degenerate()) continue;
    auto [lo, up] = sipw_extrema(rep, gamma);
    lowers.push_back(lo);
    uppers.push_back(up);
  }

  auto sample_var = [](const std::vector<double>& v) {
    const double n_rep = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n_rep;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / (n_rep - 1.0);
  };
  return {sample_var(lowers), sample_var(uppers)};
}

// Full per-stratum worst-case analysis plus lambda(Gamma):
//   combined_k = max over sides of ((d_k/K) bias^2 + (d_k/K) var)
//   lambda(Gamma) = Tr(Sigma_r D) / (Tr(Sigma_r D) + sum_k combined_k)
// which mirrors the structure of the oracle tradeoff weight with the
// worst-case bias and bootstrap variance standing in for xi and Sigma_o.
inline SensitivityReport analyze_sensitivity(const StratifiedDataset& data,
                                             const FusionInput& fusion,
                                             const SensitivityConfig& config) {
  config.validate();
  ensure_valid(fusion);
  if (static_cast<std::size_t>(data.K) != fusion.K())
    throw validation_error("sensitivity: dataset strata do not align with fusion K");

  SensitivityReport report;
  report.gamma = config.gamma;
  const double Kd = static_cast<double>(fusion.K());
  double combined_sum = 0.0;
  for (int k = 0; k < data.K; ++k) {
    auto su = detail::extract_stratum(data, k);
    StratumSensitivity s;
    s.point = detail::sipw_point(su);
    std::tie(s.lower, s.upper) = sipw_extrema(su, config.gamma);
    s.bias_l = s.point - s.lower;
    s.bias_r = s.upper - s.point;
    auto stream = RngStream::from_path(config.seed, {0x5e5eULL, static_cast<std::uint64_t>(k)});
    std::tie(s.var_l, s.var_r) = bootstrap_extrema_variance(
        su, config.gamma, config.bootstrap_B, stream, config.arm_stratified_bootstrap);
    const double dk = fusion.weights.d[k] / Kd;
    s.combined = std::max(dk * s.bias_l * s.bias_l + dk * s.var_l,
                          dk * s.bias_r * s.bias_r + dk * s.var_r);
    combined_sum += s.combined;
    report.strata.push_back(s);
  }
  const double tr = detail::trace_sigma_d(fusion);
  report.lambda_at_gamma = tr / (tr + combined_sum);
  return report;
}

inline double lambda_of_gamma(const StratifiedDataset& data, const FusionInput& fusion,
                              const SensitivityConfig& config) {
  return analyze_sensitivity(data, fusion, config).lambda_at_gamma;
}

// Binary search for the Gamma at which lambda(Gamma) hits `target`. One
// bootstrap seed is held fixed across evaluations so lambda(Gamma) is a
// deterministic non-increasing function during the search. The ceiling is
// doubled (up to 10 times) while lambda(gamma_max) still exceeds the target;
// a target outside (lambda(gamma_max), lambda(1)] is reported as
// not-bracketed rather than extrapolated.
inline ImpliedGammaResult implied_gamma_for_target(double target,
                                                   const StratifiedDataset& data,
                                                   const FusionInput& fusion,
                                                   SensitivityConfig config) {
  config.validate();
  ImpliedGammaResult result;
  result.lambda_target = target;

  auto lambda_at = [&](double gamma) {
    SensitivityConfig c = config;
    c.gamma = gamma;
    return lambda_of_gamma(data, fusion, c);
  };

  const double lambda_1 = lambda_at(1.0);
  result.iterations = 1;
  if (std::abs(lambda_1 - target) < config.epsilon) {
    result.gamma_imp = 1.0;
    result.lambda_at_gamma = lambda_1;
    result.converged = true;
    return result;
  }
  if (target > lambda_1) {
    result.gamma_imp = 1.0;
    result.lambda_at_gamma = lambda_1;
    result.bracketed = false;
    return result;
  }

  double hi = config.gamma_max;
  double lambda_hi = lambda_at(hi);
  ++result.iterations;
  int expansions = 0;
  while (lambda_hi > target && expansions < 10) {
    hi *= 2.0;
    lambda_hi = lambda_at(hi);
    ++result.iterations;
    ++expansions;
  }
  if (lambda_hi > target) {
    result.gamma_imp = hi;
    result.lambda_at_gamma = lambda_hi;
    result.bracketed = false;
    return result;
  }

  double lo = 1.0;
  for (int iter = 0; iter < 100; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double lambda_mid = lambda_at(mid);
    ++result.iterations;
    result.gamma_imp = mid;
    result.lambda_at_gamma = lambda_mid;
    if (std::abs(lambda_mid - target) < config.epsilon) {
      result.converged = true;
      return result;
    }
    if (lambda_mid > target)
      lo = mid;
    else
      hi = mid;
  }
  return result;  // iteration cap: reported, not an error
}

// Implied Gamma of the kappa1+ shrinkage factor (with the a1* correction
// inside the positive part). When the corrected factor saturates at 1, the
// target sits above lambda(1) and the search reports not-bracketed.
inline ImpliedGammaResult implied_gamma(const StratifiedDataset& data,
                                        const FusionInput& fusion,
                                        const SensitivityConfig& config) {
  return implied_gamma_for_target(lambda1_plus_corrected(fusion), data, fusion, config);
}

// Gamma-blend estimator: lambda(Gamma) tau_r + (1 - lambda(Gamma)) tau_o.
inline ShrinkageOutput gamma_blend(double gamma, const StratifiedDataset& data,
                                   const FusionInput& fusion, SensitivityConfig config) {
  config.gamma = gamma;
  const double lambda = lambda_of_gamma(data, fusion, config);
  auto out = detail::convex_combination(fusion, std::vector<double>(fusion.K(), 1.0 - lambda),
                                        "gamma_blend");
  out.diagnostics["gamma"] = gamma;
  out.diagnostics["lambda_at_gamma"] = lambda;
  return out;
}

// --- JSON -------------------------------------------------------------------

inline nlohmann::json to_json(const SensitivityReport& r) {
  nlohmann::json strata = nlohmann::json::array();
  for (const auto& s : r.strata) {
    strata.push_back({{"point", s.point},
                      {"lower", s.lower},
                      {"upper", s.upper},
                      {"bias_l", s.bias_l},
                      {"bias_r", s.bias_r},
                      {"var_l", s.var_l},
                      {"var_r", s.var_r},
                      {"combined", s.combined}});
  }
  return {{"gamma", r.gamma}, {"lambda_at_gamma", r.lambda_at_gamma}, {"strata", strata}};
}

inline nlohmann::json to_json(const ImpliedGammaResult& r) {
  return {{"gamma_imp", r.gamma_imp},
          {"lambda_target", r.lambda_target},
          {"lambda_at_gamma", r.lambda_at_gamma},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"bracketed", r.bracketed}};
}

}  // namespace causalfuse
