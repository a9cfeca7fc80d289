#pragma once

// Synthetic-population generator and Monte Carlo harness. Each condition
// draws covariates and potential outcomes in an outer loop and treatment
// assignments in an inner loop; every replicate builds a FusionInput, runs
// the whole estimator roster, and accumulates weighted loss against the true
// stratum effects. All randomness flows from (seed, outer, inner, purpose)
// derived streams, so results are bitwise-identical for any thread count.

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "causal.hpp"
#include "core.hpp"
#include "rng.hpp"
#include "shrinkage.hpp"

namespace causalfuse {

enum class StrataScheme { similar, variable };
enum class CohensDenominator { observational_y0, rct_y0 };

struct SimConfig {
  int n_o = 10000;
  int n_r = 1000;
  int K = 6;
  StrataScheme strata_scheme = StrataScheme::similar;
  bool covariate_shift = false;
  Adjustment adjustment = Adjustment::none;
  int outer_reps = 25;
  int inner_reps = 20;
  double cohens_d = 0.2;
  std::uint64_t seed = 0;
  int oracle_aux_draws = 200;
  int threads = 0;  // 0 = hardware concurrency
  CohensDenominator cohens_denominator = CohensDenominator::observational_y0;
  A2Formula a2_formula = A2Formula::printed;
  // Diagnostic switch: false replaces the confounded selection with p_i = 1/2,
  // making the unadjusted observational estimate unbiased.
  bool confounded = true;

  void validate() const {
    if (n_o < 1 || n_r < 1) throw validation_error("sample sizes must be positive");
    if (K < 1) throw validation_error("K must be >= 1");
    if (strata_scheme == StrataScheme::variable && K % 2 != 0)
      throw validation_error("variable strata scheme requires even K");
    if (outer_reps < 1 || inner_reps < 1) throw validation_error("reps must be >= 1");
    if (!(cohens_d > 0.0)) throw validation_error("cohens_d must be positive");
    if (oracle_aux_draws < 2) throw validation_error("oracle_aux_draws must be >= 2");
  }
};

struct SimTruth {
  std::vector<double> tau;
  std::vector<double> boundaries;  // K+1 cut points, -inf .. +inf
  std::vector<double> xi_empirical;
  std::vector<double> sigma_o2_empirical;
  double cohens_d_factor = 1.0;
};

struct RiskTable {
  struct Row {
    std::string name;
    double risk = 0.0;
    double se = 0.0;
    double pct_reduction = 0.0;
  };
  std::vector<Row> rows;
  nlohmann::json metadata;
};

namespace detail {

// Inverse standard-normal CDF (Acklam's rational approximation with one
// Halley refinement; relative error below 1e-15 over (0,1)).
inline double inv_normal_cdf(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= phigh) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

}  // namespace detail

using Matrix3 = std::array<std::array<double, 3>, 3>;

// Symmetric unit-diagonal 3x3 covariance with off-diagonals 0 (prob 1/2) or
// +-0.1 (prob 1/4 each). Any such matrix is diagonally dominant and hence
// positive definite, but the construction still verifies via Cholesky and
// resamples (up to 100 attempts).
inline Matrix3 sample_covariance(RngStream& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    Matrix3 sigma{};
    for (int i = 0; i < 3; ++i) sigma[i][i] = 1.0;
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) {
        const double u = rng.uniform();
        const double v = u < 0.5 ? 0.0 : (u < 0.75 ? 0.1 : -0.1);
        sigma[i][j] = sigma[j][i] = v;
      }
    // Cholesky feasibility check with a positive-eigenvalue floor
    Matrix3 l{};
    bool ok = true;
    for (int i = 0; i < 3 && ok; ++i) {
      for (int j = 0; j <= i; ++j) {
        double s = sigma[i][j];
        for (int m = 0; m < j; ++m) s -= l[i][m] * l[j][m];
        if (i == j) {
          if (s <= 1e-8) {
            ok = false;
            break;
          }
          l[i][i] = std::sqrt(s);
        } else {
          l[i][j] = s / l[j][j];
        }
      }
    }
    if (ok) return sigma;
  }
  throw std::runtime_error("sample_covariance: positive-definite resampling exhausted");
}

inline Matrix3 cholesky3(const Matrix3& sigma) {
  Matrix3 l{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j <= i; ++j) {
      double s = sigma[i][j];
      for (int m = 0; m < j; ++m) s -= l[i][m] * l[j][m];
      if (i == j)
        l[i][i] = std::sqrt(s);
      else
        l[i][j] = s / l[j][j];
    }
  return l;
}

// One study's units with fixed potential outcomes. Propensities are filled
// only for the observational population.
struct SimPopulation {
  std::vector<std::array<double, 3>> x;
  std::vector<double> u;
  std::vector<double> y0;
  std::vector<double> y1;
  std::vector<double> p;
  std::vector<int> stratum;

  std::size_t size() const { return y0.size(); }
};

// Stratum cut points on the second covariate, from standard-normal quantiles.
// similar: equal masses 1/K. variable: masses 2/(3K) for the first half of
// the strata and 4/(3K) for the second half.
inline std::vector<double> stratum_boundaries(int K, StrataScheme scheme) {
  std::vector<double> b;
  b.push_back(-std::numeric_limits<double>::infinity());
  double cum = 0.0;
  for (int k = 0; k < K - 1; ++k) {
    if (scheme == StrataScheme::similar) {
      cum += 1.0 / K;
    } else {
      cum += (k < K / 2) ? 2.0 / (3.0 * K) : 4.0 / (3.0 * K);
    }
    b.push_back(detail::inv_normal_cdf(cum));
  }
  b.push_back(std::numeric_limits<double>::infinity());
  return b;
}

inline int stratum_of(double x2, const std::vector<double>& boundaries) {
  int k = 0;
  while (x2 >= boundaries[k + 1]) ++k;
  return k;
}

// Multiplies all effects by the unique positive factor making
// |weighted mean effect| / sd equal the target, where the weights are the
// observational stratum frequencies and sd is the dispersion of the baseline
// outcomes.
inline std::pair<std::vector<double>, double> scale_to_cohens_d(
    const std::vector<double>& effects, const std::vector<double>& baseline_outcomes,
    const WeightedLossSpec& weights, double target) {
  if (!(target > 0.0)) throw validation_error("scale_to_cohens_d: target must be positive");
  double mean = 0.0;
  for (double y : baseline_outcomes) mean += y;
  mean /= static_cast<double>(baseline_outcomes.size());
  double var = 0.0;
  for (double y : baseline_outcomes) var += (y - mean) * (y - mean);
  var /= static_cast<double>(baseline_outcomes.size());
  if (!(var > 0.0)) throw validation_error("scale_to_cohens_d: zero outcome dispersion");
  double weighted_effect = 0.0;
  for (std::size_t k = 0; k < effects.size(); ++k) weighted_effect += weights.d[k] * effects[k];
  if (weighted_effect == 0.0)
    throw validation_error("scale_to_cohens_d: weighted mean effect is zero");
  const double factor = target * std::sqrt(var) / std::abs(weighted_effect);
  std::vector<double> scaled(effects);
  for (double& e : scaled) e *= factor;
  return {scaled, factor};
}

struct GeneratedStudies {
  SimPopulation obs;
  SimPopulation rct;
  SimTruth truth;
};

// Samples one outer replicate: covariance, covariates, unmeasured confounder,
// baseline outcomes, stratum labels, Cohen's-d-scaled effects, and true
// observational propensities.
//   X ~ N(mu, Sigma) with mu = 0 (RCT always; obs unless shifted, in which
//   case each entry of mu_o ~ Uniform(-1/2, 1/2)),
//   U = (1/3) 1'X + eta, eta ~ N(0, 1/4),
//   Y(0) = X'beta + U + eps, beta = (1,1,1), eps ~ N(0,1),
//   Y(1) = Y(0) + tau_{stratum},
//   p = 1 / (1 + exp(-(gamma'X + U))) with gamma = beta, so selection
//   aligns with the baseline outcome and induces strong selection bias.
inline GeneratedStudies generate_populations(const SimConfig& config, int outer_rep) {
  config.validate();
  const std::uint64_t outer = static_cast<std::uint64_t>(outer_rep);
  RngStream rng = RngStream::from_path(config.seed, {outer, 0 /* population purpose */});

  const Matrix3 sigma = sample_covariance(rng);
  const Matrix3 chol = cholesky3(sigma);
  std::array<double, 3> mu_o = {0.0, 0.0, 0.0};
  if (config.covariate_shift)
    for (double& m : mu_o) m = rng.uniform(-0.5, 0.5);

  const auto boundaries = stratum_boundaries(config.K, config.strata_scheme);

  auto fill_population = [&](SimPopulation& pop, int n, bool observational) {
    pop.x.resize(n);
    pop.u.resize(n);
    pop.y0.resize(n);
    pop.y1.resize(n);
    pop.stratum.resize(n);
    if (observational) pop.p.resize(n);
    for (int i = 0; i < n; ++i) {
      std::array<double, 3> z = {rng.normal(), rng.normal(), rng.normal()};
      std::array<double, 3>& x = pop.x[i];
      for (int r = 0; r < 3; ++r) {
        x[r] = observational ? mu_o[r] : 0.0;
        for (int c = 0; c <= r; ++c) x[r] += chol[r][c] * z[c];
      }
      pop.u[i] = (x[0] + x[1] + x[2]) / 3.0 + rng.normal(0.0, 0.5);
      pop.y0[i] = x[0] + x[1] + x[2] + pop.u[i] + rng.normal();
      pop.stratum[i] = stratum_of(x[1], boundaries);
      if (observational) {
        const double lin = -(x[0] + x[1] + x[2]) - pop.u[i];  // -(gamma'X + U)
        pop.p[i] = config.confounded ? 1.0 / (1.0 + std::exp(lin)) : 0.5;
      }
    }
  };

  GeneratedStudies out;
  fill_population(out.obs, config.n_o, true);
  fill_population(out.rct, config.n_r, false);

  // per-stratum counts; small test configs can leave a stratum empty
  for (const auto* pop : {&out.obs, &out.rct}) {
    std::vector<int> counts(config.K, 0);
    for (int s : pop->stratum) ++counts[s];
    for (int k = 0; k < config.K; ++k)
      if (counts[k] == 0)
        throw validation_error("generated population left stratum " + std::to_string(k) +
                               " empty; increase sample sizes");
  }

  std::vector<double> raw_effects(config.K);
  for (double& e : raw_effects) e = rng.uniform();
  WeightedLossSpec obs_weights;
  {
    std::vector<long> counts(config.K, 0);
    for (int s : out.obs.stratum) ++counts[s];
    obs_weights.d.resize(config.K);
    for (int k = 0; k < config.K; ++k)
      obs_weights.d[k] = static_cast<double>(counts[k]) / config.n_o;
  }
  const std::vector<double>& baseline = config.cohens_denominator ==
                                                CohensDenominator::observational_y0
                                            ? out.obs.y0
                                            : out.rct.y0;
  auto [scaled, factor] = scale_to_cohens_d(raw_effects, baseline, obs_weights, config.cohens_d);
  out.truth.tau = scaled;
  out.truth.boundaries = boundaries;
  out.truth.cohens_d_factor = factor;

  for (auto* pop : {&out.obs, &out.rct})
    for (std::size_t i = 0; i < pop->size(); ++i)
      pop->y1[i] = pop->y0[i] + scaled[pop->stratum[i]];

  return out;
}

// Draws treatment for one replicate: observational W ~ Bernoulli(p_i),
// RCT floor(n_rk/2) treated per stratum by simple random sampling. Returns
// realized datasets (observed outcomes only).
inline std::pair<StratifiedDataset, StratifiedDataset> assign_treatments(
    const SimPopulation& obs, const SimPopulation& rct, int K, RngStream& rng) {
  StratifiedDataset obs_data, rct_data;
  obs_data.K = rct_data.K = K;
  obs_data.role = StudyRole::observational;
  rct_data.role = StudyRole::randomized;

  obs_data.units.reserve(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    Unit u;
    u.w = rng.bernoulli(obs.p[i]) ? 1 : 0;
    u.y = u.w ? obs.y1[i] : obs.y0[i];
    u.stratum = obs.stratum[i];
    u.x = {obs.x[i][0], obs.x[i][1], obs.x[i][2]};
    obs_data.units.push_back(std::move(u));
  }

  std::vector<std::vector<std::size_t>> by_stratum(K);
  for (std::size_t i = 0; i < rct.size(); ++i) by_stratum[rct.stratum[i]].push_back(i);
  std::vector<int> treated(rct.size(), 0);
  for (int k = 0; k < K; ++k) {
    auto& idx = by_stratum[k];
    const std::size_t n_treat = idx.size() / 2;
    // partial Fisher-Yates: the first n_treat positions form the treated SRS
    for (std::size_t j = 0; j < n_treat; ++j) {
      const std::size_t pick = j + rng.uniform_int(idx.size() - j);
      std::swap(idx[j], idx[pick]);
      treated[idx[j]] = 1;
    }
  }
  rct_data.units.reserve(rct.size());
  for (std::size_t i = 0; i < rct.size(); ++i) {
    Unit u;
    u.w = treated[i];
    u.y = u.w ? rct.y1[i] : rct.y0[i];
    u.stratum = rct.stratum[i];
    u.x = {rct.x[i][0], rct.x[i][1], rct.x[i][2]};
    rct_data.units.push_back(std::move(u));
  }
  return {std::move(obs_data), std::move(rct_data)};
}

// Delta-method approximation to the bias of the unadjusted observational
// difference in means:
//   xi_k = s_tk / pbar_k + s_ck / (1 - pbar_k)
// where s_tk, s_ck are the within-stratum covariances of the potential
// outcomes with the true propensities. Diagnostic only; requires the true p_i.
inline std::vector<double> delta_method_bias(const SimPopulation& obs, int K) {
  std::vector<double> xi(K, 0.0);
  for (int k = 0; k < K; ++k) {
    double n = 0.0, p_mean = 0.0, y1_mean = 0.0, y0_mean = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      if (obs.stratum[i] != k) continue;
      n += 1.0;
      p_mean += obs.p[i];
      y1_mean += obs.y1[i];
      y0_mean += obs.y0[i];
    }
    p_mean /= n;
    y1_mean /= n;
    y0_mean /= n;
    double s_t = 0.0, s_c = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      if (obs.stratum[i] != k) continue;
      s_t += (obs.y1[i] - y1_mean) * (obs.p[i] - p_mean);
      s_c += (obs.y0[i] - y0_mean) * (obs.p[i] - p_mean);
    }
    s_t /= n;
    s_c /= n;
    xi[k] = s_t / p_mean + s_c / (1.0 - p_mean);
  }
  return xi;
}

namespace detail {

inline std::vector<double> observational_estimate(StratifiedDataset& obs_data,
                                                  Adjustment adjustment) {
  if (adjustment == Adjustment::sipw) {
    attach_propensities(obs_data, PropensityMode::per_stratum);
    return sipw(obs_data);
  }
  return diff_in_means(obs_data);
}

}  // namespace detail

// Runs one full simulation condition and summarizes per-estimator risk.
// The oracle's xi and Sigma_o are estimated from auxiliary assignment draws
// (not reused for risk evaluation) within each outer replicate, since the
// finite-sample moments of the adjusted observational estimator have no
// closed form.
inline RiskTable run_condition(const SimConfig& config) {
  config.validate();
  const auto& ids = estimator_ids();
  const std::size_t n_est = ids.size();
  const std::size_t total = static_cast<std::size_t>(config.outer_reps) * config.inner_reps;
  // losses[replicate][estimator], fixed order for deterministic reduction
  std::vector<std::vector<double>> losses(total, std::vector<double>(n_est, 0.0));
  std::vector<SimTruth> truths(config.outer_reps);

  std::atomic<int> next_outer{0};
  std::vector<std::exception_ptr> errors(config.outer_reps);

  auto worker = [&]() {
    for (;;) {
      const int outer = next_outer.fetch_add(1);
      if (outer >= config.outer_reps) return;
      try {
        auto studies = generate_populations(config, outer);
        const std::uint64_t o = static_cast<std::uint64_t>(outer);

        // oracle moments from auxiliary assignment draws
        std::vector<double> xi_mean(config.K, 0.0), xi_m2(config.K, 0.0);
        for (int a = 0; a < config.oracle_aux_draws; ++a) {
          RngStream rng = RngStream::from_path(config.seed, {o, 2, static_cast<std::uint64_t>(a)});
          auto [obs_data, rct_data] =
              assign_treatments(studies.obs, studies.rct, config.K, rng);
          auto tau_o = detail::observational_estimate(obs_data, config.adjustment);
          for (int k = 0; k < config.K; ++k) {
            const double d = tau_o[k] - xi_mean[k];
            xi_mean[k] += d / (a + 1.0);
            xi_m2[k] += d * (tau_o[k] - xi_mean[k]);
          }
        }
        OracleSpec oracle;
        oracle.xi.resize(config.K);
        oracle.sigma_o2.resize(config.K);
        for (int k = 0; k < config.K; ++k) {
          oracle.xi[k] = xi_mean[k] - studies.truth.tau[k];
          oracle.sigma_o2[k] = xi_m2[k] / (config.oracle_aux_draws - 1.0);
        }
        studies.truth.xi_empirical = oracle.xi;
        studies.truth.sigma_o2_empirical = oracle.sigma_o2;
        truths[outer] = studies.truth;

        for (int inner = 0; inner < config.inner_reps; ++inner) {
          try {
            RngStream rng =
                RngStream::from_path(config.seed, {o, 1, static_cast<std::uint64_t>(inner)});
            auto [obs_data, rct_data] =
                assign_treatments(studies.obs, studies.rct, config.K, rng);
            FusionInput fusion;
            fusion.tau_r = diff_in_means(rct_data);
            fusion.sigma_r2 = neyman_variance(rct_data, /*warn_zero=*/false);
            fusion.tau_o = detail::observational_estimate(obs_data, config.adjustment);
            fusion.weights = stratum_weights(obs_data);
            const std::size_t rep = static_cast<std::size_t>(outer) * config.inner_reps + inner;
            for (std::size_t e = 0; e < n_est; ++e) {
              ShrinkageOutput est =
                  ids[e] == "kappa2_plus_star" && config.a2_formula == A2Formula::rederived
                      ? kappa2_family(fusion, Kappa2Variant::plus_star, config.a2_formula)
                      : run_estimator(ids[e], fusion, &oracle);
              losses[rep][e] = weighted_loss(est.estimate, studies.truth.tau, fusion.weights);
            }
          } catch (const std::exception& e) {
            throw std::runtime_error("replicate (outer=" + std::to_string(outer) +
                                     ", inner=" + std::to_string(inner) + ") failed: " + e.what());
          }
        }
      } catch (...) {
        errors[outer] = std::current_exception();
        return;
      }
    }
  };

  unsigned n_threads = config.threads > 0 ? static_cast<unsigned>(config.threads)
                                          : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads, config.outer_reps);
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  RiskTable table;
  double risk_tau_r = 0.0;
  std::vector<double> risks(n_est, 0.0), ses(n_est, 0.0);
  for (std::size_t e = 0; e < n_est; ++e) {
    double mean = 0.0;
    for (std::size_t r = 0; r < total; ++r) mean += losses[r][e];
    mean /= static_cast<double>(total);
    double var = 0.0;
    for (std::size_t r = 0; r < total; ++r)
      var += (losses[r][e] - mean) * (losses[r][e] - mean);
    var /= static_cast<double>(total) - 1.0;
    risks[e] = mean;
    ses[e] = std::sqrt(var / static_cast<double>(total));
    if (ids[e] == "tau_r") risk_tau_r = mean;
  }
  for (std::size_t e = 0; e < n_est; ++e) {
    RiskTable::Row row;
    row.name = ids[e];
    row.risk = risks[e];
    row.se = ses[e];
    row.pct_reduction = 100.0 * (1.0 - risks[e] / risk_tau_r);
    table.rows.push_back(std::move(row));
  }

  nlohmann::json truth_diag = nlohmann::json::array();
  for (const auto& t : truths)
    truth_diag.push_back({{"tau", t.tau},
                          {"xi_empirical", t.xi_empirical},
                          {"sigma_o2_empirical", t.sigma_o2_empirical},
                          {"cohens_d_factor", t.cohens_d_factor}});
  table.metadata = {
      {"n_o", config.n_o},
      {"n_r", config.n_r},
      {"K", config.K},
      {"strata_scheme", config.strata_scheme == StrataScheme::similar ? "similar" : "variable"},
      {"covariate_shift", config.covariate_shift},
      {"adjustment", config.adjustment == Adjustment::sipw ? "sipw" : "none"},
      {"outer_reps", config.outer_reps},
      {"inner_reps", config.inner_reps},
      {"cohens_d", config.cohens_d},
      {"cohens_denominator", config.cohens_denominator == CohensDenominator::observational_y0
                                 ? "observational_y0_sd"
                                 : "rct_y0_sd"},
      {"seed", config.seed},
      {"oracle_aux_draws", config.oracle_aux_draws},
      {"truth", truth_diag}};
  return table;
}

// --- Config and table I/O ---------------------------------------------------

inline nlohmann::json to_json(const SimConfig& c) {
  return {{"n_o", c.n_o},
          {"n_r", c.n_r},
          {"K", c.K},
          {"strata_scheme", c.strata_scheme == StrataScheme::similar ? "similar" : "variable"},
          {"covariate_shift", c.covariate_shift},
          {"adjustment", c.adjustment == Adjustment::sipw ? "sipw" : "none"},
          {"outer_reps", c.outer_reps},
          {"inner_reps", c.inner_reps},
          {"cohens_d", c.cohens_d},
          {"confounded", c.confounded},
          {"seed", c.seed},
          {"oracle_aux_draws", c.oracle_aux_draws},
          {"threads", c.threads},
          {"cohens_denominator", c.cohens_denominator == CohensDenominator::observational_y0
                                     ? "observational_y0_sd"
                                     : "rct_y0_sd"},
          {"a2_formula", c.a2_formula == A2Formula::printed ? "printed" : "rederived"}};
}

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig c;
  try {
    if (j.contains("n_o")) c.n_o = j.at("n_o").get<int>();
    if (j.contains("n_r")) c.n_r = j.at("n_r").get<int>();
    if (j.contains("K")) c.K = j.at("K").get<int>();
    if (j.contains("strata_scheme")) {
      const std::string s = j.at("strata_scheme").get<std::string>();
      if (s == "similar") c.strata_scheme = StrataScheme::similar;
      else if (s == "variable") c.strata_scheme = StrataScheme::variable;
      else throw validation_error("strata_scheme must be 'similar' or 'variable'");
    }
    if (j.contains("covariate_shift")) c.covariate_shift = j.at("covariate_shift").get<bool>();
    if (j.contains("adjustment")) {
      const std::string s = j.at("adjustment").get<std::string>();
      if (s == "none") c.adjustment = Adjustment::none;
      else if (s == "sipw") c.adjustment = Adjustment::sipw;
      else throw validation_error("adjustment must be 'none' or 'sipw'");
    }
    if (j.contains("outer_reps")) c.outer_reps = j.at("outer_reps").get<int>();
    if (j.contains("inner_reps")) c.inner_reps = j.at("inner_reps").get<int>();
    if (j.contains("cohens_d")) c.cohens_d = j.at("cohens_d").get<double>();
    if (j.contains("confounded")) c.confounded = j.at("confounded").get<bool>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("oracle_aux_draws")) c.oracle_aux_draws = j.at("oracle_aux_draws").get<int>();
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();
    if (j.contains("cohens_denominator")) {
      const std::string s = j.at("cohens_denominator").get<std::string>();
      if (s == "observational_y0_sd") c.cohens_denominator = CohensDenominator::observational_y0;
      else if (s == "rct_y0_sd") c.cohens_denominator = CohensDenominator::rct_y0;
      else throw validation_error("cohens_denominator must be 'observational_y0_sd' or 'rct_y0_sd'");
    }
    if (j.contains("a2_formula")) {
      const std::string s = j.at("a2_formula").get<std::string>();
      if (s == "printed") c.a2_formula = A2Formula::printed;
      else if (s == "rederived") c.a2_formula = A2Formula::rederived;
      else throw validation_error("a2_formula must be 'printed' or 'rederived'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("malformed SimConfig JSON: ") + e.what());
  }
  return c;
}

// Full round-trip decimal precision keeps golden CSV files stable.
inline std::string risk_table_csv(const RiskTable& table) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "name,risk,se,pct_reduction\n";
  for (const auto& row : table.rows)
    ss << row.name << ',' << row.risk << ',' << row.se << ',' << row.pct_reduction << '\n';
  return ss.str();
}

inline double risk_of(const RiskTable& table, const std::string& name) {
  for (const auto& row : table.rows)
    if (row.name == name) return row.risk;
  throw std::runtime_error("no such estimator row: " + name);
}

inline const RiskTable::Row& row_of(const RiskTable& table, const std::string& name) {
  for (const auto& row : table.rows)
    if (row.name == name) return row;
  throw std::runtime_error("no such estimator row: " + name);
}

}  // namespace causalfuse
