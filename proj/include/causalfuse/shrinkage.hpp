#pragma once

// Shrinkage estimators fusing an unbiased estimate tau_r with a biased
// estimate tau_o under the weighted quadratic loss. Two families:
//   kappa1: one shared shrinkage factor, chosen by minimizing an unbiased
//           risk estimate (URE);
//   kappa2: per-component factors proportional to the RCT variances.
// Each has a positive-part variant (factor clamped into [0,1]) and a
// "star" variant applying a data-estimated scaling correction. The
// Green-Strawderman estimators delta1/delta2 and the infeasible oracle
// convex combination serve as baselines.
//
// Sigma_r, Sigma_o and the loss weight matrix are all diagonal, so every
// quadratic form reduces to a weighted sum over components; no matrix is
// ever inverted or materialized.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"

namespace causalfuse {

namespace detail {

// Tr(Sigma_r D) = (1/K) sum_k d_k sigma_rk^2
inline double trace_sigma_d(const FusionInput& in) {
  double acc = 0.0;
  for (std::size_t k = 0; k < in.K(); ++k) acc += in.weights.d[k] * in.sigma_r2[k];
  return acc / static_cast<double>(in.K());
}

// Tr(Sigma_r^2 D) = (1/K) sum_k d_k sigma_rk^4
inline double trace_sigma2_d(const FusionInput& in) {
  double acc = 0.0;
  for (std::size_t k = 0; k < in.K(); ++k)
    acc += in.weights.d[k] * in.sigma_r2[k] * in.sigma_r2[k];
  return acc / static_cast<double>(in.K());
}

// delta = tau_o - tau_r
inline std::vector<double> discrepancy(const FusionInput& in) {
  std::vector<double> delta(in.K());
  for (std::size_t k = 0; k < in.K(); ++k) delta[k] = in.tau_o[k] - in.tau_r[k];
  return delta;
}

// sum_k w_k delta_k^2 for an arbitrary per-component weight functor
template <typename WeightFn>
double weighted_quad(const FusionInput& in, const std::vector<double>& delta, WeightFn w) {
  double acc = 0.0;
  for (std::size_t k = 0; k < in.K(); ++k) acc += w(k) * delta[k] * delta[k];
  return acc;
}

// delta' D delta with D = diag(d_k/K)
inline double quad_d(const FusionInput& in, const std::vector<double>& delta) {
  const double K = static_cast<double>(in.K());
  return weighted_quad(in, delta, [&](std::size_t k) { return in.weights.d[k] / K; });
}

inline void require_distinct(const FusionInput& in, const std::vector<double>& delta) {
  for (double x : delta)
    if (x != 0.0) return;
  throw degenerate_input_error(
      "tau_o equals tau_r: the URE is flat in the shrinkage factor, so any "
      "factor is URE-optimal; no unique estimator is defined");
}

inline ShrinkageOutput convex_combination(const FusionInput& in,
                                          const std::vector<double>& factors,
                                          std::string method) {
  ShrinkageOutput out;
  out.factors = factors;
  out.method = std::move(method);
  out.estimate.resize(in.K());
  for (std::size_t k = 0; k < in.K(); ++k)
    out.estimate[k] = (1.0 - factors[k]) * in.tau_r[k] + factors[k] * in.tau_o[k];
  return out;
}

}  // namespace detail

// URE of the shared-factor estimator kappa(lambda) = tau_r - lambda(tau_r - tau_o)
// with lambda treated as fixed:
//   Tr(Sigma_r D) + lambda^2 delta' D delta - 2 lambda Tr(Sigma_r D)
inline double ure_common_factor(double lambda, const FusionInput& in) {
  ensure_valid(in);
  const auto delta = detail::discrepancy(in);
  const double tr = detail::trace_sigma_d(in);
  return tr + lambda * lambda * detail::quad_d(in, delta) - 2.0 * lambda * tr;
}

// URE of the variance-weighted estimator kappa(lambda Sigma_r), lambda fixed:
//   Tr(Sigma_r D) + lambda^2 delta' Sigma_r^2 D delta - 2 lambda Tr(Sigma_r^2 D)
inline double ure_variance_weighted(double lambda, const FusionInput& in) {
  ensure_valid(in);
  const auto delta = detail::discrepancy(in);
  const double K = static_cast<double>(in.K());
  const double quad = detail::weighted_quad(in, delta, [&](std::size_t k) {
    return in.weights.d[k] * in.sigma_r2[k] * in.sigma_r2[k] / K;
  });
  return detail::trace_sigma_d(in) + lambda * lambda * quad -
         2.0 * lambda * detail::trace_sigma2_d(in);
}

// Minimizer of ure_common_factor: Tr(Sigma_r D) / (delta' D delta)
inline double lambda1_ure(const FusionInput& in) {
  ensure_valid(in);
  const auto delta = detail::discrepancy(in);
  detail::require_distinct(in, delta);
  return detail::trace_sigma_d(in) / detail::quad_d(in, delta);
}

// Minimizer of ure_variance_weighted:
//   Tr(Sigma_r^2 D) / (delta' Sigma_r^2 D delta)
inline double lambda2_ure(const FusionInput& in) {
  ensure_valid(in);
  const auto delta = detail::discrepancy(in);
  detail::require_distinct(in, delta);
  const double K = static_cast<double>(in.K());
  const double quad = detail::weighted_quad(in, delta, [&](std::size_t k) {
    return in.weights.d[k] * in.sigma_r2[k] * in.sigma_r2[k] / K;
  });
  return detail::trace_sigma2_d(in) / quad;
}

// Scaling correction accounting for lambda1 being estimated from the data:
//   a1* = 1 - 2 (delta' D^2 Sigma_r delta)/(delta' D delta) / Tr(Sigma_r D)
inline double a1_star(const FusionInput& in) {
  ensure_valid(in);
  const auto delta = detail::discrepancy(in);
  detail::require_distinct(in, delta);
  const double K = static_cast<double>(in.K());
  const double num = detail::weighted_quad(in, delta, [&](std::size_t k) {
    const double dk = in.weights.d[k] / K;
    return dk * dk * in.sigma_r2[k];
  });
  return 1.0 - 2.0 * (num / detail::quad_d(in, delta)) / detail::trace_sigma_d(in);
}

// Which trailing trace the a2* correction divides by. `printed` follows the
// source formula (1/Tr(Sigma_r D)); `rederived` is the variant obtained by
// redoing the URE minimization over the scaling, which instead yields
// numerator delta' D^2 Sigma_r^3 delta and trailing 1/Tr(Sigma_r^2 D).
enum class A2Formula { printed, rederived };

inline double a2_star(const FusionInput& in, A2Formula formula = A2Formula::printed) {
  ensure_valid(in);
  const auto delta = detail::discrepancy(in);
  detail::require_distinct(in, delta);
  const double K = static_cast<double>(in.K());
  const double quad_s2d = detail::weighted_quad(in, delta, [&](std::size_t k) {
    return in.weights.d[k] * in.sigma_r2[k] * in.sigma_r2[k] / K;
  });
  if (formula == A2Formula::printed) {
    const double num = detail::weighted_quad(in, delta, [&](std::size_t k) {
      const double dk = in.weights.d[k] / K;
      const double s2 = in.sigma_r2[k];
      return dk * dk * s2 * s2 * s2 * s2;
    });
    return 1.0 - 2.0 * (num / quad_s2d) / detail::trace_sigma_d(in);
  }
  const double num = detail::weighted_quad(in, delta, [&](std::size_t k) {
    const double dk = in.weights.d[k] / K;
    const double s2 = in.sigma_r2[k];
    return dk * dk * s2 * s2 * s2;
  });
  return 1.0 - 2.0 * (num / quad_s2d) / detail::trace_sigma2_d(in);
}

// kappa1: tau_r - lambda1 (tau_r - tau_o). The shared factor may exceed 1.
inline ShrinkageOutput kappa1(const FusionInput& in) {
  const double lambda = lambda1_ure(in);
  auto out = detail::convex_combination(in, std::vector<double>(in.K(), lambda), "kappa1");
  out.diagnostics["lambda_ure"] = lambda;
  return out;
}

// kappa1+: the shared factor clamped into [0,1]. Defined for tau_o == tau_r
// (both candidates coincide; the positive-part limit gives factor 1).
inline ShrinkageOutput kappa1_plus(const FusionInput& in) {
  ensure_valid(in);
  const auto delta = detail::discrepancy(in);
  double lambda_raw = std::numeric_limits<double>::infinity();
  const double quad = detail::quad_d(in, delta);
  if (quad > 0.0) lambda_raw = detail::trace_sigma_d(in) / quad;
  const double lambda = std::min(lambda_raw, 1.0);
  auto out = detail::convex_combination(in, std::vector<double>(in.K(), lambda), "kappa1_plus");
  out.diagnostics["lambda_ure"] = lambda_raw;
  return out;
}

// kappa1*: tau_r - a1* lambda1 (tau_r - tau_o). The plus variant clamps the
// combined factor a1* lambda1 into [0,1].
inline ShrinkageOutput kappa1_star(const FusionInput& in, bool positive_part = true) {
  const double lambda = lambda1_ure(in);
  const double a = a1_star(in);
  double factor = a * lambda;
  if (positive_part) factor = std::clamp(factor, 0.0, 1.0);
  auto out = detail::convex_combination(
      in, std::vector<double>(in.K(), factor),
      positive_part ? "kappa1_plus_star" : "kappa1_star");
  out.diagnostics["lambda_ure"] = lambda;
  out.diagnostics["a_star"] = a;
  return out;
}

enum class Kappa2Variant { plain, plus, plus_star };

// kappa2 family: per-component factor f_k = a * lambda2 * sigma_rk^2 with
// a = 1 (plain, plus) or a = a2* clamped below at 0 (plus_star). The plus
// variants clamp each f_k into [0,1] componentwise.
inline ShrinkageOutput kappa2_family(const FusionInput& in, Kappa2Variant variant,
                                     A2Formula formula = A2Formula::printed) {
  const double lambda = lambda2_ure(in);
  double a = 1.0;
  double a_raw = 1.0;
  if (variant == Kappa2Variant::plus_star) {
    a_raw = a2_star(in, formula);
    a = std::max(a_raw, 0.0);
  }
  std::vector<double> factors(in.K());
  for (std::size_t k = 0; k < in.K(); ++k) {
    double f = a * lambda * in.sigma_r2[k];
    if (variant != Kappa2Variant::plain) f = std::clamp(f, 0.0, 1.0);
    factors[k] = f;
  }
  const char* name = variant == Kappa2Variant::plain   ? "kappa2"
                     : variant == Kappa2Variant::plus  ? "kappa2_plus"
                                                       : "kappa2_plus_star";
  auto out = detail::convex_combination(in, factors, name);
  out.diagnostics["lambda_ure"] = lambda;
  if (variant == Kappa2Variant::plus_star) {
    out.diagnostics["a_star"] = a_raw;
    out.diagnostics["a_star_clamped"] = (a_raw < 0.0) ? 1.0 : 0.0;
  }
  return out;
}

// Green-Strawderman delta1, shrinking under precision-weighted loss:
//   tau_o + (1 - a / ((tau_r-tau_o)' Sigma_r^-1 (tau_r-tau_o)))_+ (tau_r - tau_o)
// Default a = K - 2 requires K >= 3.
inline ShrinkageOutput gs_delta1(const FusionInput& in,
                                 std::optional<double> a = std::nullopt) {
  ensure_valid(in);
  if (!a) {
    if (in.K() < 3)
      throw validation_error("gs_delta1 default a = K-2 requires K >= 3");
    a = static_cast<double>(in.K()) - 2.0;
  }
  const auto delta = detail::discrepancy(in);
  double quad = 0.0;  // (tau_r-tau_o)' Sigma_r^-1 (tau_r-tau_o)
  for (std::size_t k = 0; k < in.K(); ++k) quad += delta[k] * delta[k] / in.sigma_r2[k];
  // coincident inputs: shrink all the way to tau_o
  const double f = quad > 0.0 ? std::max(1.0 - *a / quad, 0.0) : 0.0;
  auto out = detail::convex_combination(in, std::vector<double>(in.K(), 1.0 - f), "gs_delta1");
  out.diagnostics["a"] = *a;
  out.diagnostics["quad_form"] = quad;
  return out;
}

// Green-Strawderman delta2, for unweighted squared error:
//   tau_o + (I - a Sigma_r^-1 / ((tau_r-tau_o)' Sigma_r^-2 (tau_r-tau_o)))(tau_r - tau_o)
// with each diagonal factor clamped into [0,1].
inline ShrinkageOutput gs_delta2(const FusionInput& in,
                                 std::optional<double> a = std::nullopt) {
  ensure_valid(in);
  if (!a) {
    if (in.K() < 3)
      throw validation_error("gs_delta2 default a = K-2 requires K >= 3");
    a = static_cast<double>(in.K()) - 2.0;
  }
  const auto delta = detail::discrepancy(in);
  double quad = 0.0;  // (tau_r-tau_o)' Sigma_r^-2 (tau_r-tau_o)
  for (std::size_t k = 0; k < in.K(); ++k)
    quad += delta[k] * delta[k] / (in.sigma_r2[k] * in.sigma_r2[k]);
  std::vector<double> factors(in.K());
  for (std::size_t k = 0; k < in.K(); ++k) {
    const double f = quad > 0.0 ? std::clamp(1.0 - *a / (in.sigma_r2[k] * quad), 0.0, 1.0) : 0.0;
    factors[k] = 1.0 - f;  // weight on tau_o
  }
  auto out = detail::convex_combination(in, factors, "gs_delta2");
  out.diagnostics["a"] = *a;
  out.diagnostics["quad_form"] = quad;
  return out;
}

// Infeasible MSE-optimal convex-combination weight on tau_r:
//   Tr(Sigma_r D) / (Tr(Sigma_r D) + Tr(Sigma_o D) + xi' D xi)
// This is the population limit of the kappa1+ factor, since
// E[Delta' D Delta] = Tr(Sigma_r D) + Tr(Sigma_o D) + xi' D xi.
inline double oracle_lambda(const std::vector<double>& sigma_r2, const OracleSpec& oracle,
                            const WeightedLossSpec& weights) {
  const std::size_t K = weights.K();
  if (sigma_r2.size() != K || oracle.xi.size() != K || oracle.sigma_o2.size() != K)
    throw validation_error("oracle_lambda: input lengths do not match K");
  const double Kd = static_cast<double>(K);
  double tr_r = 0.0, tr_o = 0.0, xi_quad = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double dk = weights.d[k] / Kd;
    tr_r += dk * sigma_r2[k];
    tr_o += dk * oracle.sigma_o2[k];
    xi_quad += dk * oracle.xi[k] * oracle.xi[k];
  }
  return tr_r / (tr_r + tr_o + xi_quad);
}

inline ShrinkageOutput oracle_estimator(const FusionInput& in, const OracleSpec& oracle) {
  ensure_valid(in);
  const double lambda = oracle_lambda(in.sigma_r2, oracle, in.weights);
  auto out = detail::convex_combination(in, std::vector<double>(in.K(), lambda), "oracle");
  out.diagnostics["lambda_opt"] = lambda;
  return out;
}

// Shrinkage factor implied by kappa1+ with the a1* correction applied inside
// the positive part; this is the target of the implied-Gamma search.
inline double lambda1_plus_corrected(const FusionInput& in) {
  ensure_valid(in);
  const auto delta = detail::discrepancy(in);
  detail::require_distinct(in, delta);
  const double ratio = a1_star(in) * detail::trace_sigma_d(in) / detail::quad_d(in, delta);
  return 1.0 - std::max(1.0 - ratio, 0.0);
}

// Finite-sample dominance checks. Each margin is (left side - right side) of
// the inequality; the condition holds iff the margin is <= 0.
//   lemma1: 4 max_k d_k sigma_rk^2        <= sum_k d_k sigma_rk^2      (kappa1 beats tau_r)
//   lemma2: max_k d_k^2 sigma_rk^4        <= 3/2 (min_k d_k sigma_rk^2)^2  (kappa1* beats kappa1)
//   lemma3: 4 max_k d_k^2 sigma_rk^4      <= sum_k d_k^2 sigma_rk^4    (kappa2 beats tau_r)
struct DominanceReport {
  bool lemma1_holds = false;
  bool lemma2_holds = false;
  bool lemma3_holds = false;
  double margin1 = 0.0;
  double margin2 = 0.0;
  double margin3 = 0.0;
};

inline DominanceReport check_dominance_conditions(const std::vector<double>& sigma_r2,
                                                  const WeightedLossSpec& weights) {
  const std::size_t K = weights.K();
  if (sigma_r2.size() != K)
    throw validation_error("check_dominance_conditions: sigma_r2 length does not match K");
  double max_ds = 0.0, sum_ds = 0.0, max_d2s2 = 0.0, sum_d2s2 = 0.0;
  double min_ds = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    const double ds = weights.d[k] * sigma_r2[k];
    max_ds = std::max(max_ds, ds);
    min_ds = std::min(min_ds, ds);
    sum_ds += ds;
    max_d2s2 = std::max(max_d2s2, ds * ds);
    sum_d2s2 += ds * ds;
  }
  DominanceReport rep;
  rep.margin1 = 4.0 * max_ds - sum_ds;
  rep.margin2 = max_d2s2 - 1.5 * min_ds * min_ds;
  rep.margin3 = 4.0 * max_d2s2 - sum_d2s2;
  rep.lemma1_holds = rep.margin1 <= 0.0;
  rep.lemma2_holds = rep.margin2 <= 0.0;
  rep.lemma3_holds = rep.margin3 <= 0.0;
  return rep;
}

// --- Estimator registry -----------------------------------------------------

inline const std::vector<std::string>& estimator_ids() {
  static const std::vector<std::string> ids = {
      "tau_r",      "tau_o",           "kappa1",      "kappa1_plus",
      "kappa1_plus_star", "kappa2",    "kappa2_plus", "kappa2_plus_star",
      "gs_delta1",  "gs_delta2",       "oracle"};
  return ids;
}

// Runs the estimator with the given stable id. `oracle` is required only for
// id "oracle".
inline ShrinkageOutput run_estimator(const std::string& id, const FusionInput& in,
                                     const OracleSpec* oracle = nullptr) {
  if (id == "tau_r") {
    ensure_valid(in);
    return detail::convex_combination(in, std::vector<double>(in.K(), 0.0), "tau_r");
  }
  if (id == "tau_o") {
    ensure_valid(in);
    return detail::convex_combination(in, std::vector<double>(in.K(), 1.0), "tau_o");
  }
  if (id == "kappa1") return kappa1(in);
  if (id == "kappa1_plus") return kappa1_plus(in);
  if (id == "kappa1_plus_star") return kappa1_star(in, /*positive_part=*/true);
  if (id == "kappa2") return kappa2_family(in, Kappa2Variant::plain);
  if (id == "kappa2_plus") return kappa2_family(in, Kappa2Variant::plus);
  if (id == "kappa2_plus_star") return kappa2_family(in, Kappa2Variant::plus_star);
  if (id == "gs_delta1") return gs_delta1(in);
  if (id == "gs_delta2") return gs_delta2(in);
  if (id == "oracle") {
    if (oracle == nullptr)
      throw validation_error("estimator 'oracle' requires true bias and variance (xi, sigma_o2)");
    return oracle_estimator(in, *oracle);
  }
  std::string msg = "unknown estimator id '" + id + "'; valid ids:";
  for (const auto& known : estimator_ids()) msg += " " + known;
  throw validation_error(msg);
}

}  // namespace causalfuse
