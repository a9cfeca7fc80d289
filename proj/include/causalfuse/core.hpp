#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace causalfuse {

// User-facing input problem: bad data, bad config. CLI maps this to exit 2.
class validation_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The two estimate vectors coincide, so the URE minimizer is undefined.
class degenerate_input_error : public validation_error {
 public:
  using validation_error::validation_error;
};

// Stratum importance weights d_k for the weighted quadratic loss.
// Every d_k > 0 and the weights sum to 1; the implied diagonal weight matrix
// has entries d_k/K and is never materialized.
struct WeightedLossSpec {
  std::vector<double> d;

  static constexpr double kWeightSumTol = 1e-10;

  std::size_t K() const { return d.size(); }

  static WeightedLossSpec uniform(std::size_t K) {
    return WeightedLossSpec{std::vector<double>(K, 1.0 / static_cast<double>(K))};
  }

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (d.empty()) out.push_back("weight vector is empty (K must be >= 1)");
    double sum = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (!(d[k] > 0.0)) {
        std::ostringstream ss;
        ss << "nonpositive weight " << d[k] << " at index " << k;
        out.push_back(ss.str());
      }
      sum += d[k];
    }
    if (!d.empty() && std::abs(sum - 1.0) > kWeightSumTol) {
      std::ostringstream ss;
      ss << "weights sum " << sum << " != 1";
      out.push_back(ss.str());
    }
    return out;
  }

  // Rescales to sum 1. Only called on explicit request; inputs are never
  // silently normalized.
  WeightedLossSpec normalized() const {
    double sum = 0.0;
    for (double w : d) sum += w;
    if (!(sum > 0.0)) throw validation_error("cannot normalize weights with nonpositive sum");
    WeightedLossSpec out = *this;
    for (double& w : out.d) w /= sum;
    return out;
  }
};

// The pair of estimate vectors every fused estimator consumes: the unbiased
// RCT estimate tau_r with variances sigma_r2, and the possibly biased
// observational estimate tau_o (variances sigma_o2 when known).
struct FusionInput {
  std::vector<double> tau_r;
  std::vector<double> tau_o;
  std::vector<double> sigma_r2;
  std::optional<std::vector<double>> sigma_o2;
  WeightedLossSpec weights;

  std::size_t K() const { return tau_r.size(); }
};

// True bias and observational variances; known only in simulation.
struct OracleSpec {
  std::vector<double> xi;
  std::vector<double> sigma_o2;
};

// A fused estimate. factors[k] is the weight placed on tau_o[k]; for
// positive-part estimators it lies in [0,1], while the un-truncated base
// estimators may exceed 1 (the effective factor is still reported here).
struct ShrinkageOutput {
  std::vector<double> estimate;
  std::vector<double> factors;
  std::string method;
  std::map<std::string, double> diagnostics;
};

inline std::vector<std::string> validate_fusion_input(const FusionInput& in) {
  std::vector<std::string> out = in.weights.violations();
  const std::size_t K = in.weights.K();
  auto check_len = [&](const std::vector<double>& v, const char* name) {
    if (v.size() != K) {
      std::ostringstream ss;
      ss << name << " has length " << v.size() << ", expected K = " << K;
      out.push_back(ss.str());
      return false;
    }
    return true;
  };
  check_len(in.tau_r, "tau_r");
  check_len(in.tau_o, "tau_o");
  if (check_len(in.sigma_r2, "sigma_r2")) {
    for (std::size_t k = 0; k < in.sigma_r2.size(); ++k) {
      if (!(in.sigma_r2[k] > 0.0)) {
        std::ostringstream ss;
        ss << "nonpositive RCT variance at index " << k;
        out.push_back(ss.str());
      }
    }
  }
  if (in.sigma_o2 && check_len(*in.sigma_o2, "sigma_o2")) {
    for (std::size_t k = 0; k < in.sigma_o2->size(); ++k) {
      if ((*in.sigma_o2)[k] < 0.0) {
        std::ostringstream ss;
        ss << "negative observational variance at index " << k;
        out.push_back(ss.str());
      }
    }
  }
  for (const auto* v : {&in.tau_r, &in.tau_o, &in.sigma_r2}) {
    for (double x : *v) {
      if (!std::isfinite(x)) {
        out.push_back("non-finite value in input vectors");
        return out;
      }
    }
  }
  return out;
}

inline void ensure_valid(const FusionInput& in) {
  auto errs = validate_fusion_input(in);
  if (!errs.empty()) {
    std::string msg = "invalid fusion input:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw validation_error(msg);
  }
}

// L(tau, tau_hat) = (1/K) sum_k d_k (tau_hat_k - tau_k)^2
inline double weighted_loss(const std::vector<double>& tau_hat,
                            const std::vector<double>& tau,
                            const WeightedLossSpec& weights) {
  const std::size_t K = weights.K();
  if (tau_hat.size() != K || tau.size() != K) {
    std::ostringstream ss;
    ss << "weighted_loss: lengths " << tau_hat.size() << ", " << tau.size()
       << " do not match K = " << K;
    throw validation_error(ss.str());
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double r = tau_hat[k] - tau[k];
    acc += weights.d[k] * r * r;
  }
  return acc / static_cast<double>(K);
}

// --- JSON serialization -----------------------------------------------------

inline nlohmann::json to_json(const FusionInput& in) {
  nlohmann::json j;
  j["tau_r"] = in.tau_r;
  j["tau_o"] = in.tau_o;
  j["sigma_r2"] = in.sigma_r2;
  if (in.sigma_o2) j["sigma_o2"] = *in.sigma_o2;
  j["d"] = in.weights.d;
  return j;
}

inline FusionInput fusion_input_from_json(const nlohmann::json& j) {
  FusionInput in;
  try {
    in.tau_r = j.at("tau_r").get<std::vector<double>>();
    in.tau_o = j.at("tau_o").get<std::vector<double>>();
    in.sigma_r2 = j.at("sigma_r2").get<std::vector<double>>();
    if (j.contains("sigma_o2") && !j.at("sigma_o2").is_null())
      in.sigma_o2 = j.at("sigma_o2").get<std::vector<double>>();
    in.weights.d = j.at("d").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("malformed FusionInput JSON: ") + e.what());
  }
  return in;
}

inline nlohmann::json to_json(const ShrinkageOutput& out) {
  nlohmann::json j;
  j["method"] = out.method;
  j["estimate"] = out.estimate;
  j["factors"] = out.factors;
  j["diagnostics"] = out.diagnostics;
  return j;
}

}  // namespace causalfuse
