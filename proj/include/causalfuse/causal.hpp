#pragma once

// Turns unit-level study data into the stratum-wise effect vectors and
// variance estimates that form a FusionInput: stratified difference in means,
// stabilized inverse probability weighting (SIPW), the Neyman variance
// estimate, logistic propensity fitting, and observational-frequency stratum
// weights.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"

namespace causalfuse {

struct Unit {
  double y = 0.0;
  int w = 0;  // treatment indicator, 0 or 1
  int stratum = 0;
  std::vector<double> x;
  std::optional<double> p_hat;
};

enum class StudyRole { observational, randomized };

struct StratifiedDataset {
  std::vector<Unit> units;
  int K = 0;
  StudyRole role = StudyRole::observational;

  std::vector<std::size_t> stratum_indices(int k) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < units.size(); ++i)
      if (units[i].stratum == k) out.push_back(i);
    return out;
  }
};

namespace detail {

// Compensated summation so per-stratum reductions are bitwise-stable no
// matter how the work is chunked.
struct KahanSum {
  double sum = 0.0;
  double c = 0.0;
  void add(double x) {
    const double y = x - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
};

inline void check_units(const StratifiedDataset& data) {
  for (std::size_t i = 0; i < data.units.size(); ++i) {
    const Unit& u = data.units[i];
    if (u.w != 0 && u.w != 1)
      throw validation_error("unit " + std::to_string(i) + ": treatment indicator must be 0 or 1");
    if (u.stratum < 0 || u.stratum >= data.K)
      throw validation_error("unit " + std::to_string(i) + ": stratum " +
                             std::to_string(u.stratum) + " outside [0," +
                             std::to_string(data.K) + ")");
    if (u.p_hat && !(*u.p_hat > 0.0 && *u.p_hat < 1.0))
      throw validation_error("unit " + std::to_string(i) +
                             ": p_hat must lie strictly inside (0,1)");
  }
}

}  // namespace detail

// Per-stratum difference of arm means.
inline std::vector<double> diff_in_means(const StratifiedDataset& data) {
  detail::check_units(data);
  std::vector<detail::KahanSum> sum_t(data.K), sum_c(data.K);
  std::vector<long> n_t(data.K, 0), n_c(data.K, 0);
  for (const Unit& u : data.units) {
    if (u.w == 1) {
      sum_t[u.stratum].add(u.y);
      ++n_t[u.stratum];
    } else {
      sum_c[u.stratum].add(u.y);
      ++n_c[u.stratum];
    }
  }
  std::vector<double> out(data.K);
  for (int k = 0; k < data.K; ++k) {
    if (n_t[k] == 0)
      throw validation_error("stratum " + std::to_string(k) + ": treated arm is empty");
    if (n_c[k] == 0)
      throw validation_error("stratum " + std::to_string(k) + ": control arm is empty");
    out[k] = sum_t[k].sum / static_cast<double>(n_t[k]) -
             sum_c[k].sum / static_cast<double>(n_c[k]);
  }
  return out;
}

// Stabilized IPW contrast per stratum:
//   sum(y/p)/sum(1/p)  -  sum(y/(1-p))/sum(1/(1-p))
// over the treated and control arms respectively.
inline std::vector<double> sipw(const StratifiedDataset& data) {
  detail::check_units(data);
  std::vector<detail::KahanSum> num_t(data.K), den_t(data.K), num_c(data.K), den_c(data.K);
  std::vector<long> n_t(data.K, 0), n_c(data.K, 0);
  for (std::size_t i = 0; i < data.units.size(); ++i) {
    const Unit& u = data.units[i];
    if (!u.p_hat)
      throw validation_error("unit " + std::to_string(i) + ": missing p_hat required for SIPW");
    if (u.w == 1) {
      num_t[u.stratum].add(u.y / *u.p_hat);
      den_t[u.stratum].add(1.0 / *u.p_hat);
      ++n_t[u.stratum];
    } else {
      num_c[u.stratum].add(u.y / (1.0 - *u.p_hat));
      den_c[u.stratum].add(1.0 / (1.0 - *u.p_hat));
      ++n_c[u.stratum];
    }
  }
  std::vector<double> out(data.K);
  for (int k = 0; k < data.K; ++k) {
    if (n_t[k] == 0)
      throw validation_error("stratum " + std::to_string(k) + ": treated arm is empty");
    if (n_c[k] == 0)
      throw validation_error("stratum " + std::to_string(k) + ": control arm is empty");
    out[k] = num_t[k].sum / den_t[k].sum - num_c[k].sum / den_c[k].sum;
  }
  return out;
}

// Neyman-style variance of the stratum difference in means, using 1/n (not
// 1/(n-1)) centering normalization within each arm:
//   sigma_hat_k^2 = (1/n_t^2) sum_t (y - ybar_t)^2 + (1/n_c^2) sum_c (y - ybar_c)^2
// The 1/n centering underestimates the usual s^2/(n-1) convention slightly in
// small samples.
inline std::vector<double> neyman_variance(const StratifiedDataset& data,
                                           bool warn_zero = true) {
  detail::check_units(data);
  std::vector<std::vector<double>> yt(data.K), yc(data.K);
  for (const Unit& u : data.units) (u.w == 1 ? yt : yc)[u.stratum].push_back(u.y);
  std::vector<double> out(data.K);
  for (int k = 0; k < data.K; ++k) {
    for (const auto* arm : {&yt[k], &yc[k]}) {
      const char* arm_name = arm == &yt[k] ? "treated" : "control";
      if (arm->size() < 2)
        throw validation_error("stratum " + std::to_string(k) + ": " + arm_name +
                               " arm has fewer than 2 units; variance is undefined");
      const double n = static_cast<double>(arm->size());
      detail::KahanSum mean_acc;
      for (double y : *arm) mean_acc.add(y);
      const double mean = mean_acc.sum / n;
      detail::KahanSum ss;
      for (double y : *arm) ss.add((y - mean) * (y - mean));
      out[k] += ss.sum / (n * n);
    }
    if (warn_zero && out[k] == 0.0)
      std::cerr << "warning: stratum " << k
                << " has zero estimated variance; downstream shrinkage factors "
                   "will be degenerate\n";
  }
  return out;
}

// Logistic regression fitted probabilities via iteratively reweighted least
// squares on an intercept-augmented design. Converges when the max absolute
// coefficient change drops below 1e-8, capped at 100 iterations. Fitted
// probabilities are clipped to [1e-6, 1 - 1e-6].
inline std::vector<double> fit_propensity(const std::vector<std::vector<double>>& X,
                                          const std::vector<int>& w) {
  const std::size_t n = X.size();
  if (n == 0 || w.size() != n)
    throw validation_error("fit_propensity: empty design or length mismatch");
  const std::size_t p = X[0].size() + 1;  // with intercept
  if (n <= p)
    throw validation_error("fit_propensity: need more observations than coefficients");
  for (const auto& row : X)
    if (row.size() + 1 != p)
      throw validation_error("fit_propensity: ragged design matrix");

  std::vector<double> beta(p, 0.0), eta(n, 0.0), mu(n, 0.5);
  std::vector<double> xtwx(p * p), xtwz(p);
  auto xij = [&](std::size_t i, std::size_t j) { return j == 0 ? 1.0 : X[i][j - 1]; };

  for (int iter = 0; iter < 100; ++iter) {
    std::fill(xtwx.begin(), xtwx.end(), 0.0);
    std::fill(xtwz.begin(), xtwz.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double wt = mu[i] * (1.0 - mu[i]);
      const double z = eta[i] + (static_cast<double>(w[i]) - mu[i]) / wt;
      for (std::size_t j = 0; j < p; ++j) {
        const double xw = xij(i, j) * wt;
        xtwz[j] += xw * z;
        for (std::size_t l = j; l < p; ++l) xtwx[j * p + l] += xw * xij(i, l);
      }
    }
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t l = 0; l < j; ++l) xtwx[j * p + l] = xtwx[l * p + j];

    // Cholesky solve; a tiny pivot signals a rank-deficient design.
    std::vector<double> chol(xtwx);
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t l = j; l < p; ++l) {
        double s = chol[l * p + j];
        for (std::size_t m = 0; m < j; ++m) s -= chol[j * p + m] * chol[l * p + m];
        if (l == j) {
          if (s <= 1e-12 * (1.0 + std::abs(xtwx[j * p + j])))
            throw validation_error(
                "fit_propensity: rank-deficient design (collinear columns)");
          chol[j * p + j] = std::sqrt(s);
        } else {
          chol[l * p + j] = s / chol[j * p + j];
        }
      }
    }
    std::vector<double> sol(xtwz);
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t m = 0; m < j; ++m) sol[j] -= chol[j * p + m] * sol[m];
      sol[j] /= chol[j * p + j];
    }
    for (std::size_t jr = p; jr-- > 0;) {
      for (std::size_t m = jr + 1; m < p; ++m) sol[jr] -= chol[m * p + jr] * sol[m];
      sol[jr] /= chol[jr * p + jr];
    }

    double max_change = 0.0, max_coef = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      max_change = std::max(max_change, std::abs(sol[j] - beta[j]));
      max_coef = std::max(max_coef, std::abs(sol[j]));
    }
    beta = sol;
    if (max_coef > 1e3)
      throw validation_error(
          "fit_propensity: divergent coefficients (perfect separation)");
    for (std::size_t i = 0; i < n; ++i) {
      double e = 0.0;
      for (std::size_t j = 0; j < p; ++j) e += xij(i, j) * beta[j];
      eta[i] = e;
      mu[i] = 1.0 / (1.0 + std::exp(-e));
      mu[i] = std::clamp(mu[i], 1e-10, 1.0 - 1e-10);
    }
    if (max_change < 1e-8) break;
  }

  std::vector<double> probs(n);
  for (std::size_t i = 0; i < n; ++i) probs[i] = std::clamp(mu[i], 1e-6, 1.0 - 1e-6);
  return probs;
}

enum class PropensityMode { shared, per_stratum };

// Fits propensities from covariates and stores them on the units. `shared`
// fits one model across all strata (subgroup interpretation, the default);
// `per_stratum` fits one model per stratum (multi-arm interpretation).
inline void attach_propensities(StratifiedDataset& data,
                                PropensityMode mode = PropensityMode::shared) {
  if (data.units.empty()) return;
  if (data.units.front().x.empty())
    throw validation_error(
        "cannot fit propensities: no covariates present; supply covariate "
        "columns or precomputed p_hat");
  if (mode == PropensityMode::shared) {
    std::vector<std::vector<double>> X;
    std::vector<int> w;
    X.reserve(data.units.size());
    for (const Unit& u : data.units) {
      X.push_back(u.x);
      w.push_back(u.w);
    }
    auto probs = fit_propensity(X, w);
    for (std::size_t i = 0; i < data.units.size(); ++i) data.units[i].p_hat = probs[i];
  } else {
    for (int k = 0; k < data.K; ++k) {
      auto idx = data.stratum_indices(k);
      std::vector<std::vector<double>> X;
      std::vector<int> w;
      for (std::size_t i : idx) {
        X.push_back(data.units[i].x);
        w.push_back(data.units[i].w);
      }
      auto probs = fit_propensity(X, w);
      for (std::size_t j = 0; j < idx.size(); ++j) data.units[idx[j]].p_hat = probs[j];
    }
  }
}

// d_k proportional to observational stratum counts, summing to 1.
inline WeightedLossSpec stratum_weights(const StratifiedDataset& data) {
  std::vector<long> counts(data.K, 0);
  for (const Unit& u : data.units) ++counts[u.stratum];
  WeightedLossSpec spec;
  spec.d.resize(data.K);
  const double n = static_cast<double>(data.units.size());
  for (int k = 0; k < data.K; ++k) {
    if (counts[k] == 0)
      throw validation_error("stratum " + std::to_string(k) + " is empty");
    spec.d[k] = static_cast<double>(counts[k]) / n;
  }
  return spec;
}

// --- CSV I/O ----------------------------------------------------------------

// Reads a dataset from CSV with header columns y, w, stratum, x1..xp and an
// optional p_hat column. K is inferred as max stratum label + 1.
inline StratifiedDataset read_dataset_csv(const std::string& path, StudyRole role) {
  std::ifstream f(path);
  if (!f) throw validation_error("cannot open CSV file: " + path);
  std::string line;
  if (!std::getline(f, line)) throw validation_error("empty CSV file: " + path);
  // strip BOM / CR
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(s);
    while (std::getline(ss, field, ',')) {
      while (!field.empty() && (field.back() == '\r' || field.back() == ' '))
        field.pop_back();
      while (!field.empty() && field.front() == ' ') field.erase(0, 1);
      out.push_back(field);
    }
    return out;
  };

  const auto header = split(line);
  int col_y = -1, col_w = -1, col_stratum = -1, col_phat = -1;
  std::vector<int> col_x;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const std::string& h = header[j];
    if (h == "y") col_y = static_cast<int>(j);
    else if (h == "w") col_w = static_cast<int>(j);
    else if (h == "stratum") col_stratum = static_cast<int>(j);
    else if (h == "p_hat") col_phat = static_cast<int>(j);
    else if (h.size() > 1 && h[0] == 'x') col_x.push_back(static_cast<int>(j));
    else throw validation_error(path + ": unrecognized CSV column '" + h + "'");
  }
  if (col_y < 0 || col_w < 0 || col_stratum < 0)
    throw validation_error(path + ": CSV must contain columns y, w, stratum");

  StratifiedDataset data;
  data.role = role;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = split(line);
    if (fields.size() != header.size())
      throw validation_error(path + ":" + std::to_string(lineno) +
                             ": wrong number of fields");
    Unit u;
    try {
      u.y = std::stod(fields[col_y]);
      u.w = std::stoi(fields[col_w]);
      u.stratum = std::stoi(fields[col_stratum]);
      for (int j : col_x) u.x.push_back(std::stod(fields[j]));
      if (col_phat >= 0 && !fields[col_phat].empty())
        u.p_hat = std::stod(fields[col_phat]);
    } catch (const std::exception&) {
      throw validation_error(path + ":" + std::to_string(lineno) + ": unparsable field");
    }
    data.K = std::max(data.K, u.stratum + 1);
    data.units.push_back(std::move(u));
  }
  detail::check_units(data);
  return data;
}

enum class Adjustment { none, sipw };

// End-to-end pipeline: stratum effects from both studies, Neyman variances
// from the RCT, observational-frequency weights. With Adjustment::sipw,
// propensities are fitted on the observational covariates unless p_hat is
// already present.
inline FusionInput build_fusion_input(StratifiedDataset& obs, const StratifiedDataset& rct,
                                      Adjustment adjustment,
                                      PropensityMode mode = PropensityMode::shared) {
  if (obs.K != rct.K)
    throw validation_error("stratum-count mismatch: observational K = " +
                           std::to_string(obs.K) + ", RCT K = " + std::to_string(rct.K));
  FusionInput in;
  in.tau_r = diff_in_means(rct);
  in.sigma_r2 = neyman_variance(rct);
  if (adjustment == Adjustment::sipw) {
    bool have_phat = true;
    for (const Unit& u : obs.units)
      if (!u.p_hat) {
        have_phat = false;
        break;
      }
    if (!have_phat) attach_propensities(obs, mode);
    in.tau_o = sipw(obs);
  } else {
    in.tau_o = diff_in_means(obs);
  }
  in.weights = stratum_weights(obs);
  return in;
}

}  // namespace causalfuse
