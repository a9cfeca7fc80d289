// Command-line entry point: estimation, end-to-end fusion from unit-level
// CSVs, sensitivity analysis, and simulation reproduction. All subcommands
// are deterministic given (inputs, flags, seed); every output file gets a
// sibling .manifest.json recording the resolved configuration.
//
// Exit codes: 0 success, 2 user/validation error, 3 search reported but not
// converged/bracketed, 1 internal error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "causalfuse/causal.hpp"
#include "causalfuse/core.hpp"
#include "causalfuse/sensitivity.hpp"
#include "causalfuse/shrinkage.hpp"
#include "causalfuse/simulation.hpp"

namespace cf = causalfuse;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

std::vector<std::string> split_ids(const std::string& s) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(s);
  while (std::getline(ss, field, ',')) {
    if (!field.empty()) out.push_back(field);
  }
  return out;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw cf::validation_error("cannot open file: " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw cf::validation_error("JSON parse failure in " + path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write file: " + path);
  f << text;
}

struct ManifestTimer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

void write_manifest(const std::string& output_path, const std::string& command,
                    const nlohmann::json& config, std::uint64_t seed,
                    const std::vector<std::string>& inputs, const ManifestTimer& timer) {
  nlohmann::json m = {{"command", command},
                      {"config", config},
                      {"seed", seed},
                      {"tool_version", kVersion},
                      {"inputs", inputs},
                      {"output", output_path},
                      {"duration_ms", timer.elapsed_ms()}};
  write_text(output_path + ".manifest.json", m.dump(2) + "\n");
}

struct GlobalOpts {
  std::uint64_t seed = 20240817;  // fixed default so unseeded runs reproduce
  int threads = 0;
  std::string output;
  std::string format = "csv";
};

nlohmann::json dominance_to_json(const cf::DominanceReport& rep) {
  return {{"lemma1_holds", rep.lemma1_holds}, {"margin1", rep.margin1},
          {"lemma2_holds", rep.lemma2_holds}, {"margin2", rep.margin2},
          {"lemma3_holds", rep.lemma3_holds}, {"margin3", rep.margin3}};
}

int cmd_estimate(const GlobalOpts& g, const std::string& input_path,
                 const std::string& estimators) {
  ManifestTimer timer;
  cf::FusionInput in = cf::fusion_input_from_json(read_json_file(input_path));
  cf::ensure_valid(in);
  std::vector<std::string> ids =
      estimators.empty() ? cf::estimator_ids() : split_ids(estimators);

  cf::OracleSpec oracle;
  bool have_oracle = false;
  {
    auto j = read_json_file(input_path);
    if (j.contains("xi") && in.sigma_o2) {
      oracle.xi = j.at("xi").get<std::vector<double>>();
      oracle.sigma_o2 = *in.sigma_o2;
      have_oracle = true;
    }
  }
  if (estimators.empty() && !have_oracle)
    ids.erase(std::remove(ids.begin(), ids.end(), "oracle"), ids.end());

  nlohmann::json out = nlohmann::json::object();
  for (const auto& id : ids)
    out[id] = cf::to_json(cf::run_estimator(id, in, have_oracle ? &oracle : nullptr));

  const std::string path = g.output.empty() ? "estimates.json" : g.output;
  write_text(path, out.dump(2) + "\n");
  write_manifest(path, "estimate", {{"estimators", ids}}, g.seed, {input_path}, timer);
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_fuse(const GlobalOpts& g, const std::string& obs_path, const std::string& rct_path,
             const std::string& adjustment, const std::string& propensity_mode,
             const std::string& estimators) {
  ManifestTimer timer;
  auto obs = cf::read_dataset_csv(obs_path, cf::StudyRole::observational);
  auto rct = cf::read_dataset_csv(rct_path, cf::StudyRole::randomized);
  const cf::Adjustment adj =
      adjustment == "sipw" ? cf::Adjustment::sipw : cf::Adjustment::none;
  const cf::PropensityMode mode = propensity_mode == "per_stratum"
                                      ? cf::PropensityMode::per_stratum
                                      : cf::PropensityMode::shared;
  cf::FusionInput in = cf::build_fusion_input(obs, rct, adj, mode);

  std::vector<std::string> ids =
      estimators.empty() ? cf::estimator_ids() : split_ids(estimators);
  if (estimators.empty())
    ids.erase(std::remove(ids.begin(), ids.end(), "oracle"), ids.end());

  nlohmann::json out;
  out["fusion_input"] = cf::to_json(in);
  out["dominance"] = dominance_to_json(cf::check_dominance_conditions(in.sigma_r2, in.weights));
  out["estimates"] = nlohmann::json::object();
  for (const auto& id : ids) out["estimates"][id] = cf::to_json(cf::run_estimator(id, in));

  const std::string path = g.output.empty() ? "fuse.json" : g.output;
  write_text(path, out.dump(2) + "\n");
  write_manifest(path, "fuse",
                 {{"adjustment", adjustment}, {"propensity_mode", propensity_mode},
                  {"estimators", ids}},
                 g.seed, {obs_path, rct_path}, timer);
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_sensitivity(const GlobalOpts& g, const std::string& obs_path,
                    const std::string& rct_path, double gamma, bool implied, int bootstrap_B,
                    double epsilon, double gamma_max, bool arm_stratified,
                    const std::string& adjustment) {
  ManifestTimer timer;
  auto obs = cf::read_dataset_csv(obs_path, cf::StudyRole::observational);
  auto rct = cf::read_dataset_csv(rct_path, cf::StudyRole::randomized);
  // the sensitivity model is defined for SIPW, so propensities are required
  cf::FusionInput in = cf::build_fusion_input(obs, rct, cf::Adjustment::sipw,
                                              adjustment == "per_stratum"
                                                  ? cf::PropensityMode::per_stratum
                                                  : cf::PropensityMode::shared);
  cf::SensitivityConfig config;
  config.gamma = gamma;
  config.bootstrap_B = bootstrap_B;
  config.seed = g.seed;
  config.epsilon = epsilon;
  config.gamma_max = gamma_max;
  config.arm_stratified_bootstrap = arm_stratified;

  int code = 0;
  nlohmann::json out;
  if (implied) {
    auto result = cf::implied_gamma(obs, in, config);
    config.gamma = result.gamma_imp;
    auto report = cf::analyze_sensitivity(obs, in, config);
    out["implied_gamma"] = cf::to_json(result);
    out["report"] = cf::to_json(report);
    if (!result.converged || !result.bracketed) code = 3;
  } else {
    config.validate();
    auto report = cf::analyze_sensitivity(obs, in, config);
    out["report"] = cf::to_json(report);
  }

  const std::string path = g.output.empty() ? "sensitivity.json" : g.output;
  write_text(path, out.dump(2) + "\n");
  write_manifest(path, "sensitivity",
                 {{"gamma", gamma},
                  {"implied", implied},
                  {"bootstrap_B", bootstrap_B},
                  {"epsilon", epsilon},
                  {"gamma_max", gamma_max},
                  {"arm_stratified", arm_stratified}},
                 g.seed, {obs_path, rct_path}, timer);
  std::cout << "wrote " << path << "\n";
  return code;
}

std::string condition_tag(const cf::SimConfig& c) {
  std::ostringstream ss;
  ss << "K" << c.K << "_"
     << (c.strata_scheme == cf::StrataScheme::similar ? "similar" : "variable") << "_"
     << (c.covariate_shift ? "shift" : "noshift") << "_"
     << (c.adjustment == cf::Adjustment::sipw ? "sipw" : "none");
  return ss.str();
}

int cmd_simulate(const GlobalOpts& g, const std::string& config_path, bool paper, bool quick,
                 std::vector<int> sel_K, std::vector<std::string> sel_scheme,
                 std::vector<std::string> sel_shift, std::vector<std::string> sel_adjustment,
                 const std::string& out_dir) {
  cf::SimConfig base;
  base.seed = g.seed;
  base.threads = g.threads;
  if (!config_path.empty()) {
    base = cf::sim_config_from_json(read_json_file(config_path));
    base.threads = g.threads;
  }
  if (quick) {
    base.n_o = 2000;
    base.n_r = 400;
    base.outer_reps = 10;
    base.inner_reps = 10;
    base.oracle_aux_draws = 50;
  }

  std::vector<cf::SimConfig> conditions;
  if (paper || quick || !sel_K.empty() || !sel_scheme.empty() || !sel_shift.empty() ||
      !sel_adjustment.empty()) {
    if (sel_K.empty()) sel_K = {6, 20};
    if (sel_scheme.empty()) sel_scheme = {"similar", "variable"};
    if (sel_shift.empty()) sel_shift = {"off", "on"};
    if (sel_adjustment.empty()) sel_adjustment = {"none", "sipw"};
    for (int K : sel_K) {
      if (K != 6 && K != 20)
        throw cf::validation_error("grid selector K must be 6 or 20 (got " +
                                   std::to_string(K) + ")");
      for (const auto& scheme : sel_scheme) {
        if (scheme != "similar" && scheme != "variable")
          throw cf::validation_error("grid selector scheme must be similar or variable");
        for (const auto& shift : sel_shift) {
          if (shift != "on" && shift != "off")
            throw cf::validation_error("grid selector shift must be on or off");
          for (const auto& adj : sel_adjustment) {
            if (adj != "none" && adj != "sipw")
              throw cf::validation_error("grid selector adjustment must be none or sipw");
            cf::SimConfig c = base;
            c.K = K;
            c.strata_scheme =
                scheme == "similar" ? cf::StrataScheme::similar : cf::StrataScheme::variable;
            c.covariate_shift = shift == "on";
            c.adjustment = adj == "none" ? cf::Adjustment::none : cf::Adjustment::sipw;
            conditions.push_back(c);
          }
        }
      }
    }
  } else {
    conditions.push_back(base);
  }

  for (const auto& condition : conditions) {
    ManifestTimer timer;
    condition.validate();
    auto table = cf::run_condition(condition);
    const std::string tag = condition_tag(condition);
    const fs::path dir = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
    const std::string csv_path = (dir / (tag + ".csv")).string();
    if (g.format == "json") {
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& row : table.rows)
        rows.push_back({{"name", row.name},
                        {"risk", row.risk},
                        {"se", row.se},
                        {"pct_reduction", row.pct_reduction}});
      write_text((dir / (tag + ".json")).string(),
                 nlohmann::json{{"rows", rows}, {"metadata", table.metadata}}.dump(2) + "\n");
    } else {
      write_text(csv_path, cf::risk_table_csv(table));
      write_text((dir / (tag + ".sidecar.json")).string(), table.metadata.dump(2) + "\n");
    }
    const std::string main_out =
        g.format == "json" ? (dir / (tag + ".json")).string() : csv_path;
    write_manifest(main_out, "simulate", cf::to_json(condition), condition.seed,
                   config_path.empty() ? std::vector<std::string>{}
                                       : std::vector<std::string>{config_path},
                   timer);
    std::cout << tag << ": done\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shrinkage fusion of experimental and observational causal estimates"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "Root RNG seed (fixed default for reproducible runs)");
  app.add_option("--threads", g.threads, "Worker threads (0 = hardware concurrency)");
  app.add_option("--output", g.output, "Output file path");
  app.add_option("--format", g.format, "Output format: csv or json")
      ->check(CLI::IsMember({"csv", "json"}));

  auto* est = app.add_subcommand("estimate", "Run estimators on a FusionInput JSON file");
  std::string est_input, est_ids;
  bool list_estimators = false;
  est->add_option("--input", est_input, "FusionInput JSON path");
  est->add_option("--estimators", est_ids, "Comma-separated estimator ids");
  est->add_flag("--list-estimators", list_estimators, "Print the stable id roster and exit");

  auto* fuse = app.add_subcommand("fuse", "Fuse unit-level observational and RCT CSVs");
  std::string fuse_obs, fuse_rct, fuse_adj = "none", fuse_mode = "shared", fuse_ids;
  fuse->add_option("--obs", fuse_obs, "Observational CSV")->required();
  fuse->add_option("--rct", fuse_rct, "RCT CSV")->required();
  fuse->add_option("--adjustment", fuse_adj, "none or sipw")
      ->check(CLI::IsMember({"none", "sipw"}));
  fuse->add_option("--propensity-mode", fuse_mode, "shared or per_stratum")
      ->check(CLI::IsMember({"shared", "per_stratum"}));
  fuse->add_option("--estimators", fuse_ids, "Comma-separated estimator ids");

  auto* sens = app.add_subcommand("sensitivity", "Marginal sensitivity analysis of SIPW");
  std::string sens_obs, sens_rct, sens_mode = "shared";
  double sens_gamma = 1.0, sens_eps = 1e-3, sens_gmax = 16.0;
  int sens_B = 200;
  bool sens_implied = false, sens_arm = false;
  sens->add_option("--obs", sens_obs, "Observational CSV")->required();
  sens->add_option("--rct", sens_rct, "RCT CSV")->required();
  sens->add_option("--gamma", sens_gamma, "Confounding level Gamma >= 1");
  sens->add_flag("--implied", sens_implied, "Search for the implied Gamma instead");
  sens->add_option("--bootstrap", sens_B, "Bootstrap replicates per stratum");
  sens->add_option("--epsilon", sens_eps, "Binary-search tolerance on lambda");
  sens->add_option("--gamma-max", sens_gmax, "Initial search ceiling");
  sens->add_flag("--arm-stratified", sens_arm, "Resample within treatment arms");
  sens->add_option("--propensity-mode", sens_mode, "shared or per_stratum");

  auto* sim = app.add_subcommand("simulate", "Run Monte Carlo risk comparisons");
  std::string sim_config, sim_outdir = "sim_out";
  bool sim_paper = false, sim_quick = false;
  std::vector<int> sim_K;
  std::vector<std::string> sim_scheme, sim_shift, sim_adj;
  sim->add_option("--config", sim_config, "SimConfig JSON path");
  sim->add_flag("--paper", sim_paper, "All eight grid conditions at full scale");
  sim->add_flag("--quick", sim_quick, "Reduced-scale grid for fast checks");
  sim->add_option("--K", sim_K, "Grid selector: stratum counts (6, 20)");
  sim->add_option("--scheme", sim_scheme, "Grid selector: similar, variable");
  sim->add_option("--shift", sim_shift, "Grid selector: on, off");
  sim->add_option("--adjustment", sim_adj, "Grid selector: none, sipw");
  sim->add_option("--output-dir", sim_outdir, "Directory for risk tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (est->parsed()) {
      if (list_estimators) {
        for (const auto& id : cf::estimator_ids()) std::cout << id << "\n";
        return 0;
      }
      if (est_input.empty())
        throw cf::validation_error("estimate: --input is required unless --list-estimators");
      return cmd_estimate(g, est_input, est_ids);
    }
    if (fuse->parsed()) return cmd_fuse(g, fuse_obs, fuse_rct, fuse_adj, fuse_mode, fuse_ids);
    if (sens->parsed())
      return cmd_sensitivity(g, sens_obs, sens_rct, sens_gamma, sens_implied, sens_B, sens_eps,
                             sens_gmax, sens_arm, sens_mode);
    if (sim->parsed())
      return cmd_simulate(g, sim_config, sim_paper, sim_quick, sim_K, sim_scheme, sim_shift,
                          sim_adj, sim_outdir);
  } catch (const cf::validation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
