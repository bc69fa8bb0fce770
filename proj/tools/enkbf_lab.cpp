// enkbf-lab: batch driver for the EnKBF experiments.
//
//   enkbf-lab <command> --config <path> [--seed N] [--out DIR] [--workers K]
//
// commands: truth, filter, sweep-epsilon, sweep-m, chaos, riccati

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "enkbf/diagnostics.hpp"
#include "enkbf/enkbf.hpp"
#include "enkbf/errors.hpp"
#include "enkbf/experiment.hpp"
#include "enkbf/kbf.hpp"
#include "enkbf/meanfield.hpp"
#include "enkbf/model.hpp"
#include "enkbf/rng.hpp"
#include "enkbf/truth.hpp"

namespace {

using enkbf::ExperimentConfig;
using enkbf::format_double;
using enkbf::Matrix;
using enkbf::Vector;

std::filesystem::path out_path(const ExperimentConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.output_dir);
  return std::filesystem::path(cfg.output_dir) / name;
}

enkbf::ModelSpec model_for(const ExperimentConfig& cfg, double epsilon) {
  if (cfg.model == "lorenz63") return enkbf::lorenz63_model(epsilon);
  enkbf::LinearModelSpec linear{*cfg.a_matrix, *cfg.b_vector, *cfg.h_matrix, *cfg.c_matrix,
                                epsilon * Matrix::Identity(cfg.h_matrix->rows(),
                                                           cfg.h_matrix->rows())};
  return enkbf::linear_model(linear);
}

enkbf::LinearModelSpec linear_spec(const ExperimentConfig& cfg) {
  if (cfg.model != "linear")
    throw enkbf::ConfigError("config: this command needs model = \"linear\"");
  return enkbf::LinearModelSpec{*cfg.a_matrix, *cfg.b_vector, *cfg.h_matrix, *cfg.c_matrix,
                                *cfg.r_matrix};
}

int cmd_truth(const ExperimentConfig& cfg) {
  const double epsilon = cfg.epsilon_list.front();
  const enkbf::ModelSpec model = model_for(cfg, epsilon);
  const Vector x0 = enkbf::default_x0(cfg.model, model.nx);
  const auto truth = enkbf::simulate_truth(model, x0, cfg.dt, cfg.n_steps,
                                           enkbf::mix_seed(cfg.master_seed, 0));
  const auto path = out_path(cfg, "truth.csv");
  enkbf::write_truth_csv(truth, path.string());
  std::cout << "wrote " << path.string() << " (" << cfg.n_steps << " steps, epsilon = "
            << format_double(epsilon) << ")\n";
  return 0;
}

int cmd_filter(const ExperimentConfig& cfg, int workers) {
  // One cell of the epsilon sweep: first epsilon, seed index 0. Bit-identical
  // to that cell of the full sweep under the same master_seed.
  ExperimentConfig cell = cfg;
  cell.epsilon_list = {cfg.epsilon_list.front()};
  cell.n_seeds = 1;
  if (!cell.record_every) cell.record_every = 1;
  const auto result = enkbf::run_epsilon_sweep(cell, workers);
  const auto files = enkbf::write_results(result, cell.output_dir);
  const auto& row = result.rows.front();
  std::cout << "epsilon = " << format_double(row.epsilon) << "  M = " << row.m
            << "  seed = " << row.seed << "\n"
            << "time_avg_mse  = " << format_double(row.time_avg_mse) << "\n"
            << "time_avg_lmax = " << format_double(row.time_avg_lmax) << "\n"
            << "time_avg_lmin = " << format_double(row.time_avg_lmin) << "\n"
            << "diverged      = " << (row.diverged ? "yes" : "no") << "\n";
  for (const auto& f : files) std::cout << "wrote " << f << "\n";
  return row.diverged ? 1 : 0;
}

int cmd_sweep(const ExperimentConfig& cfg, int workers, bool over_m) {
  const auto result = over_m ? enkbf::run_m_sweep(cfg, workers)
                             : enkbf::run_epsilon_sweep(cfg, workers);
  const auto files = enkbf::write_results(result, cfg.output_dir);
  std::cout << result.command << ": " << result.rows.size() << " cells, "
            << result.diverged_count << " diverged\n";
  for (const auto& fit : result.fits) {
    auto show = [](const std::optional<double>& s) {
      return s ? format_double(*s) : std::string("n/a");
    };
    std::cout << "M = " << fit.m << "  mse_slope = " << show(fit.mse_slope)
              << "  lmax_slope = " << show(fit.lmax_slope)
              << "  lmin_slope = " << show(fit.lmin_slope) << "\n";
  }
  for (const auto& f : files) std::cout << "wrote " << f << "\n";
  return 0;
}

int cmd_chaos(const ExperimentConfig& cfg, const std::vector<int>& m_list, int m_ref,
              int n_seeds) {
  const double epsilon = cfg.epsilon_list.front();
  const enkbf::ModelSpec model = model_for(cfg, epsilon);
  const Vector x0 = enkbf::default_x0(cfg.model, model.nx);
  const auto truth = enkbf::simulate_truth(model, x0, cfg.dt, cfg.n_steps,
                                           enkbf::mix_seed(cfg.master_seed, 0));

  enkbf::ChaosOptions options;
  options.master_seed = cfg.master_seed;
  options.init_mean = x0;
  if (cfg.model == "linear") {
    options.source = enkbf::MomentSourceKind::linear_exact;
    enkbf::LinearModelSpec linear = linear_spec(cfg);
    linear.obs_cov = epsilon * Matrix::Identity(linear.ny(), linear.ny());
    options.linear = linear;
    options.init_cov = Matrix::Identity(model.nx, model.nx);
  } else {
    options.source = enkbf::MomentSourceKind::jumbo_ensemble;
    options.init_cov = cfg.init_spread * cfg.init_spread * epsilon *
                       Matrix::Identity(model.nx, model.nx);
  }

  enkbf::FilterConfig fcfg;
  fcfg.dt = cfg.dt;
  fcfg.n_steps = cfg.n_steps;
  const auto rows = enkbf::run_chaos_experiment(model, truth, m_list, m_ref, n_seeds, fcfg,
                                                options);
  const auto path = out_path(cfg, "chaos.csv");
  enkbf::write_chaos_csv(rows, path.string());
  for (const auto& row : rows)
    std::cout << "M = " << row.m << "  mean_gap = " << format_double(row.mean_gap)
              << "  stderr = " << format_double(row.stderr_gap) << "  seeds = "
              << row.seeds_used << " used / " << row.seeds_failed << " failed\n";
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

int cmd_riccati(const ExperimentConfig& cfg) {
  const enkbf::LinearModelSpec linear = linear_spec(cfg);
  const auto stationary = enkbf::stationary_riccati(linear);
  nlohmann::ordered_json report;
  report["p_inf"] = nlohmann::ordered_json::array();
  for (long r = 0; r < stationary.p_inf.rows(); ++r) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (long c = 0; c < stationary.p_inf.cols(); ++c) row.push_back(stationary.p_inf(r, c));
    report["p_inf"].push_back(row);
  }
  report["residual"] = stationary.residual;
  report["lambda_star"] = enkbf::stability_margin(linear, stationary.p_inf);
  report["observability_rank"] = enkbf::observability_rank(linear);
  report["controllability_rank"] = enkbf::controllability_rank(linear);
  report["rank_warning"] = stationary.rank_warning;
  const auto path = out_path(cfg, "riccati.json");
  std::ofstream out(path, std::ios::binary);
  out << report.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::cout << report.dump(2) << "\n";
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time ensemble Kalman-Bucy filter laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;
  int workers = 1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "path to key=value config file")->required();
    cmd->add_option("--seed", seed_override, "override master_seed");
    cmd->add_option("--out", out_override, "override output_dir");
    cmd->add_option("--workers", workers, "worker threads for sweep cells")
        ->check(CLI::PositiveNumber);
  };

  CLI::App* truth_cmd = app.add_subcommand("truth", "simulate a reference path + observations");
  CLI::App* filter_cmd = app.add_subcommand("filter", "run one filter cell with diagnostics");
  CLI::App* sweep_eps_cmd = app.add_subcommand("sweep-epsilon", "epsilon sweep at fixed M");
  CLI::App* sweep_m_cmd = app.add_subcommand("sweep-m", "sweep over m_list x epsilon_list");
  CLI::App* chaos_cmd = app.add_subcommand("chaos", "mean-field coupling gap vs M");
  CLI::App* riccati_cmd = app.add_subcommand("riccati", "stationary Riccati report (linear)");
  for (CLI::App* cmd : {truth_cmd, filter_cmd, sweep_eps_cmd, sweep_m_cmd, chaos_cmd, riccati_cmd})
    add_common(cmd);

  std::vector<int> chaos_m_list = {8, 32, 128};
  int chaos_m_ref = 2048;
  int chaos_seeds = 10;
  chaos_cmd->add_option("--m-list", chaos_m_list, "ensemble sizes")->delimiter(',');
  chaos_cmd->add_option("--m-ref", chaos_m_ref, "reference ensemble size (jumbo source)");
  chaos_cmd->add_option("--seeds", chaos_seeds, "seeds per ensemble size");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = enkbf::parse_config(config_path);
    if (seed_override) cfg.master_seed = *seed_override;
    if (out_override) cfg.output_dir = *out_override;

    if (app.got_subcommand(truth_cmd)) return cmd_truth(cfg);
    if (app.got_subcommand(filter_cmd)) return cmd_filter(cfg, workers);
    if (app.got_subcommand(sweep_eps_cmd)) return cmd_sweep(cfg, workers, false);
    if (app.got_subcommand(sweep_m_cmd)) return cmd_sweep(cfg, workers, true);
    if (app.got_subcommand(chaos_cmd)) return cmd_chaos(cfg, chaos_m_list, chaos_m_ref, chaos_seeds);
    if (app.got_subcommand(riccati_cmd)) return cmd_riccati(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
