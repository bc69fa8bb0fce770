#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "enkbf/diagnostics.hpp"
#include "enkbf/model.hpp"

namespace enkbf {

// Flat key=value config. Defaults are the desk-scale protocol; the full-paper
// protocol is reachable by overriding dt / n_steps.
struct ExperimentConfig {
  std::string model;  // "lorenz63" | "linear"
  std::vector<double> epsilon_list = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
  int m = 4;
  std::optional<std::vector<int>> m_list;
  double dt = 2e-4;
  long n_steps = 500000;
  std::optional<long> record_every;  // set -> per-cell diagnostic CSVs are written
  double burn_in_fraction = 0.1;
  std::uint64_t master_seed = 42;
  int n_seeds = 3;
  std::string output_dir = "out";
  double init_spread = 10.0;  // ensemble init: x0_ref + init_spread*sqrt(eps)*N(0,I)
  // linear-model payload (row-major in the file), present iff model == "linear"
  std::optional<Matrix> a_matrix;
  std::optional<Vector> b_vector;
  std::optional<Matrix> h_matrix;
  std::optional<Matrix> c_matrix;
  std::optional<Matrix> r_matrix;

  bool operator==(const ExperimentConfig& other) const;
};

struct SweepRow {
  double epsilon = 0.0;
  int m = 0;
  int seed = 0;  // seed index within the cell's seed block
  double time_avg_mse = 0.0;
  double time_avg_lmax = 0.0;
  double time_avg_lmin = 0.0;
  bool diverged = false;
};

// One slope triple per ensemble size; a slot is empty when the fit is not
// available (single epsilon, all-diverged, or non-positive averages such as
// lambda_min = 0 on rank-deficient runs).
struct SlopeFit {
  int m = 0;
  std::optional<double> mse_slope;
  std::optional<double> lmax_slope;
  std::optional<double> lmin_slope;
};

struct CellDiagnostics {
  double epsilon = 0.0;
  int m = 0;
  int seed = 0;
  std::vector<DiagnosticsRow> rows;
};

struct SweepResult {
  std::string command;  // "sweep-epsilon" | "sweep-m"
  ExperimentConfig config;
  std::vector<SweepRow> rows;
  std::vector<SlopeFit> fits;
  int diverged_count = 0;
  std::vector<CellDiagnostics> cell_diags;  // populated only when record_every is set
};

ExperimentConfig parse_config(const std::string& path);

// Serializes the effective config in the same key=value format parse_config
// reads (round-trip: parse_config(write) == config).
std::string render_config(const ExperimentConfig& cfg);

// Fully-observed regularized filter over every (epsilon, seed) cell, time
// averages after burn-in, slope fits over seed-averaged values against epsilon.
SweepResult run_epsilon_sweep(const ExperimentConfig& cfg, int workers = 1);

// Same protocol per (M, epsilon, seed); m_list must be present.
SweepResult run_m_sweep(const ExperimentConfig& cfg, int workers = 1);

// Writes sweep.csv, summary.json, config_echo.txt, and per-cell diagnostic CSVs
// when record_every is set; returns the list of written paths.
std::vector<std::string> write_results(const SweepResult& result, const std::string& dir);

// Default truth initial state for a built-in model name.
Vector default_x0(const std::string& model_name, int nx);

}  // namespace enkbf
