#include "enkbf/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "enkbf/enkbf.hpp"
#include "enkbf/errors.hpp"
#include "enkbf/rng.hpp"
#include "enkbf/truth.hpp"

namespace enkbf {

namespace {

using ordered_json = nlohmann::ordered_json;

bool matrix_equal(const std::optional<Matrix>& a, const std::optional<Matrix>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return a->rows() == b->rows() && a->cols() == b->cols() && *a == *b;
}

bool vector_equal(const std::optional<Vector>& a, const std::optional<Vector>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return a->size() == b->size() && *a == *b;
}

double parse_double(const std::string& key, const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const double value = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || text.empty() || errno == ERANGE)
    throw ConfigError("config: malformed number for key '" + key + "': " + text);
  return value;
}

long parse_long(const std::string& key, const std::string& text) {
  const double value = parse_double(key, text);
  const long as_long = static_cast<long>(value);
  if (static_cast<double>(as_long) != value)
    throw ConfigError("config: key '" + key + "' must be an integer: " + text);
  return as_long;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> parts;
  std::string current;
  for (char c : text) {
    if (c == ',') {
      parts.push_back(current);
      current.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      current += c;
    }
  }
  parts.push_back(current);
  return parts;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& text) {
  std::vector<double> values;
  for (const auto& part : split_csv(text)) values.push_back(parse_double(key, part));
  return values;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

Matrix reshape_row_major(const std::string& key, const std::vector<double>& flat, long rows,
                         long cols) {
  if (rows * cols != static_cast<long>(flat.size()))
    throw ConfigError("config: key '" + key + "' needs " + std::to_string(rows * cols) +
                      " entries, got " + std::to_string(flat.size()));
  Matrix m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = flat[r * cols + c];
  return m;
}

// Builds the model a sweep cell runs: observation noise eps*I layered onto the
// configured model. For linear configs the forward map must be the identity
// (the fully-observed scheme covers nothing else).
ModelSpec cell_model(const ExperimentConfig& cfg, double epsilon) {
  if (cfg.model == "lorenz63") return lorenz63_model(epsilon);
  LinearModelSpec linear{*cfg.a_matrix, *cfg.b_vector, *cfg.h_matrix, *cfg.c_matrix,
                         epsilon * Matrix::Identity(cfg.h_matrix->rows(), cfg.h_matrix->rows())};
  ModelSpec model = linear_model(linear);
  if (!model.identity_h)
    throw ConfigError("config: sweeps need H = identity for the fully-observed scheme");
  return model;
}

struct CellTask {
  double epsilon = 0.0;
  int m = 0;
  int seed = 0;
  std::uint64_t cell_index = 0;
};

struct CellOutput {
  SweepRow row;
  std::vector<DiagnosticsRow> diags;
};

// The truth seed depends on the seed index only, so one seed's reference
// trajectory (and unscaled observation noise) is shared across every epsilon
// and M cell; only the R^{1/2} scaling differs. The ensemble init seed is
// per-cell.
constexpr std::uint64_t kTruthTag = 0x7472757468ull;

CellOutput run_cell(const ExperimentConfig& cfg, const CellTask& task) {
  const std::uint64_t cell_seed = mix_seed(cfg.master_seed, task.cell_index);
  const std::uint64_t truth_seed =
      mix_seed(mix_seed(cfg.master_seed, kTruthTag), static_cast<std::uint64_t>(task.seed));
  const ModelSpec model = cell_model(cfg, task.epsilon);
  const Vector x0 = default_x0(cfg.model, model.nx);

  CellOutput out;
  out.row.epsilon = task.epsilon;
  out.row.m = task.m;
  out.row.seed = task.seed;
  try {
    const TruthPath truth = simulate_truth(model, x0, cfg.dt, cfg.n_steps, truth_seed);

    GaussianStream init_stream(mix_seed(cell_seed, 1));
    Ensemble init;
    init.m = task.m;
    init.t = 0.0;
    init.particles.resize(model.nx, task.m);
    const double spread = cfg.init_spread * std::sqrt(task.epsilon);
    for (int i = 0; i < task.m; ++i)
      init.particles.col(i) = truth.states.row(0).transpose() + spread * init_stream.vector(model.nx);

    FilterConfig fcfg;
    fcfg.dt = cfg.dt;
    fcfg.n_steps = cfg.n_steps;
    fcfg.m = task.m;
    fcfg.scheme = FilterScheme::fully_observed_regularized;
    fcfg.record_every = cfg.record_every.value_or(1);
    const FilterRun run = run_filter(model, truth, fcfg, init, task.epsilon);

    std::vector<double> mse, lmax, lmin;
    mse.reserve(run.diags.size());
    lmax.reserve(run.diags.size());
    lmin.reserve(run.diags.size());
    for (const auto& d : run.diags) {
      mse.push_back(d.e_sq);
      lmax.push_back(d.lambda_max);
      lmin.push_back(d.lambda_min);
    }
    out.row.time_avg_mse = time_average(mse, cfg.burn_in_fraction);
    out.row.time_avg_lmax = time_average(lmax, cfg.burn_in_fraction);
    out.row.time_avg_lmin = time_average(lmin, cfg.burn_in_fraction);
    if (cfg.record_every) out.diags = run.diags;
  } catch (const DivergenceError&) {
    out.row.diverged = true;
    out.row.time_avg_mse = std::nan("");
    out.row.time_avg_lmax = std::nan("");
    out.row.time_avg_lmin = std::nan("");
  }
  return out;
}

// Seed-averaged slope fits for one ensemble size. A slot stays empty when a
// log-log fit is impossible (fewer than two epsilon points survive, or some
// average is non-positive, e.g. lambda_min = 0 when M <= nx).
SlopeFit fit_slopes(const std::vector<SweepRow>& rows, int m) {
  std::map<double, std::vector<const SweepRow*>> by_eps;
  for (const auto& row : rows)
    if (row.m == m && !row.diverged) by_eps[row.epsilon].push_back(&row);
  std::vector<double> eps, mse, lmax, lmin;
  for (const auto& [e, cell_rows] : by_eps) {
    double s_mse = 0.0, s_lmax = 0.0, s_lmin = 0.0;
    for (const auto* r : cell_rows) {
      s_mse += r->time_avg_mse;
      s_lmax += r->time_avg_lmax;
      s_lmin += r->time_avg_lmin;
    }
    const double n = static_cast<double>(cell_rows.size());
    eps.push_back(e);
    mse.push_back(s_mse / n);
    lmax.push_back(s_lmax / n);
    lmin.push_back(s_lmin / n);
  }
  SlopeFit fit;
  fit.m = m;
  auto try_fit = [&](const std::vector<double>& ys) -> std::optional<double> {
    if (eps.size() < 2) return std::nullopt;
    for (double y : ys)
      if (!(y > 0.0) || !std::isfinite(y)) return std::nullopt;
    return loglog_slope(eps, ys).first;
  };
  fit.mse_slope = try_fit(mse);
  fit.lmax_slope = try_fit(lmax);
  fit.lmin_slope = try_fit(lmin);
  return fit;
}

SweepResult run_sweep(const ExperimentConfig& cfg, const std::vector<int>& m_values,
                      const std::string& command, int workers) {
  const size_t n_eps = cfg.epsilon_list.size();
  const size_t n_seeds = static_cast<size_t>(cfg.n_seeds);
  std::vector<CellTask> tasks;
  for (size_t mi = 0; mi < m_values.size(); ++mi)
    for (size_t ei = 0; ei < n_eps; ++ei)
      for (size_t si = 0; si < n_seeds; ++si)
        tasks.push_back(CellTask{cfg.epsilon_list[ei], m_values[mi], static_cast<int>(si),
                                 (static_cast<std::uint64_t>(mi) * n_eps + ei) * n_seeds + si});

  std::vector<CellOutput> outputs(tasks.size());
  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::string first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size() || failed.load()) break;
      try {
        outputs[i] = run_cell(cfg, tasks[i]);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!failed.exchange(true)) first_error = e.what();
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(tasks.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw ExperimentError("sweep cell failed: " + first_error);

  // Deterministic output order regardless of scheduling: (epsilon, m, seed).
  std::vector<size_t> order(tasks.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const auto& ta = tasks[a];
    const auto& tb = tasks[b];
    return std::tie(ta.epsilon, ta.m, ta.seed) < std::tie(tb.epsilon, tb.m, tb.seed);
  });

  SweepResult result;
  result.command = command;
  result.config = cfg;
  for (size_t i : order) {
    result.rows.push_back(outputs[i].row);
    if (outputs[i].row.diverged) ++result.diverged_count;
    if (cfg.record_every)
      result.cell_diags.push_back(CellDiagnostics{tasks[i].epsilon, tasks[i].m,
                                                  tasks[i].seed, std::move(outputs[i].diags)});
  }
  if (!result.rows.empty() && result.diverged_count == static_cast<int>(result.rows.size()))
    throw ExperimentError("every sweep cell diverged");
  for (int m : m_values) result.fits.push_back(fit_slopes(result.rows, m));
  return result;
}

std::string cell_csv_name(const CellDiagnostics& cell) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "cell_eps%.3e_m%d_seed%d.csv", cell.epsilon, cell.m, cell.seed);
  return buf;
}

}  // namespace

bool ExperimentConfig::operator==(const ExperimentConfig& other) const {
  return model == other.model && epsilon_list == other.epsilon_list && m == other.m &&
         m_list == other.m_list && dt == other.dt && n_steps == other.n_steps &&
         record_every == other.record_every && burn_in_fraction == other.burn_in_fraction &&
         master_seed == other.master_seed && n_seeds == other.n_seeds &&
         output_dir == other.output_dir && init_spread == other.init_spread &&
         matrix_equal(a_matrix, other.a_matrix) && vector_equal(b_vector, other.b_vector) &&
         matrix_equal(h_matrix, other.h_matrix) && matrix_equal(c_matrix, other.c_matrix) &&
         matrix_equal(r_matrix, other.r_matrix);
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  static const std::set<std::string> known = {
      "model",       "epsilon_list", "m",          "m_list",      "dt",
      "n_steps",     "record_every", "burn_in_fraction", "master_seed", "n_seeds",
      "output_dir",  "init_spread",  "A",          "b",           "H",
      "C",           "R"};
  std::map<std::string, std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos) throw ConfigError("config: expected key=value, got: " + stripped);
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (!known.count(key)) throw ConfigError("config: unknown key '" + key + "'");
    if (entries.count(key)) throw ConfigError("config: duplicate key '" + key + "'");
    entries[key] = value;
  }

  if (!entries.count("model")) throw ConfigError("config: missing required key 'model'");
  ExperimentConfig cfg;
  cfg.model = unquote(entries["model"]);
  if (cfg.model != "lorenz63" && cfg.model != "linear")
    throw ConfigError("config: model must be \"lorenz63\" or \"linear\"");

  if (entries.count("epsilon_list"))
    cfg.epsilon_list = parse_double_list("epsilon_list", entries["epsilon_list"]);
  if (cfg.epsilon_list.empty()) throw ConfigError("config: epsilon_list must be non-empty");
  for (double e : cfg.epsilon_list)
    if (e <= 0.0) throw ConfigError("config: epsilon_list entries must be > 0");
  if (entries.count("m")) cfg.m = static_cast<int>(parse_long("m", entries["m"]));
  if (cfg.m < 2) throw ConfigError("config: m must be >= 2");
  if (entries.count("m_list")) {
    std::vector<int> ms;
    for (double v : parse_double_list("m_list", entries["m_list"])) {
      const int m = static_cast<int>(v);
      if (static_cast<double>(m) != v || m < 2)
        throw ConfigError("config: m_list entries must be integers >= 2");
      ms.push_back(m);
    }
    cfg.m_list = ms;
  }
  if (entries.count("dt")) cfg.dt = parse_double("dt", entries["dt"]);
  if (cfg.dt <= 0.0) throw ConfigError("config: dt must be > 0");
  if (entries.count("n_steps")) cfg.n_steps = parse_long("n_steps", entries["n_steps"]);
  if (cfg.n_steps < 1) throw ConfigError("config: n_steps must be >= 1");
  if (entries.count("record_every")) {
    cfg.record_every = parse_long("record_every", entries["record_every"]);
    if (*cfg.record_every < 1) throw ConfigError("config: record_every must be >= 1");
  }
  if (entries.count("burn_in_fraction"))
    cfg.burn_in_fraction = parse_double("burn_in_fraction", entries["burn_in_fraction"]);
  if (cfg.burn_in_fraction < 0.0 || cfg.burn_in_fraction >= 1.0)
    throw ConfigError("config: burn_in_fraction must be in [0, 1)");
  if (entries.count("master_seed")) {
    const double v = parse_double("master_seed", entries["master_seed"]);
    if (v < 0.0) throw ConfigError("config: master_seed must be >= 0");
    cfg.master_seed = static_cast<std::uint64_t>(v);
  }
  if (entries.count("n_seeds")) cfg.n_seeds = static_cast<int>(parse_long("n_seeds", entries["n_seeds"]));
  if (cfg.n_seeds < 1) throw ConfigError("config: n_seeds must be >= 1");
  if (entries.count("output_dir")) cfg.output_dir = unquote(entries["output_dir"]);
  if (entries.count("init_spread")) cfg.init_spread = parse_double("init_spread", entries["init_spread"]);
  if (cfg.init_spread < 0.0) throw ConfigError("config: init_spread must be >= 0");

  if (cfg.model == "linear") {
    for (const char* key : {"A", "b", "H", "C", "R"})
      if (!entries.count(key))
        throw ConfigError(std::string("config: linear model needs key '") + key + "'");
    const std::vector<double> b = parse_double_list("b", entries["b"]);
    const long nx = static_cast<long>(b.size());
    cfg.b_vector = Eigen::Map<const Vector>(b.data(), nx);
    cfg.a_matrix = reshape_row_major("A", parse_double_list("A", entries["A"]), nx, nx);
    const std::vector<double> h = parse_double_list("H", entries["H"]);
    if (h.size() % nx != 0) throw ConfigError("config: H entry count must be a multiple of nx");
    const long ny = static_cast<long>(h.size()) / nx;
    cfg.h_matrix = reshape_row_major("H", h, ny, nx);
    const std::vector<double> c = parse_double_list("C", entries["C"]);
    if (c.size() % nx != 0) throw ConfigError("config: C entry count must be a multiple of nx");
    cfg.c_matrix = reshape_row_major("C", c, nx, static_cast<long>(c.size()) / nx);
    cfg.r_matrix = reshape_row_major("R", parse_double_list("R", entries["R"]), ny, ny);
  } else {
    for (const char* key : {"A", "b", "H", "C", "R"})
      if (entries.count(key))
        throw ConfigError(std::string("config: key '") + key + "' is only valid for model=\"linear\"");
  }
  return cfg;
}

std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "model = \"" << cfg.model << "\"\n";
  out << "epsilon_list = ";
  for (size_t i = 0; i < cfg.epsilon_list.size(); ++i)
    out << (i ? "," : "") << format_double(cfg.epsilon_list[i]);
  out << "\n";
  out << "m = " << cfg.m << "\n";
  if (cfg.m_list) {
    out << "m_list = ";
    for (size_t i = 0; i < cfg.m_list->size(); ++i) out << (i ? "," : "") << (*cfg.m_list)[i];
    out << "\n";
  }
  out << "dt = " << format_double(cfg.dt) << "\n";
  out << "n_steps = " << cfg.n_steps << "\n";
  if (cfg.record_every) out << "record_every = " << *cfg.record_every << "\n";
  out << "burn_in_fraction = " << format_double(cfg.burn_in_fraction) << "\n";
  out << "master_seed = " << cfg.master_seed << "\n";
  out << "n_seeds = " << cfg.n_seeds << "\n";
  out << "output_dir = \"" << cfg.output_dir << "\"\n";
  out << "init_spread = " << format_double(cfg.init_spread) << "\n";
  auto write_matrix = [&out](const char* key, const Matrix& m) {
    out << key << " = ";
    bool first = true;
    for (long r = 0; r < m.rows(); ++r)
      for (long c = 0; c < m.cols(); ++c) {
        out << (first ? "" : ",") << format_double(m(r, c));
        first = false;
      }
    out << "\n";
  };
  if (cfg.model == "linear") {
    write_matrix("A", *cfg.a_matrix);
    out << "b = ";
    for (long i = 0; i < cfg.b_vector->size(); ++i)
      out << (i ? "," : "") << format_double((*cfg.b_vector)(i));
    out << "\n";
    write_matrix("H", *cfg.h_matrix);
    write_matrix("C", *cfg.c_matrix);
    write_matrix("R", *cfg.r_matrix);
  }
  return out.str();
}

SweepResult run_epsilon_sweep(const ExperimentConfig& cfg, int workers) {
  return run_sweep(cfg, {cfg.m}, "sweep-epsilon", workers);
}

SweepResult run_m_sweep(const ExperimentConfig& cfg, int workers) {
  if (!cfg.m_list) throw ConfigError("config: sweep-m needs key 'm_list'");
  return run_sweep(cfg, *cfg.m_list, "sweep-m", workers);
}

std::vector<std::string> write_results(const SweepResult& result, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("write_results: cannot create " + dir + ": " + ec.message());
  std::vector<std::string> manifest;

  const std::string csv_path = (fs::path(dir) / "sweep.csv").string();
  {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw std::runtime_error("write_results: cannot open " + csv_path);
    out << "epsilon,m,seed,time_avg_mse,time_avg_lmax,time_avg_lmin,diverged\n";
    for (const auto& r : result.rows)
      out << format_double(r.epsilon) << ',' << r.m << ',' << r.seed << ','
          << format_double(r.time_avg_mse) << ',' << format_double(r.time_avg_lmax) << ','
          << format_double(r.time_avg_lmin) << ',' << (r.diverged ? 1 : 0) << "\n";
    if (!out) throw std::runtime_error("write_results: write failed for " + csv_path);
  }
  manifest.push_back(csv_path);

  const std::string summary_path = (fs::path(dir) / "summary.json").string();
  {
    ordered_json summary;
    summary["command"] = result.command;
    summary["cells"] = result.rows.size();
    summary["diverged"] = result.diverged_count;
    ordered_json fits = ordered_json::array();
    for (const auto& fit : result.fits) {
      ordered_json f;
      f["m"] = fit.m;
      f["mse_slope"] = fit.mse_slope ? ordered_json(*fit.mse_slope) : ordered_json(nullptr);
      f["lmax_slope"] = fit.lmax_slope ? ordered_json(*fit.lmax_slope) : ordered_json(nullptr);
      f["lmin_slope"] = fit.lmin_slope ? ordered_json(*fit.lmin_slope) : ordered_json(nullptr);
      fits.push_back(f);
    }
    summary["fits"] = fits;
    summary["master_seed"] = result.config.master_seed;
    ordered_json seeds = ordered_json::array();
    for (int s = 0; s < result.config.n_seeds; ++s) seeds.push_back(s);
    summary["seed_indices"] = seeds;
    summary["config_echo"] = render_config(result.config);
    std::ofstream out(summary_path, std::ios::binary);
    if (!out) throw std::runtime_error("write_results: cannot open " + summary_path);
    out << summary.dump(2) << "\n";
    if (!out) throw std::runtime_error("write_results: write failed for " + summary_path);
  }
  manifest.push_back(summary_path);

  const std::string echo_path = (fs::path(dir) / "config_echo.txt").string();
  {
    std::ofstream out(echo_path, std::ios::binary);
    if (!out) throw std::runtime_error("write_results: cannot open " + echo_path);
    out << render_config(result.config);
    if (!out) throw std::runtime_error("write_results: write failed for " + echo_path);
  }
  manifest.push_back(echo_path);

  for (const auto& cell : result.cell_diags) {
    const std::string cell_path = (fs::path(dir) / cell_csv_name(cell)).string();
    write_diagnostics_csv(cell.rows, cell_path);
    manifest.push_back(cell_path);
  }
  return manifest;
}

Vector default_x0(const std::string& model_name, int nx) {
  if (model_name == "lorenz63") {
    Vector x0(3);
    x0 << -5.9, -5.6, 24.4;
    return x0;
  }
  return Vector::Zero(nx);
}

}  // namespace enkbf
