#include "defrom/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "defrom/deflation.hpp"
#include "defrom/errors.hpp"
#include "defrom/galerkin.hpp"
#include "defrom/parallel.hpp"
#include "defrom/pod.hpp"

namespace defrom {

namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Typed config accessors. All parse failures are rethrown as ConfigError with
// the offending key named, so a bad config exits with a usage error and not a
// numerical one.

double config_double(const KeyValues& kv, const std::string& key,
                     double fallback) {
  const std::string* raw = kv.find(key);
  if (raw == nullptr) return fallback;
  try {
    return parse_double(*raw);
  } catch (const IoError&) {
    throw ConfigError("config key '" + key + "': not a number: '" + *raw +
                      "'");
  }
}

long long config_int(const KeyValues& kv, const std::string& key,
                     long long fallback) {
  const std::string* raw = kv.find(key);
  if (raw == nullptr) return fallback;
  try {
    return parse_int(*raw);
  } catch (const IoError&) {
    throw ConfigError("config key '" + key + "': not an integer: '" + *raw +
                      "'");
  }
}

bool config_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  const std::string* raw = kv.find(key);
  if (raw == nullptr) return fallback;
  if (*raw == "true" || *raw == "1") return true;
  if (*raw == "false" || *raw == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" +
                    *raw + "'");
}

std::vector<double> config_double_list(const KeyValues& kv,
                                       const std::string& key) {
  std::vector<double> out;
  const std::string* raw = kv.find(key);
  if (raw == nullptr) return out;
  std::istringstream in(*raw);
  std::string token;
  while (in >> token) {
    try {
      out.push_back(parse_double(token));
    } catch (const IoError&) {
      throw ConfigError("config key '" + key + "': not a number: '" + token +
                        "'");
    }
  }
  return out;
}

std::string join_doubles(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ' ';
    out += fmt_double(values[i]);
  }
  return out;
}

// Keys the parser understands; anything else in the file or on the command
// line is rejected so typos cannot silently fall back to defaults.
const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "problem.path",      "problem.generator",  "problem.n_elements",
      "problem.quad.kind", "problem.quad.count", "problem.quad.a",
      "problem.quad.b",    "problem.quad.nodes", "problem.quad.weights",
      "problem.reference", "problem.n",          "problem.n_nodes",
      "method",            "deflation.k",        "deflation.tol",
      "deflation.max_steps", "optimizer.tol",    "optimizer.n_starts",
      "optimizer.max_iters", "optimizer.max_sweeps", "pod.inner",
      "pod.k",             "output_dir",         "seed",
      "check_every",       "check.tol",          "threads",
      "gnuplot",
  };
  return keys;
}

ReferenceSpec parse_reference_spec(const std::string& text) {
  if (text == "midpoint") return ReferenceSpec::midpoint();
  if (text == "identity") return ReferenceSpec::identity();
  if (text == "mass") return ReferenceSpec::mass();
  const std::string prefix = "stiffness:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string arg = text.substr(prefix.size());
    try {
      return ReferenceSpec::stiffness(parse_double(arg));
    } catch (const IoError&) {
      throw ConfigError("problem.reference: bad stiffness parameter '" + arg +
                        "'");
    }
  }
  throw ConfigError(
      "problem.reference: expected midpoint, identity, mass, or "
      "stiffness:<gamma>, got '" +
      text + "'");
}

std::string reference_spec_text(const ReferenceSpec& spec) {
  switch (spec.kind) {
    case ReferenceSpec::Kind::midpoint_stiffness:
      return "midpoint";
    case ReferenceSpec::Kind::stiffness_at:
      return "stiffness:" + fmt_double(spec.gamma);
    case ReferenceSpec::Kind::identity:
      return "identity";
    case ReferenceSpec::Kind::mass:
      return "mass";
  }
  throw ConfigError("problem.reference: unknown kind");
}

QuadratureSpec quad_spec(const RunConfig& config) {
  if (config.quad_kind == "gauss")
    return QuadratureSpec::gauss(config.quad_count, config.quad_a,
                                 config.quad_b);
  if (config.quad_kind == "explicit") {
    if (config.quad_nodes.empty())
      throw ConfigError(
          "problem.quad.nodes: explicit quadrature needs at least one node");
    if (config.quad_nodes.size() != config.quad_weights.size())
      throw ConfigError(
          "problem.quad.weights: length must match problem.quad.nodes");
    return QuadratureSpec::explicit_rule(config.quad_nodes,
                                         config.quad_weights);
  }
  throw ConfigError("problem.quad.kind: expected gauss or explicit, got '" +
                    config.quad_kind + "'");
}

// Resolves the SPD inner product used by the POD method.
SymmetricForm pod_inner_form(const RunConfig& config,
                             const ParametricOperator& op,
                             const ParameterGrid& grid) {
  if (config.pod_inner == "reference") return op.reference;
  if (config.pod_inner == "identity") return SymmetricForm::identity(op.dim());
  if (config.pod_inner == "mean")
    return weighted_sum(op.forms, grid.weights());
  throw ConfigError("pod.inner: expected reference, identity, or mean, got '" +
                    config.pod_inner + "'");
}

// ---------------------------------------------------------------------------
// Output artifacts.

void write_timings(const fs::path& path, const std::vector<double>& wall_ms,
                   double total_ms) {
  // Wall-clock data is intentionally kept out of curves.csv so that CSV
  // artifacts are bit-identical across reruns of the same config.
  std::string text =
      "# wall-clock timings in milliseconds (not reproducible)\n";
  for (std::size_t i = 0; i < wall_ms.size(); ++i) {
    text += "step_" + std::to_string(i + 1) + "_wall_ms = " +
            fmt_double(wall_ms[i]) + "\n";
  }
  text += "total_wall_ms = " + fmt_double(total_ms) + "\n";
  write_file(path, text);
}

struct CurveData {
  // Per-step deflation columns (entry i belongs to csv row index i; row 0 is
  // the initial state with no step energy).
  std::vector<double> step_energy;          // size = steps
  std::vector<double> ledger;               // size = steps + 1, [0] = initial
  std::vector<double> recomputed;           // same layout as ledger
  std::optional<std::vector<double>> pod_error;  // size = modes + 1
};

void write_curves_csv(const fs::path& path, const CurveData& data) {
  CsvTable table;
  table.header = {"index"};
  const bool with_deflation = !data.ledger.empty();
  if (with_deflation) {
    table.header.push_back("step_energy");
    table.header.push_back("residual_energy_ledger");
    table.header.push_back("residual_energy_recomputed");
  }
  if (data.pod_error) table.header.push_back("pod_error");

  std::size_t n_rows = data.ledger.size();
  if (data.pod_error) n_rows = std::max(n_rows, data.pod_error->size());
  for (std::size_t i = 0; i < n_rows; ++i) {
    std::vector<std::string> row;
    row.push_back(std::to_string(i));
    if (with_deflation) {
      if (i < data.ledger.size()) {
        row.push_back(i == 0 ? fmt_double(0.0)
                             : fmt_double(data.step_energy[i - 1]));
        row.push_back(fmt_double(data.ledger[i]));
        row.push_back(fmt_double(data.recomputed[i]));
      } else {
        row.insert(row.end(), {"", "", ""});
      }
    }
    if (data.pod_error) {
      row.push_back(i < data.pod_error->size()
                        ? fmt_double((*data.pod_error)[i])
                        : std::string());
    }
    table.rows.push_back(std::move(row));
  }
  table.save(path);
}

void write_gnuplot_script(const fs::path& path, const std::string& csv_name,
                          const std::vector<std::pair<int, std::string>>&
                              columns /* 1-based csv column, title */) {
  std::string text;
  text += "# generated by deflate-rom; render with: gnuplot " +
          path.filename().string() + "\n";
  text += "set datafile separator ','\n";
  text += "set datafile missing ''\n";
  text += "set logscale y\n";
  text += "set xlabel 'expansion size'\n";
  text += "set ylabel 'mean elliptic energy'\n";
  text += "set grid\n";
  text += "set terminal svg size 860,620\n";
  text += "set output 'curves.svg'\n";
  text += "plot ";
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i > 0) text += ", \\\n     ";
    text += "'" + csv_name + "' using 1:" + std::to_string(columns[i].first) +
            " with linespoints title '" + columns[i].second + "'";
  }
  text += "\n";
  write_file(path, text);
}

// Straight-line least squares of log(values) against the index, restricted
// to positive entries; mirrors the deflation decay diagnostic so the two
// methods are compared on the same footing.
struct RateFit {
  std::optional<double> slope;
  std::optional<double> rho;
};

RateFit fit_decay_rate(const std::vector<double>& values) {
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > 0.0)
      pts.emplace_back(static_cast<double>(i + 1), std::log(values[i]));
  }
  RateFit fit;
  if (values.size() < 3 || pts.size() < 2) return fit;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(pts.size());
  const double denom = n * sxx - sx * sx;
  if (denom <= 0.0) return fit;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.rho = std::exp(-*fit.slope / 2.0);
  return fit;
}

// Recomputes the residual energies of an expansion directly against the
// truth field: entry 0 is the full energy, entry i the energy of the error
// after i terms. The cross-check cadence selects which entries are compared
// against the ledger; all of them are written to the CSV.
std::vector<double> direct_residual_energies(const ParametricOperator& op,
                                             const ParameterGrid& grid,
                                             const DeflationExpansion& exp,
                                             const ParametricField& truth) {
  std::vector<double> out;
  out.reserve(exp.terms.size() + 1);
  ParametricField partial =
      ParametricField::zero(truth.dim(), truth.n_nodes());
  out.push_back(mean_error(op, grid, truth, partial));
  for (const auto& term : exp.terms) {
    for (Eigen::Index q = 0; q < truth.n_nodes(); ++q) {
      partial.values[static_cast<std::size_t>(q)] +=
          term.basis.vectors * term.coefficients.coefficients[
              static_cast<std::size_t>(q)];
    }
    out.push_back(mean_error(op, grid, truth, partial));
  }
  return out;
}

struct InvariantFailure {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
};

void report_failures(const std::vector<InvariantFailure>& failures,
                     std::ostream& err) {
  for (const auto& f : failures) {
    err << "invariant violated: " << f.name << " = " << fmt_double(f.value)
        << " exceeds " << fmt_double(f.bound) << "\n";
  }
}

OptimizerOptions optimizer_options(const RunConfig& config) {
  OptimizerOptions opt = config.optimizer;
  opt.seed = config.seed;
  return opt;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config parsing.

RunConfig parse_run_config(const KeyValues& kv) {
  for (const auto& [key, value] : kv.items()) {
    (void)value;
    if (std::find(known_keys().begin(), known_keys().end(), key) ==
        known_keys().end())
      throw ConfigError("unknown config key '" + key + "'");
  }

  RunConfig config;
  config.problem_path = kv.get_or("problem.path", "");
  config.generator = kv.get_or("problem.generator", "");
  if (config.problem_path.empty() == config.generator.empty())
    throw ConfigError(
        "exactly one of problem.path and problem.generator must be set");

  config.n_elements =
      static_cast<int>(config_int(kv, "problem.n_elements", 64));
  config.quad_kind = kv.get_or("problem.quad.kind", "gauss");
  config.quad_count = static_cast<int>(config_int(kv, "problem.quad.count", 33));
  config.quad_a = config_double(kv, "problem.quad.a", 1.0);
  config.quad_b = config_double(kv, "problem.quad.b", 2.0);
  config.quad_nodes = config_double_list(kv, "problem.quad.nodes");
  config.quad_weights = config_double_list(kv, "problem.quad.weights");
  config.reference = kv.get_or("problem.reference", "midpoint");
  config.n = config_int(kv, "problem.n", 16);
  config.n_nodes = config_int(kv, "problem.n_nodes", 8);

  config.method = kv.get_or("method", "deflation");
  if (config.method != "deflation" && config.method != "pod" &&
      config.method != "both")
    throw ConfigError("method: expected deflation, pod, or both, got '" +
                      config.method + "'");

  config.deflation_k = config_int(kv, "deflation.k", 1);
  config.deflation_tol = config_double(kv, "deflation.tol", 1e-8);
  config.max_steps = config_int(kv, "deflation.max_steps", 0);
  config.optimizer.tol = config_double(kv, "optimizer.tol", 1e-9);
  config.optimizer.n_starts =
      static_cast<int>(config_int(kv, "optimizer.n_starts", 8));
  config.optimizer.max_iters =
      static_cast<int>(config_int(kv, "optimizer.max_iters", 10000));
  config.optimizer.max_sweeps =
      static_cast<int>(config_int(kv, "optimizer.max_sweeps", 200));
  config.pod_inner = kv.get_or("pod.inner", "reference");
  config.pod_k = config_int(kv, "pod.k", 8);

  config.output_dir = kv.get_or("output_dir", "");
  const long long seed = config_int(kv, "seed", 0);
  if (seed < 0) throw ConfigError("seed: must be nonnegative");
  config.seed = static_cast<std::uint64_t>(seed);
  config.check_every = config_int(kv, "check_every", 10);
  config.check_tol = config_double(kv, "check.tol", 1e-9);
  config.threads = static_cast<int>(config_int(kv, "threads", 0));
  config.gnuplot = config_bool(kv, "gnuplot", false);

  if (config.deflation_k < 1) throw ConfigError("deflation.k: must be >= 1");
  if (!(config.deflation_tol > 0.0))
    throw ConfigError("deflation.tol: must be positive");
  if (config.max_steps < 0)
    throw ConfigError("deflation.max_steps: must be nonnegative");
  if (!(config.optimizer.tol > 0.0))
    throw ConfigError("optimizer.tol: must be positive");
  if (config.optimizer.n_starts < 1)
    throw ConfigError("optimizer.n_starts: must be >= 1");
  if (config.optimizer.max_iters < 1)
    throw ConfigError("optimizer.max_iters: must be >= 1");
  if (config.optimizer.max_sweeps < 1)
    throw ConfigError("optimizer.max_sweeps: must be >= 1");
  if (config.pod_k < 0) throw ConfigError("pod.k: must be nonnegative");
  if (config.check_every < 1) throw ConfigError("check_every: must be >= 1");
  if (!(config.check_tol > 0.0))
    throw ConfigError("check.tol: must be positive");
  return config;
}

KeyValues echo_run_config(const RunConfig& config) {
  KeyValues kv;
  if (!config.problem_path.empty())
    kv.set("problem.path", config.problem_path);
  if (!config.generator.empty()) {
    kv.set("problem.generator", config.generator);
    if (config.generator == "diffusion_1d") {
      kv.set("problem.n_elements", std::to_string(config.n_elements));
      kv.set("problem.quad.kind", config.quad_kind);
      if (config.quad_kind == "explicit") {
        kv.set("problem.quad.nodes", join_doubles(config.quad_nodes));
        kv.set("problem.quad.weights", join_doubles(config.quad_weights));
      } else {
        kv.set("problem.quad.count", std::to_string(config.quad_count));
        kv.set("problem.quad.a", fmt_double(config.quad_a));
        kv.set("problem.quad.b", fmt_double(config.quad_b));
      }
      kv.set("problem.reference", config.reference);
    } else {
      kv.set("problem.n", std::to_string(config.n));
      kv.set("problem.n_nodes", std::to_string(config.n_nodes));
    }
  }
  kv.set("method", config.method);
  kv.set("deflation.k", std::to_string(config.deflation_k));
  kv.set("deflation.tol", fmt_double(config.deflation_tol));
  kv.set("deflation.max_steps", std::to_string(config.max_steps));
  kv.set("optimizer.tol", fmt_double(config.optimizer.tol));
  kv.set("optimizer.n_starts", std::to_string(config.optimizer.n_starts));
  kv.set("optimizer.max_iters", std::to_string(config.optimizer.max_iters));
  kv.set("optimizer.max_sweeps", std::to_string(config.optimizer.max_sweeps));
  kv.set("pod.inner", config.pod_inner);
  kv.set("pod.k", std::to_string(config.pod_k));
  kv.set("output_dir", config.output_dir);
  kv.set("seed", std::to_string(config.seed));
  kv.set("check_every", std::to_string(config.check_every));
  kv.set("check.tol", fmt_double(config.check_tol));
  kv.set("threads", std::to_string(config.threads));
  kv.set("gnuplot", config.gnuplot ? "true" : "false");
  return kv;
}

Problem resolve_problem(const RunConfig& config) {
  if (!config.problem_path.empty()) return load_problem(config.problem_path);
  if (config.generator == "diffusion_1d") {
    return generate_diffusion_1d(config.n_elements, quad_spec(config),
                                 parse_reference_spec(config.reference));
  }
  if (config.generator == "random_spd") {
    return generate_random_spd_family(config.n, config.n_nodes, config.seed);
  }
  throw ConfigError(
      "problem.generator: expected diffusion_1d or random_spd, got '" +
      config.generator + "'");
}

// ---------------------------------------------------------------------------
// Subcommands.

namespace {

fs::path require_output_dir(const RunConfig& config) {
  if (config.output_dir.empty()) throw ConfigError("output_dir: must be set");
  fs::path dir(config.output_dir);
  fs::create_directories(dir);
  return dir;
}

void apply_thread_cap(const RunConfig& config) {
  if (config.threads > 0) set_max_threads(config.threads);
}

}  // namespace

int cmd_generate(const RunConfig& config, std::ostream& out, std::ostream&) {
  if (config.generator.empty())
    throw ConfigError("generate: problem.generator must be set");
  apply_thread_cap(config);
  const fs::path dir = require_output_dir(config);
  const Problem problem = resolve_problem(config);
  // The output directory itself is the bundle, so it can be fed back as
  // problem.path to the other subcommands.
  save_problem(dir, problem);
  echo_run_config(config).save(dir / "config.echo");
  out << "generated " << config.generator << ": n = " << problem.op.dim()
      << ", nodes = " << problem.grid.n_nodes() << ", bundle at " << dir.string()
      << "\n";
  return kExitSuccess;
}

int cmd_run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  apply_thread_cap(config);
  const fs::path dir = require_output_dir(config);
  const Problem problem = resolve_problem(config);
  const ParametricOperator& op = problem.op;
  const ParameterGrid& grid = problem.grid;
  const ParametricRHS& rhs = problem.rhs;

  if (!config.generator.empty()) save_problem(dir / "problem", problem);
  echo_run_config(config).save(dir / "config.echo");

  const bool want_deflation =
      config.method == "deflation" || config.method == "both";
  const bool want_pod = config.method == "pod" || config.method == "both";
  if (config.deflation_k > op.dim())
    throw ConfigError("deflation.k: exceeds the space dimension " +
                      std::to_string(op.dim()));
  if (want_pod && config.pod_k > op.dim())
    throw ConfigError("pod.k: exceeds the space dimension " +
                      std::to_string(op.dim()));

  const auto t0 = std::chrono::steady_clock::now();
  const ParametricField truth = truth_solve(op, rhs);
  out << "problem: n = " << op.dim() << ", nodes = " << grid.n_nodes()
      << ", truth family rank = "
      << field_rank(truth, op.reference) << "\n";

  CurveData curves;
  std::vector<InvariantFailure> failures;
  std::vector<double> wall_ms;

  if (want_deflation) {
    OptimizerOptions opt = optimizer_options(config);
    opt.total_energy = output_functional(rhs, grid, truth);
    const DeflationRun run =
        run_deflation(op, grid, rhs, config.deflation_k, config.deflation_tol,
                      static_cast<int>(config.max_steps), opt);
    save_expansion(dir / "expansion", run.expansion);

    const DeflationExpansion& exp = run.expansion;
    curves.ledger.push_back(exp.initial_energy);
    for (double e : exp.residual_energies) curves.ledger.push_back(e);
    for (const auto& term : exp.terms)
      curves.step_energy.push_back(term.step_energy);
    curves.recomputed = direct_residual_energies(op, grid, exp, truth);
    for (const auto& step : run.steps) wall_ms.push_back(step.wall_ms);

    const double scale = exp.initial_energy > 0.0 ? exp.initial_energy : 1.0;
    const IdentityReport report = verify_identities(op, grid, rhs, exp, truth);
    if (report.max_orthogonality > config.check_tol)
      failures.push_back({"deflation-orthogonality", report.max_orthogonality,
                          config.check_tol});
    if (report.max_ledger_imbalance > config.check_tol)
      failures.push_back({"deflation-ledger-balance",
                          report.max_ledger_imbalance, config.check_tol});
    // Cross-check the ledger against direct evaluation at the configured
    // cadence and at the final step.
    double max_cadence_gap = 0.0;
    for (std::size_t i = 1; i < curves.ledger.size(); ++i) {
      const bool due = (i % static_cast<std::size_t>(config.check_every)) == 0 ||
                       i + 1 == curves.ledger.size();
      if (!due) continue;
      max_cadence_gap =
          std::max(max_cadence_gap,
                   std::abs(curves.ledger[i] - curves.recomputed[i]) / scale);
    }
    if (max_cadence_gap > config.check_tol)
      failures.push_back(
          {"deflation-ledger-vs-truth", max_cadence_gap, config.check_tol});
    // The ledger must never increase (monotone refinement).
    double worst_increase = 0.0;
    for (std::size_t i = 1; i < curves.ledger.size(); ++i)
      worst_increase = std::max(
          worst_increase, (curves.ledger[i] - curves.ledger[i - 1]) / scale);
    if (worst_increase > config.check_tol)
      failures.push_back(
          {"deflation-monotonicity", worst_increase, config.check_tol});

    const DecayDiagnostic decay = decay_diagnostic(exp);
    out << "deflation: " << exp.terms.size() << " steps (k = "
        << config.deflation_k << "), residual energy "
        << fmt_double(exp.current_energy()) << " of "
        << fmt_double(exp.initial_energy)
        << (run.converged ? "" : " [tolerance not reached]") << "\n";
    if (decay.rho)
      out << "deflation: fitted decay rate rho = " << fmt_double(*decay.rho)
          << "\n";
  }

  if (want_pod) {
    const SymmetricForm inner = pod_inner_form(config, op, grid);
    const Eigen::Index k_max = std::min(op.dim(), grid.n_nodes());
    const Eigen::Index k = std::min(config.pod_k, k_max);
    const PodBasis pod = pod_modes(truth, grid, inner, k);
    save_pod(dir / "pod", pod);
    curves.pod_error = pod_error_curve(pod, op, grid, rhs, truth);

    const std::vector<double>& curve = *curves.pod_error;
    const double scale = curve.empty() || curve[0] <= 0.0 ? 1.0 : curve[0];
    double worst_increase = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i)
      worst_increase =
          std::max(worst_increase, (curve[i] - curve[i - 1]) / scale);
    if (worst_increase > config.check_tol)
      failures.push_back(
          {"pod-monotonicity", worst_increase, config.check_tol});
    out << "pod: " << pod.modes.size() << " modes (inner = " << config.pod_inner
        << "), projection energy " << fmt_double(curve.back()) << " of "
        << fmt_double(curve.front()) << "\n";
  }

  write_curves_csv(dir / "curves.csv", curves);
  const double total_ms =
      std::chrono::duration<double, std::milli>(
          std::chrono::steady_clock::now() - t0)
          .count();
  write_timings(dir / "timings.txt", wall_ms, total_ms);

  if (config.gnuplot) {
    std::vector<std::pair<int, std::string>> columns;
    if (want_deflation) columns.emplace_back(3, "deflation residual energy");
    if (want_pod)
      columns.emplace_back(want_deflation ? 5 : 2, "pod projection energy");
    write_gnuplot_script(dir / "plot.gp", "curves.csv", columns);
  }

  out << "artifacts written to " << dir.string() << "\n";
  if (!failures.empty()) {
    report_failures(failures, err);
    return kExitNumeric;
  }
  return kExitSuccess;
}

int cmd_check(const RunConfig& config, std::ostream& out, std::ostream& err) {
  apply_thread_cap(config);
  if (config.output_dir.empty()) throw ConfigError("output_dir: must be set");
  const fs::path dir(config.output_dir);
  const Problem problem = resolve_problem(config);
  const ParametricOperator& op = problem.op;
  const ParameterGrid& grid = problem.grid;
  const ParametricRHS& rhs = problem.rhs;

  const DeflationExpansion exp = load_expansion(dir / "expansion");
  const ParametricField truth = truth_solve(op, rhs);
  const IdentityReport report = verify_identities(op, grid, rhs, exp, truth);
  const double scale = exp.initial_energy > 0.0 ? exp.initial_energy : 1.0;

  // Duality identity per step: the mean energy of the term equals the mean
  // residual output at the term, because the coefficients are node-by-node
  // Galerkin optimal.
  std::vector<double> duality(exp.terms.size(), 0.0);
  double max_duality = 0.0;
  {
    const Eigen::Index n_nodes = rhs.n_nodes();
    std::vector<Vector> partial(static_cast<std::size_t>(n_nodes),
                                Vector::Zero(rhs.dim()));
    for (std::size_t i = 0; i < exp.terms.size(); ++i) {
      const DeflationTerm& term = exp.terms[i];
      double energy = 0.0;
      double residual_output = 0.0;
      for (Eigen::Index q = 0; q < n_nodes; ++q) {
        const auto uq = static_cast<std::size_t>(q);
        const Vector s =
            term.basis.vectors * term.coefficients.coefficients[uq];
        const Vector f_hat =
            rhs.vectors[uq] - op.forms[uq].multiply(partial[uq]);
        energy += grid.weights()[q] * op.forms[uq].quadratic(s);
        residual_output += grid.weights()[q] * f_hat.dot(s);
        partial[uq] += s;
      }
      duality[i] = std::abs(energy - residual_output) / scale;
      max_duality = std::max(max_duality, duality[i]);
    }
  }

  out << "step  orthogonality  ledger-balance  ledger-vs-truth  duality\n";
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& row = report.rows[i];
    out << row.step << "  " << fmt_double(row.orthogonality) << "  "
        << fmt_double(row.ledger_imbalance) << "  "
        << fmt_double(row.recomputed_gap) << "  " << fmt_double(duality[i])
        << "\n";
  }

  std::vector<InvariantFailure> failures;
  if (report.max_orthogonality > config.check_tol)
    failures.push_back(
        {"orthogonality", report.max_orthogonality, config.check_tol});
  if (report.max_ledger_imbalance > config.check_tol)
    failures.push_back(
        {"ledger-balance", report.max_ledger_imbalance, config.check_tol});
  if (report.max_recomputed_gap > config.check_tol)
    failures.push_back(
        {"ledger-vs-truth", report.max_recomputed_gap, config.check_tol});
  if (max_duality > config.check_tol)
    failures.push_back({"duality", max_duality, config.check_tol});

  if (!failures.empty()) {
    report_failures(failures, err);
    return kExitNumeric;
  }
  out << "all identities within " << fmt_double(config.check_tol) << " over "
      << report.rows.size() << " steps\n";
  return kExitSuccess;
}

int cmd_compare(const RunConfig& config, std::ostream& out,
                std::ostream& err) {
  apply_thread_cap(config);
  const fs::path dir = require_output_dir(config);
  const Problem problem = resolve_problem(config);
  const ParametricOperator& op = problem.op;
  const ParameterGrid& grid = problem.grid;
  const ParametricRHS& rhs = problem.rhs;

  if (config.pod_k > op.dim())
    throw ConfigError("pod.k: exceeds the space dimension " +
                      std::to_string(op.dim()));
  echo_run_config(config).save(dir / "config.echo");

  const auto t0 = std::chrono::steady_clock::now();
  const ParametricField truth = truth_solve(op, rhs);

  // Deflation side, always rank-1 so the two expansions grow one dimension
  // per step and the curves are directly comparable.
  OptimizerOptions opt = optimizer_options(config);
  opt.total_energy = output_functional(rhs, grid, truth);
  const DeflationRun run =
      run_deflation(op, grid, rhs, 1, config.deflation_tol,
                    static_cast<int>(config.max_steps), opt);
  save_expansion(dir / "expansion", run.expansion);
  const DeflationExpansion& exp = run.expansion;

  // POD side.
  const SymmetricForm inner = pod_inner_form(config, op, grid);
  const Eigen::Index k = std::min(config.pod_k, std::min(op.dim(), grid.n_nodes()));
  const PodBasis pod = pod_modes(truth, grid, inner, k);
  save_pod(dir / "pod", pod);
  const std::vector<double> pod_curve = pod_error_curve(pod, op, grid, rhs, truth);

  // Aligned curves: row m holds both errors after m expansion dimensions.
  CsvTable table;
  table.header = {"index", "deflation_residual_energy", "pod_error"};
  const std::size_t n_rows =
      std::max(exp.residual_energies.size() + 1, pod_curve.size());
  for (std::size_t i = 0; i < n_rows; ++i) {
    std::vector<std::string> row;
    row.push_back(std::to_string(i));
    if (i == 0)
      row.push_back(fmt_double(exp.initial_energy));
    else if (i <= exp.residual_energies.size())
      row.push_back(fmt_double(exp.residual_energies[i - 1]));
    else
      row.push_back("");
    row.push_back(i < pod_curve.size() ? fmt_double(pod_curve[i])
                                       : std::string());
    table.rows.push_back(std::move(row));
  }
  table.save(dir / "compare.csv");

  // Fitted decay rates, deflation from its own diagnostic and POD from the
  // per-mode captured energies, on the same log-linear model.
  const DecayDiagnostic decay = decay_diagnostic(exp);
  std::vector<double> pod_captured;
  for (std::size_t i = 0; i + 1 < pod_curve.size(); ++i)
    pod_captured.push_back(pod_curve[i] - pod_curve[i + 1]);
  const RateFit pod_fit = fit_decay_rate(pod_captured);

  CsvTable rates;
  rates.header = {"method", "slope", "rho"};
  rates.rows.push_back({"deflation",
                        decay.slope ? fmt_double(*decay.slope) : "",
                        decay.rho ? fmt_double(*decay.rho) : ""});
  rates.rows.push_back({"pod", pod_fit.slope ? fmt_double(*pod_fit.slope) : "",
                        pod_fit.rho ? fmt_double(*pod_fit.rho) : ""});
  rates.save(dir / "rates.csv");

  std::vector<double> wall_ms;
  for (const auto& step : run.steps) wall_ms.push_back(step.wall_ms);
  const double total_ms =
      std::chrono::duration<double, std::milli>(
          std::chrono::steady_clock::now() - t0)
          .count();
  write_timings(dir / "timings.txt", wall_ms, total_ms);

  if (config.gnuplot) {
    write_gnuplot_script(dir / "plot.gp", "compare.csv",
                         {{2, "deflation residual energy"},
                          {3, "pod projection energy"}});
  }

  // The deflation expansion written by compare passes the same invariants
  // as a plain run.
  std::vector<InvariantFailure> failures;
  const IdentityReport report = verify_identities(op, grid, rhs, exp, truth);
  if (report.max_orthogonality > config.check_tol)
    failures.push_back(
        {"deflation-orthogonality", report.max_orthogonality, config.check_tol});
  if (report.max_ledger_imbalance > config.check_tol)
    failures.push_back({"deflation-ledger-balance",
                        report.max_ledger_imbalance, config.check_tol});
  if (report.max_recomputed_gap > config.check_tol)
    failures.push_back({"deflation-ledger-vs-truth", report.max_recomputed_gap,
                        config.check_tol});

  out << "deflation: " << exp.terms.size() << " steps, final residual energy "
      << fmt_double(exp.current_energy()) << "\n";
  out << "pod: " << pod.modes.size() << " modes, final projection energy "
      << fmt_double(pod_curve.back()) << "\n";
  if (decay.rho) out << "deflation rho = " << fmt_double(*decay.rho) << "\n";
  if (pod_fit.rho) out << "pod rho = " << fmt_double(*pod_fit.rho) << "\n";
  out << "artifacts written to " << dir.string() << "\n";

  if (!failures.empty()) {
    report_failures(failures, err);
    return kExitNumeric;
  }
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// Driver.

namespace {

// Applies "--key=value" overrides captured by allow_extras.
void apply_overrides(KeyValues& kv, const std::vector<std::string>& extras) {
  for (const std::string& raw : extras) {
    if (raw.rfind("--", 0) != 0)
      throw ConfigError("unexpected argument '" + raw + "'");
    const std::string body = raw.substr(2);
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override '" + raw + "' is not of the form --key=value");
    kv.set(body.substr(0, eq), body.substr(eq + 1));
  }
}

}  // namespace

int cli_main(std::vector<std::string> args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{
      "Intrinsic deflation and POD baselines for parametric symmetric "
      "elliptic problems"};
  app.name("deflate-rom");
  app.require_subcommand(1);

  struct SubState {
    std::string config_path;
    int threads = -1;
    bool gnuplot = false;
    CLI::App* sub = nullptr;
  };
  std::vector<std::string> names = {"generate", "run", "check", "compare"};
  std::vector<std::string> descriptions = {
      "write a parametric problem bundle",
      "run deflation and/or POD, write curves and artifacts",
      "re-verify the identities of stored run artifacts",
      "run deflation (k=1) against POD on the same problem"};
  std::vector<SubState> subs(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descriptions[i]);
    sub->add_option("config", subs[i].config_path,
                    "key = value configuration file")
        ->required();
    sub->add_option("--threads", subs[i].threads,
                    "cap on worker threads (default: all cores, or "
                    "DEFLATE_ROM_THREADS)");
    sub->add_flag("--gnuplot", subs[i].gnuplot,
                  "also write a gnuplot script next to the CSV output");
    sub->allow_extras();
    subs[i].sub = sub;
  }

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitSuccess;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  const SubState* active = nullptr;
  std::string command;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (subs[i].sub->parsed()) {
      active = &subs[i];
      command = names[i];
    }
  }
  if (active == nullptr) {
    err << "error: no subcommand given\n";
    return kExitUsage;
  }

  // Stage 1: resolve the configuration. Failures here are usage errors.
  RunConfig config;
  try {
    KeyValues kv = KeyValues::load(active->config_path);
    apply_overrides(kv, active->sub->remaining());
    config = parse_run_config(kv);
    if (active->threads >= 0) config.threads = active->threads;
    if (active->gnuplot) config.gnuplot = true;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  // Stage 2: execute. Configuration errors discovered late (an unknown
  // generator name, k too large for the loaded problem) still exit as usage
  // errors; everything else numerical maps to the numeric failure code.
  try {
    if (command == "generate") return cmd_generate(config, out, err);
    if (command == "run") return cmd_run(config, out, err);
    if (command == "check") return cmd_check(config, out, err);
    return cmd_compare(config, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}

}  // namespace defrom
