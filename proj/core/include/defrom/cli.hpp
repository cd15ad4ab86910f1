#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "defrom/parametric.hpp"
#include "defrom/subspace_opt.hpp"
#include "defrom/text_io.hpp"

namespace defrom {

// Exit codes shared by every subcommand.
inline constexpr int kExitSuccess = 0;
inline constexpr int kExitUsage = 1;    // bad flags, bad config, missing inputs
inline constexpr int kExitNumeric = 2;  // solver failure or violated invariant

// Fully resolved run configuration.  Every field has a usable default so a
// config file only needs to mention what it changes; `parse_run_config`
// rejects unknown keys to keep typos loud.
struct RunConfig {
  // Problem source: exactly one of `problem_path` (a saved bundle) or
  // `generator` ("diffusion_1d" or "random_spd") must be set.
  std::string problem_path;
  std::string generator;

  // diffusion_1d settings.
  int n_elements = 64;
  std::string quad_kind = "gauss";  // "gauss" or "explicit"
  int quad_count = 33;
  double quad_a = 1.0;
  double quad_b = 2.0;
  std::vector<double> quad_nodes;    // used when quad_kind == "explicit"
  std::vector<double> quad_weights;  // parallel to quad_nodes
  std::string reference = "midpoint";  // midpoint | identity | mass | stiffness:<gamma>

  // random_spd settings.
  Eigen::Index n = 16;
  Eigen::Index n_nodes = 8;

  // Which method(s) `run` executes: "deflation", "pod", or "both".
  std::string method = "deflation";

  Eigen::Index deflation_k = 1;
  double deflation_tol = 1e-8;
  Eigen::Index max_steps = 0;  // 0 -> twice the space dimension

  OptimizerOptions optimizer;

  std::string pod_inner = "reference";  // reference | identity | mean
  Eigen::Index pod_k = 8;

  std::string output_dir;
  std::uint64_t seed = 0;
  Eigen::Index check_every = 10;  // cadence for direct residual cross-checks
  double check_tol = 1e-9;        // invariant tolerance for run/check
  int threads = 0;                // 0 -> environment / hardware default
  bool gnuplot = false;
};

// Parses and validates a key/value configuration.  Throws ConfigError on
// unknown keys, malformed numbers, or inconsistent settings.
RunConfig parse_run_config(const KeyValues& kv);

// Serializes the resolved configuration (defaults included) in a fixed key
// order, suitable for the `config.echo` artifact.
KeyValues echo_run_config(const RunConfig& config);

// Builds the problem named by the configuration, either by loading a bundle
// from disk or by running the named generator.
Problem resolve_problem(const RunConfig& config);

// Subcommand entry points.  Each writes artifacts beneath
// `config.output_dir`, logs a short summary to `out`, and returns an exit
// code; hard failures are thrown and mapped by `cli_main`.
int cmd_generate(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_run(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_check(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_compare(const RunConfig& config, std::ostream& out, std::ostream& err);

// Full command-line driver.  `args` holds the arguments after the program
// name, e.g. {"run", "study.cfg", "--deflation.k=2"}.  Returns an exit code
// and never throws.
int cli_main(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace defrom
