#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "evanflow/fields.hpp"
#include "evanflow/integrate.hpp"
#include "json.hpp"

namespace evanflow::cli {

enum ExitCode : int {
  kPass = 0,
  kInputError = 1,
  kCheckFailed = 2,
  kHypothesisNotMet = 3,
};

/// Everything a run depends on. Parsed strictly from JSON (unknown keys are
/// rejected); `to_json` echoes every field with its resolved default.
struct RunConfig {
  std::string command;

  std::string potential;
  std::string potential2;  // determine
  std::string f;           // reconstruct
  std::optional<Vector> x0;
  std::optional<Vector> v0;
  std::optional<Vector> crit;  // known critical point; default: origin if critical

  IntegratorOptions integrator;

  std::size_t n = 240;
  std::optional<double> mu;  // unset: auto-calibrated
  double tol_opt = 1e-8;
  std::size_t max_iters = 50000;
  std::string solver = "action";  // action | shooting | both
  bool crossval = true;

  std::string grid;
  std::size_t samples = 50;
  std::size_t pairs = 200;
  double radius = 2.0;
  bool v_convex_variant = false;

  std::uint64_t seed = 12345;
  std::string out = "evanflow_out";
  std::vector<std::string> checks{"all"};
  /// Execution only; results do not depend on it, so it is not echoed.
  unsigned workers = 0;
};

/// Strict parse. `command` selects command-specific defaults (the horizon is
/// 10 for flows and 12 for evanescent solves and reconstruction).
RunConfig parse_config(const nlohmann::json& j, const std::string& command);
nlohmann::json to_json(const RunConfig& c);

int cmd_flow(const RunConfig& c, std::ostream& log);
int cmd_second_order(const RunConfig& c, std::ostream& log);
int cmd_evanesce(const RunConfig& c, std::ostream& log);
int cmd_reconstruct(const RunConfig& c, std::ostream& log);
int cmd_determine(const RunConfig& c, std::ostream& log);
int cmd_check_convexity(const RunConfig& c, std::ostream& log);

/// Full command line (args[0] is the program name). Never throws; input
/// problems are reported on `err` with exit code 1.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace evanflow::cli
