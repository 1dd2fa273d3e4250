#pragma once

// Acceptance checks shared by the acceptance binary and `roma selftest`.
// Every check is deterministic; detail strings never contain timings so the
// selftest report is byte-stable.

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace roma::checks {

struct CheckResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
};

// Runs the command-line front end in-process: args exclude the program name.
using CliRunner = std::function<int(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)>;

struct CheckContext {
    CliRunner run_cli;           // required by the determinism check
    std::string cli_executable;  // optional: also compare two spawned `selftest` runs
};

CheckResult gradient_correctness();
CheckResult loss_asymptotics();
CheckResult decode_oracle();
CheckResult multimodality();
CheckResult loss_motivation();
CheckResult cascade_refinement();
CheckResult gp_interpolation();
CheckResult steering_recovery();
CheckResult balanced_sampling();
CheckResult metric_oracles();
CheckResult determinism(const CheckContext& ctx);

struct NamedCheck {
    int id;
    std::string name;
    std::function<CheckResult()> run;
};

std::vector<NamedCheck> all_checks(const CheckContext& ctx);

std::string format_line(const CheckResult& r);

}  // namespace roma::checks
