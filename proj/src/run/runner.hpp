#pragma once

#include <string>
#include <vector>

#include "run/config.hpp"

namespace ply::run {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// The synthetic-model invariant suite behind the `selfcheck` command. Every
// check runs; a failing check reports its diagnostic instead of aborting.
std::vector<CheckResult> selfcheck(uint64_t seed);

struct RunResult {
  int exit_code = 0;
  std::string summary_json;
};

const std::vector<std::string>& command_names();

// Executes one command, writing artifacts and a manifest under cfg.out.
// Partial outputs are removed when the command throws.
RunResult run_command(const std::string& command, const RunConfig& cfg);

}  // namespace ply::run
