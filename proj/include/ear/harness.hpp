// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

// Command implementations behind the ear_harness binary. Each command
// writes its records to the given stream and reports failures by throwing
// the library error types; harness_main maps those to exit codes.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ear/run_config.hpp"

namespace ear {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitConfig = 2,
  kExitInput = 3,
  kExitCapability = 4,
};

struct CommandOptions {
  bool timing = true;
  std::size_t workers = 1;
};

inline constexpr const char* kSweepCsvHeader = "policy,density,relaxed_objective,map_mse,output_mse,flops,seed,c_q,c_k";

/// Writes a blob instance for the first configured seed.
void cmd_gen(const RunConfig& config, const std::string& output_path);

/// One JSON line per seed. Map and output errors are null when the instance
/// exceeds oracleMaxEntries.
void cmd_run(const std::string& tensor_path, const RunConfig& config, const CommandOptions& options,
             std::ostream& out);

/// CSV over config.sweep_policies x config.density_grid x config.seeds.
void cmd_sweep(const std::string& tensor_path, const RunConfig& config, const CommandOptions& options,
               std::ostream& out);

/// One JSON line per seed with the invariant checks and the error-bound
/// report. Returns true iff every hard check passed; the bound never gates.
bool cmd_verify(const std::string& tensor_path, const RunConfig& config, const CommandOptions& options,
                std::ostream& out);

/// Full command-line entry point. `args` excludes the program name.
int harness_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ear
