#pragma once

// Subcommands of the `cisum` executable, callable in-process.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cisum/config.hpp"

namespace cisum::cli {

inline const std::vector<std::string> kCommands = {"train",    "evaluate",      "summarize",
                                                   "synth-data", "gen-scsc-data", "train-scsc"};

struct RunSpec {
  std::string command;
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;  // key=value
  std::filesystem::path out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<double> tau;
};

// Profile defaults, then the config file, then --set overrides, then the
// dedicated flags. Unknown keys throw ConfigError.
Settings resolve_settings(const RunSpec& spec);

// Runs one command. Artifacts go to spec.out, always including
// config.resolved. On failure writes error.json there (when possible),
// prints the same record to `err`, and returns a nonzero status.
int run(const RunSpec& spec, std::ostream& err);

// Reads CISUM_LOG (error | info | debug); defaults to info.
void init_logging();

}  // namespace cisum::cli
