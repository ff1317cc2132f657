#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "bprouter/simulator.hpp"

namespace bprouter {

/// Process exit codes. Stable across releases.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  ///< unexpected runtime error
  kExitUsage = 2,    ///< bad flags
  kExitInput = 3,    ///< missing or invalid input file, bad config value
};

using EnvLookup = std::function<const char*(const char*)>;

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env);
int run_cli(int argc, char** argv);

/// Writes summary.json, phases.csv, seeds.csv and windows.csv under `dir`.
/// Files are replaced atomically; identical traces give identical bytes.
nlohmann::json write_report(const std::vector<SeedTrace>& traces, const std::string& dir, std::size_t window,
                            std::size_t resamples);

/// Sorted trace_*.jsonl paths in `dir`.
std::vector<std::string> find_traces(const std::string& dir);

void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace bprouter
