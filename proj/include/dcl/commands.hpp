#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dcl/config.hpp"
#include "dcl/data.hpp"

namespace dcl {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Structured `key: value` record of one command invocation.  The resolved
/// configuration follows a "[config]" line so it can be re-parsed.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::string seed;
  std::string toolkit_version = kToolkitVersion;
  std::vector<std::string> artifacts;  // relative to the run directory
  std::vector<std::pair<std::string, std::string>> extra;
  std::string resolved_config;

  std::string to_text() const;
  void write(const std::filesystem::path& dir) const;
  static RunManifest read(const std::filesystem::path& dir);
};

/// `<name>_<seed>_<UTC timestamp>` under `parent`, made unique with a numeric
/// suffix when it already exists.
std::filesystem::path make_run_dir(const std::filesystem::path& parent, const std::string& name,
                                   const std::string& seed);

/// Source and target dataset specs described by the data section.
std::pair<DatasetSpec, DatasetSpec> dataset_specs(const ExperimentConfig& cfg);

/// Entry point of the `dcl` executable.  Returns the process exit code; errors
/// are reported as one `dcl: <class>: <message>` line on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dcl
