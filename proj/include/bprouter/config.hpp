#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bprouter/simulator.hpp"

namespace bprouter {

/// Layered experiment configuration.
///
/// Precedence, highest first: CLI overrides (`--set key=value`), environment
/// variables (BPROUTER_<KEY>), the JSON config file, built-in defaults.
/// Short keys map onto paths in the document; see `config_keys()`.
class ExperimentConfig {
 public:
  ExperimentConfig();

  static const std::map<std::string, std::string>& config_keys();
  static nlohmann::json defaults();

  /// Deep-merges a file document over the current state.
  void merge_file(const nlohmann::json& doc);
  void load_file(const std::string& path);
  /// Reads BPROUTER_<KEY> for every known key through `getenv`.
  void apply_env(const std::function<const char*(const char*)>& getenv);
  /// Applies `key=value` overrides; values parse as JSON, else as strings.
  void apply_overrides(const std::vector<std::string>& assignments);
  void set(const std::string& key, const nlohmann::json& value);

  const nlohmann::json& doc() const { return doc_; }

  RouterConfig router() const;
  PacerConfig pacer() const;
  /// n_eff: explicit when set, else derived from t_adapt at the router gamma.
  double n_eff() const;
  InitMode init() const;
  /// Builds the router/pacer/prior settings for a run over `source`.
  RunConfig run_config(const Source& source) const;
  /// Matrix file or synthetic portfolio named by the "source" section.
  Source source() const;

 private:
  nlohmann::json doc_;
};

}  // namespace bprouter
