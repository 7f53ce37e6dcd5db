#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "imnd/imu_model.hpp"
#include "imnd/meta_trainer.hpp"

namespace imnd {

/// Thrown for malformed or contradictory configuration; the CLI maps it to
/// exit code 2 (runtime failures stay at 1).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Marks a domain whose simulation seed should be derived from the global
/// seed and the domain name (see domain_seed).
inline constexpr std::uint64_t kDeriveDomainSeed = ~0ull;

/// Resolved view of one plain-text `key = value` config file. Unknown keys
/// are rejected so a typo cannot silently fall back to a default.
struct RunConfig {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = leave the runtime default alone

  TrainConfig train;  // carries mode, model and loss sub-configs

  std::vector<std::string> train_names;  // empty -> dataset defaults
  std::vector<std::string> test_names;

  std::vector<DomainSpec> domains;        // order of first appearance
  std::vector<std::uint64_t> domain_seeds;  // parallel to `domains`

  void validate() const;
};

/// Seed actually used to simulate domain i (explicit or derived).
std::uint64_t domain_seed(const RunConfig& cfg, std::size_t i);

RunConfig parse_run_config(const std::filesystem::path& file);
RunConfig parse_run_config_text(const std::string& text,
                                const std::string& origin = "<config>");

/// Single `key = value` assignment with the same schema as the file; used for
/// CLI overrides. Unknown keys throw ConfigError.
void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& origin = "<override>");

/// Deterministic round-trippable rendering of the resolved config (the
/// `--dry-run` output).
std::string render_run_config(const RunConfig& cfg);

}  // namespace imnd
