#pragma once

// Run configuration shared by the command-line tools: `key = value` lines,
// `#` comments, later keys override earlier ones, unknown keys rejected.

#include <filesystem>
#include <string>
#include <vector>

#include "metsk/meta.hpp"
#include "metsk/probe.hpp"

namespace metsk {

struct RunConfig {
  MetaConfig meta;
  Strategy strategy = Strategy::metsk;
  std::filesystem::path source;
  std::filesystem::path target;
  ProbeSpec probe;
  std::size_t folds = 5;
  std::size_t repeats = 100;
  std::size_t bins = 32;
  double gamma = 0.01;

  void validate() const;
};

/// Applies one setting; throws ValidationError prefixed with `where`.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value, const std::string& where);

RunConfig parse_config(const std::filesystem::path& path);
// Same, starting from an existing configuration.
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

// Every key apply_setting understands, for help text and tests.
const std::vector<std::string>& config_keys();

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& where);
std::vector<std::uint64_t> parse_seed_list(const std::string& text, const std::string& where);

}  // namespace metsk
