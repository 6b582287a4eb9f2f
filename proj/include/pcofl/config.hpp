#pragma once

// Flat dotted-key experiment configuration: text parsing, environment
// overrides, and a canonical sorted rendering that round-trips exactly.
//
// Precedence: built-in defaults < config file < PCOFL_* environment
// variables < explicit command-line overrides.

#include <string>
#include <vector>

#include "pcofl/federation.hpp"

namespace pcofl {

// All recognized keys, sorted. Every key maps to one ExperimentConfig
// field; integer lists (schedule.*) are comma-separated.
const std::vector<std::string>& config_keys();

// Throws ConfigError on unknown keys or malformed values.
void set_config_value(ExperimentConfig& cfg, const std::string& key,
                      const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg,
                             const std::string& key);

// Lines of "key = value". '#' starts a comment; blank lines are ignored.
// Unknown keys and parse failures raise ConfigError with the line number.
ExperimentConfig parse_config_text(const std::string& text,
                                   ExperimentConfig base = {});
ExperimentConfig load_config_file(const std::string& path,
                                  ExperimentConfig base = {});

// "mask.lambda" -> "PCOFL_MASK_LAMBDA"
std::string env_var_name(const std::string& key);

// Applies every set PCOFL_* variable whose name matches a known key.
void apply_env_overrides(ExperimentConfig& cfg);

// Full sorted "key = value" dump; parsing it back reproduces cfg exactly.
std::string canonical_config_text(const ExperimentConfig& cfg);

}  // namespace pcofl
