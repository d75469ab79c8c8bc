#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "malfuse/pipeline.hpp"

namespace malfuse {

/// `key = value` lines grouped under `[section]` headers; `#` starts a
/// comment. Keys outside any section belong to `general`. Full keys are
/// written `section.key` (e.g. `cnn.epochs`); general keys may drop the
/// prefix. Unknown keys and bad values raise ConfigError naming the key
/// and line.
ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>");

/// Defaults, then MALFUSE_DATA_ROOT, then the file (if non-empty path), then
/// `overrides` (full key -> value). Validates the result.
ExperimentConfig load_config(const std::filesystem::path& path, const std::map<std::string, std::string>& overrides = {});

void apply_override(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Throws ConfigError on out-of-range values or a missing data root.
void validate_config(const ExperimentConfig& config);

/// Canonical text form: every key, fixed order, parseable by parse_config.
std::string format_config(const ExperimentConfig& config);

/// Every full key in canonical order.
std::vector<std::string> config_keys();

/// 16 hex digits over the canonical text, ignoring keys that do not affect
/// results (output root, worker count).
std::string config_fingerprint(const ExperimentConfig& config);

}  // namespace malfuse
