#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dakit/pipeline.hpp"

namespace da::config {

// Parses the versioned JSON config schema (docs/formats.md). Unknown fields
// are errors.
pipeline::ExperimentConfig parse_config_text(const std::string& text,
                                             const std::string& source_name);

// Accepts either a preset name or a path to a JSON file. An optional seed
// override replaces the config seed before validation and hashing.
pipeline::ExperimentConfig load_config(
    const std::string& path_or_preset,
    std::optional<std::uint64_t> seed_override = std::nullopt);

std::vector<std::string> preset_names();
bool is_preset(const std::string& name);
std::string preset_text(const std::string& name);

// Normalized snapshot of the parsed config; identical configs always produce
// identical JSON regardless of input formatting.
nlohmann::json config_to_json(const pipeline::ExperimentConfig& config);

// sha256 of the compact normalized snapshot.
std::string config_hash(const pipeline::ExperimentConfig& config);

}  // namespace da::config
