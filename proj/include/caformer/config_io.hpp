#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "caformer/pipeline.hpp"

namespace caformer {

nlohmann::ordered_json config_to_json(const TrackerConfig& cfg);

/// Missing keys keep their desk defaults. Unknown keys, wrong types and
/// invalid values raise ConfigError naming the key.
TrackerConfig config_from_json(const nlohmann::json& j);
TrackerConfig config_from_text(const std::string& text);
TrackerConfig load_config(const std::filesystem::path& path);

/// Writes one CATM file per tensor plus manifest.txt ("name RxC file" lines).
void save_params(const std::filesystem::path& dir, const TrackerParams& params);
/// Reads a directory written by save_params; every tensor expected by `cfg`
/// must be present with the expected shape.
TrackerParams load_params(const std::filesystem::path& dir, const TrackerConfig& cfg);

}  // namespace caformer
