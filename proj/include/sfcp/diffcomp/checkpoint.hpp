#pragma once

#include <filesystem>

#include "json.hpp"
#include "sfcp/diffcomp/layers.hpp"

namespace sfcp::dc {

inline constexpr const char* kCheckpointFormat = "sfcp-params";
inline constexpr int kCheckpointVersion = 1;

/// {"format", "version", "params": {name: {"shape": [r, c], "values": [...]}}}
/// with row-major values. `extra` is stored verbatim under "extra".
nlohmann::json params_to_json(const ParamList& ps, const nlohmann::json& extra = nlohmann::json::object());
/// Loads values by name; every listed param must be present with its shape.
/// Returns the "extra" object.
nlohmann::json params_from_json(const nlohmann::json& doc, const ParamList& ps);

void save_checkpoint(const std::filesystem::path& path, const ParamList& ps,
                     const nlohmann::json& extra = nlohmann::json::object());
nlohmann::json load_checkpoint(const std::filesystem::path& path, const ParamList& ps);

nlohmann::json mat_to_json(const Mat& m);
Mat mat_from_json(const nlohmann::json& j);

}  // namespace sfcp::dc
