#pragma once

// JSON conversions shared by the checkpoint and config readers.

#include "tamos/network.hpp"

#include <json.hpp>

namespace tamos::detail {

nlohmann::json to_json(const NetworkConfig& config);
/// Keys absent from `j` keep their value from `base`; unknown keys throw.
NetworkConfig network_config_from_json(const nlohmann::json& j, const NetworkConfig& base = {});

}  // namespace tamos::detail
