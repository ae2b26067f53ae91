#pragma once

// JSON forms of the configuration structs, shared by checkpoints and the
// manifest.

#include "biasdiff/networks.hpp"
#include "json.hpp"

namespace biasdiff::detail {

nlohmann::json config_to_json(const NetworkConfig& c);
NetworkConfig config_from_json(const nlohmann::json& j);

}  // namespace biasdiff::detail
