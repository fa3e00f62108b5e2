#pragma once

// Shared JSON readers for the line-delimited formats; internal to the library.

#include "json.hpp"
#include "relrefine/core.hpp"

namespace relrefine::detail {

Box3D read_box(const nlohmann::json& j);
Detection read_detection(const nlohmann::json& j);

}  // namespace relrefine::detail
