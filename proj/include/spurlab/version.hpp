#pragma once

namespace spurlab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace spurlab
