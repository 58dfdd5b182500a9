#pragma once

namespace dermgen {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kToolId = "dermgen 0.1.0";

} // namespace dermgen
