#pragma once

namespace timebin {

inline constexpr const char* kToolName = "timebin";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace timebin
