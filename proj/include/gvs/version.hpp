#pragma once

namespace gvs {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kToolName = "gvs";

}  // namespace gvs
