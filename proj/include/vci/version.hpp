#pragma once

namespace vci {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kCheckpointFormatVersion = 1;

}  // namespace vci
