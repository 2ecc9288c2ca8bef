#pragma once

namespace da {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace da
