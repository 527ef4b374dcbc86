#pragma once

namespace ddsi {
inline constexpr const char* kVersion = "0.1.0";
}
