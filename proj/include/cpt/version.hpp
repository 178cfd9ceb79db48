#pragma once

namespace cpt {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cpt
