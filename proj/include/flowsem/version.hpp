#pragma once

#include <string_view>

namespace flowsem {

#ifdef FLOWSEM_VERSION
inline constexpr std::string_view kVersion = FLOWSEM_VERSION;
#else
inline constexpr std::string_view kVersion = "0.3.0";
#endif

}  // namespace flowsem
