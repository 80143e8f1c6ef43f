#pragma once

namespace neld {

inline constexpr const char* version_string = "neld 0.1.0";

}
