#pragma once

#include <cstdio>
#include <string>

namespace m2r2 {

/// Six significant digits, '.' decimal point (the C locale is never changed).
inline std::string format_g6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace m2r2
