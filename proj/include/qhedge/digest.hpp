#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>

namespace qhedge {

/// 64-bit FNV-1a of `text`, as 16 hex digits.
inline std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace qhedge
