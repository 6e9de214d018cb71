#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace fcdd {

// FNV-1a 64-bit over raw bytes. Stable across platforms; used to fingerprint
// resolved configurations inside reports.
constexpr std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return std::string(buf);
}

}  // namespace fcdd
