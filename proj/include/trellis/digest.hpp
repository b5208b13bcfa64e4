#pragma once

#include "trellis/rng.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace trellis {

// 16-hex-digit content fingerprint (FNV-1a 64). Not cryptographic; used for
// manifest digests, trace content hashes and deterministic tie-breaking.
inline std::string digest_hex(std::string_view data) {
    std::uint64_t h = rng::fnv1a64(data);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
        h >>= 4;
    }
    return out;
}

} // namespace trellis
