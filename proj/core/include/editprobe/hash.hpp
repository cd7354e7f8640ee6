#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace editprobe {

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(std::string_view data);

/// Lowercase hex of the SHA-256 digest of `data`.
std::string sha256_hex(std::string_view data);

}  // namespace editprobe
