#pragma once

#include <cstdint>
#include <string>

namespace fade {

// Hex-encoded SHA-256. Used for weight-file integrity and cache keys.
std::string sha256_hex(const void* data, size_t size);
std::string sha256_hex(const std::string& s);

}  // namespace fade
