#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace selora {

/// Plain SHA-256, returns the digest as lowercase hex.
std::string sha256_hex(const uint8_t* data, size_t len);
std::string sha256_hex(const std::string& s);

/// Digest of a list of double buffers in order (used to fingerprint
/// parameter state without serializing it).
std::string sha256_doubles(const std::vector<const double*>& bufs,
                           const std::vector<size_t>& lens);

}  // namespace selora
