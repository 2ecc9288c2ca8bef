#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace da {

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& text);

// Hash of a double array via its raw little-endian bytes.
std::string sha256_hex(std::span<const double> values);

}  // namespace da
