#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dermgen {

/// SHA-256 of a byte buffer as lowercase hex.
std::string sha256_hex(const void* data, size_t n);
std::string sha256_hex(const std::vector<unsigned char>& bytes);
std::string sha256_hex(const std::string& s);

/// SHA-256 of a file's contents. Throws Error(Errc::io_error) if unreadable.
std::string sha256_file(const std::string& path);

} // namespace dermgen
