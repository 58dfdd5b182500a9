#include "dermgen/hashing.hpp"

#include "dermgen/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <fstream>

namespace dermgen {

static std::string to_hex(const unsigned char* digest, unsigned len) {
    static const char* hexdig = "0123456789abcdef";
    std::string out(len * 2, '0');
    for (unsigned i = 0; i < len; ++i) {
        out[2 * i] = hexdig[digest[i] >> 4];
        out[2 * i + 1] = hexdig[digest[i] & 0xf];
    }
    return out;
}

std::string sha256_hex(const void* data, size_t n) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    if (EVP_Digest(data, n, digest, &len, EVP_sha256(), nullptr) != 1)
        raise(Errc::io_error, "sha256 digest failed");
    return to_hex(digest, len);
}

std::string sha256_hex(const std::vector<unsigned char>& bytes) {
    return sha256_hex(bytes.data(), bytes.size());
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(Errc::io_error, "cannot open file for hashing: " + path);

    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) raise(Errc::io_error, "sha256 context allocation failed");
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);

    std::array<char, 65536> buf;
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        std::streamsize got = in.gcount();
        if (got > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<size_t>(got));
    }
    if (in.bad()) {
        EVP_MD_CTX_free(ctx);
        raise(Errc::io_error, "read failed while hashing: " + path);
    }

    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    return to_hex(digest, len);
}

} // namespace dermgen
