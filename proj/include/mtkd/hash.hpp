#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "mtkd/error.hpp"

namespace mtkd {

// SHA-1, used for run manifests (config hash, git-style blob hashes of
// input files). Content addressing only, no security claims.
class Sha1 {
public:
    Sha1() { reset(); }

    void reset() {
        h_ = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
        len_ = 0;
        buf_fill_ = 0;
    }

    void update(const void* data, size_t n) {
        const uint8_t* p = static_cast<const uint8_t*>(data);
        len_ += n;
        while (n > 0) {
            size_t take = std::min(n, size_t(64) - buf_fill_);
            std::memcpy(buf_.data() + buf_fill_, p, take);
            buf_fill_ += take;
            p += take;
            n -= take;
            if (buf_fill_ == 64) {
                process_block(buf_.data());
                buf_fill_ = 0;
            }
        }
    }

    void update(std::string_view s) { update(s.data(), s.size()); }

    std::string hex_digest() {
        uint64_t bit_len = len_ * 8;
        uint8_t pad = 0x80;
        update(&pad, 1);
        uint8_t zero = 0;
        while (buf_fill_ != 56) update(&zero, 1);
        uint8_t lenbytes[8];
        for (int i = 0; i < 8; ++i) lenbytes[i] = static_cast<uint8_t>(bit_len >> (56 - 8 * i));
        // bypass len_ bookkeeping for the trailer
        std::memcpy(buf_.data() + buf_fill_, lenbytes, 8);
        process_block(buf_.data());

        static const char* hexd = "0123456789abcdef";
        std::string out;
        out.reserve(40);
        for (uint32_t w : h_) {
            for (int i = 28; i >= 0; i -= 4) out.push_back(hexd[(w >> i) & 0xF]);
        }
        return out;
    }

private:
    static uint32_t rol(uint32_t x, int s) { return (x << s) | (x >> (32 - s)); }

    void process_block(const uint8_t* p) {
        uint32_t w[80];
        for (int i = 0; i < 16; ++i) {
            w[i] = (uint32_t(p[4 * i]) << 24) | (uint32_t(p[4 * i + 1]) << 16) |
                   (uint32_t(p[4 * i + 2]) << 8) | uint32_t(p[4 * i + 3]);
        }
        for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);

        uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
        for (int i = 0; i < 80; ++i) {
            uint32_t f, k;
            if (i < 20) {
                f = (b & c) | (~b & d);
                k = 0x5A827999u;
            } else if (i < 40) {
                f = b ^ c ^ d;
                k = 0x6ED9EBA1u;
            } else if (i < 60) {
                f = (b & c) | (b & d) | (c & d);
                k = 0x8F1BBCDCu;
            } else {
                f = b ^ c ^ d;
                k = 0xCA62C1D6u;
            }
            uint32_t t = rol(a, 5) + f + e + k + w[i];
            e = d;
            d = c;
            c = rol(b, 30);
            b = a;
            a = t;
        }
        h_[0] += a;
        h_[1] += b;
        h_[2] += c;
        h_[3] += d;
        h_[4] += e;
    }

    std::array<uint32_t, 5> h_{};
    std::array<uint8_t, 64> buf_{};
    uint64_t len_ = 0;
    size_t buf_fill_ = 0;
};

inline std::string sha1_hex(std::string_view content) {
    Sha1 h;
    h.update(content);
    return h.hex_digest();
}

// Same hash git assigns a file: sha1("blob <size>\0<content>").
inline std::string git_blob_hash(std::string_view content) {
    Sha1 h;
    h.update("blob ");
    h.update(std::to_string(content.size()));
    char nul = '\0';
    h.update(&nul, 1);
    h.update(content);
    return h.hex_digest();
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io", "cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string git_blob_hash_file(const std::string& path) {
    return git_blob_hash(read_file_bytes(path));
}

} // namespace mtkd
