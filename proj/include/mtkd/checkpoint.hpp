#pragma once

// Shared checkpoint container: binary, little-endian. Layout:
//   magic "MKD1", u32 version, u32 array count, then per array
//   u16 name length, name bytes, u8 dtype (0 = f32), u8 rank,
//   rank x u64 dims, raw f32 data.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtkd/error.hpp"
#include "mtkd/tensor.hpp"

namespace mtkd {

constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointArray {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

namespace detail {

template <typename T>
void write_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
}

inline void write_f32(std::ostream& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_le<uint32_t>(out, bits);
}

inline float read_f32(std::istream& in) {
    uint32_t bits = read_le<uint32_t>(in);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

} // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<CheckpointArray>& arrays) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io", "cannot write checkpoint: " + path);
    out.write("MKD1", 4);
    detail::write_le<uint32_t>(out, kCheckpointVersion);
    detail::write_le<uint32_t>(out, static_cast<uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        if (a.name.size() > 0xFFFF) fail("io", "checkpoint array name too long");
        if (numel(a.shape) != a.data.size())
            fail("io", "checkpoint array '" + a.name + "': shape/data mismatch");
        detail::write_le<uint16_t>(out, static_cast<uint16_t>(a.name.size()));
        out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
        detail::write_le<uint8_t>(out, 0); // f32
        detail::write_le<uint8_t>(out, static_cast<uint8_t>(a.shape.size()));
        for (size_t d : a.shape) detail::write_le<uint64_t>(out, d);
        for (float f : a.data) detail::write_f32(out, f);
    }
    if (!out) fail("io", "short write: " + path);
}

inline std::vector<CheckpointArray> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io", "cannot read checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MKD1", 4) != 0)
        fail("io", "not an MKD1 checkpoint: " + path);
    uint32_t version = detail::read_le<uint32_t>(in);
    if (version != kCheckpointVersion)
        fail("io", "unsupported checkpoint version " + std::to_string(version));
    uint32_t count = detail::read_le<uint32_t>(in);
    std::vector<CheckpointArray> arrays;
    arrays.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointArray a;
        uint16_t name_len = detail::read_le<uint16_t>(in);
        a.name.resize(name_len);
        in.read(a.name.data(), name_len);
        uint8_t dtype = detail::read_le<uint8_t>(in);
        if (dtype != 0) fail("io", "unsupported dtype code " + std::to_string(dtype));
        uint8_t rank = detail::read_le<uint8_t>(in);
        a.shape.resize(rank);
        for (auto& d : a.shape) d = static_cast<size_t>(detail::read_le<uint64_t>(in));
        a.data.resize(numel(a.shape));
        for (auto& f : a.data) f = detail::read_f32(in);
        if (!in) fail("io", "truncated checkpoint: " + path);
        arrays.push_back(std::move(a));
    }
    return arrays;
}

template <typename S>
std::vector<CheckpointArray> params_to_arrays(std::span<const Tensor<S>> params) {
    std::vector<CheckpointArray> arrays;
    arrays.reserve(params.size());
    for (const auto& p : params) {
        CheckpointArray a;
        a.name = p.name();
        a.shape = p.shape();
        a.data.reserve(p.size());
        for (S v : p.data()) a.data.push_back(static_cast<float>(v));
        arrays.push_back(std::move(a));
    }
    return arrays;
}

// Strict by-name restore: every parameter must be present with its shape.
template <typename S>
void load_params(std::span<Tensor<S>> params, const std::vector<CheckpointArray>& arrays) {
    std::unordered_map<std::string, const CheckpointArray*> by_name;
    for (const auto& a : arrays)
        if (!by_name.emplace(a.name, &a).second)
            fail("io", "duplicate array in checkpoint: '" + a.name + "'");
    for (auto& p : params) {
        auto it = by_name.find(p.name());
        if (it == by_name.end()) fail("io", "checkpoint is missing array '" + p.name() + "'");
        const CheckpointArray& a = *it->second;
        if (a.shape != p.shape())
            fail("io", "checkpoint array '" + p.name() + "' has shape " + shape_str(a.shape) +
                           ", model expects " + shape_str(p.shape()));
        for (size_t i = 0; i < a.data.size(); ++i) p.data()[i] = static_cast<S>(a.data[i]);
    }
}

// Deep parameter snapshot/restore for model selection during fine-tuning.
template <typename S>
std::vector<std::vector<S>> snapshot_params(std::span<const Tensor<S>> params) {
    std::vector<std::vector<S>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.data());
    return out;
}

template <typename S>
void restore_params(std::span<Tensor<S>> params, const std::vector<std::vector<S>>& snap) {
    if (snap.size() != params.size()) fail("io", "snapshot size mismatch");
    for (size_t i = 0; i < snap.size(); ++i) {
        if (snap[i].size() != params[i].size()) fail("io", "snapshot tensor size mismatch");
        params[i].data() = snap[i];
    }
}

} // namespace mtkd
