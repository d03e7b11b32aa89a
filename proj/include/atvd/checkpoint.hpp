#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "atvd/common.hpp"

namespace atvd {

// Checkpoint layout, little-endian throughout:
//   magic "ATVD" | version u32 | tensor count u32
//   per tensor: name length u16, name bytes, ndim u8, dims u32 each,
//               payload f32 row-major
//   trailer: global step u64, rng state length u32, rng state bytes
inline constexpr uint32_t kCheckpointVersion = 1;

struct bad_magic_error : std::runtime_error {
    explicit bad_magic_error(const std::string& m) : std::runtime_error(m) {}
};
struct version_mismatch_error : std::runtime_error {
    explicit version_mismatch_error(const std::string& m) : std::runtime_error(m) {}
};
struct truncated_checkpoint_error : std::runtime_error {
    explicit truncated_checkpoint_error(const std::string& m) : std::runtime_error(m) {}
};

struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct CheckpointData {
    std::vector<CheckpointTensor> tensors; // order is part of the byte format
    uint64_t step = 0;
    std::vector<uint8_t> rng_state;

    const CheckpointTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

namespace detail_ckpt {

template <typename V>
void put(std::string& buf, V v) {
    char tmp[sizeof(V)];
    std::memcpy(tmp, &v, sizeof(V));
    buf.append(tmp, sizeof(V)); // little-endian host assumed
}

template <typename V>
V take(const std::string& buf, size_t& off, const char* what) {
    if (off + sizeof(V) > buf.size())
        throw truncated_checkpoint_error(cat("checkpoint: truncated while reading ", what));
    V v;
    std::memcpy(&v, buf.data() + off, sizeof(V));
    off += sizeof(V);
    return v;
}

} // namespace detail_ckpt

inline std::string serialize_checkpoint(const CheckpointData& ckpt) {
    using detail_ckpt::put;
    std::string buf;
    buf.append("ATVD", 4);
    put<uint32_t>(buf, kCheckpointVersion);
    put<uint32_t>(buf, static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        require(shape_numel(t.shape) == t.data.size(),
                cat("checkpoint: tensor '", t.name, "' shape ", shape_str(t.shape), " vs ",
                    t.data.size(), " values"));
        put<uint16_t>(buf, static_cast<uint16_t>(t.name.size()));
        buf.append(t.name);
        put<uint8_t>(buf, static_cast<uint8_t>(t.shape.size()));
        for (int d : t.shape) put<uint32_t>(buf, static_cast<uint32_t>(d));
        size_t bytes = t.data.size() * sizeof(float);
        size_t at = buf.size();
        buf.resize(at + bytes);
        std::memcpy(buf.data() + at, t.data.data(), bytes);
    }
    put<uint64_t>(buf, ckpt.step);
    put<uint32_t>(buf, static_cast<uint32_t>(ckpt.rng_state.size()));
    buf.append(reinterpret_cast<const char*>(ckpt.rng_state.data()), ckpt.rng_state.size());
    return buf;
}

inline CheckpointData deserialize_checkpoint(const std::string& buf) {
    using detail_ckpt::take;
    if (buf.size() < 4 || buf.compare(0, 4, "ATVD") != 0)
        throw bad_magic_error("checkpoint: bad magic, not an ATVD checkpoint");
    size_t off = 4;
    uint32_t version = take<uint32_t>(buf, off, "version");
    if (version != kCheckpointVersion)
        throw version_mismatch_error(
            cat("checkpoint: format version ", version, ", expected ", kCheckpointVersion));
    uint32_t count = take<uint32_t>(buf, off, "tensor count");

    CheckpointData ckpt;
    ckpt.tensors.resize(count);
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointTensor& t = ckpt.tensors[i];
        uint16_t name_len = take<uint16_t>(buf, off, "tensor name length");
        if (off + name_len > buf.size())
            throw truncated_checkpoint_error("checkpoint: truncated tensor name");
        t.name.assign(buf, off, name_len);
        off += name_len;
        uint8_t ndim = take<uint8_t>(buf, off, "tensor rank");
        t.shape.resize(ndim);
        for (uint8_t d = 0; d < ndim; ++d)
            t.shape[d] = static_cast<int>(take<uint32_t>(buf, off, "tensor dim"));
        size_t n = shape_numel(t.shape);
        if (off + n * sizeof(float) > buf.size())
            throw truncated_checkpoint_error(cat("checkpoint: truncated payload of '", t.name, "'"));
        t.data.resize(n);
        std::memcpy(t.data.data(), buf.data() + off, n * sizeof(float));
        off += n * sizeof(float);
    }
    ckpt.step = take<uint64_t>(buf, off, "global step");
    uint32_t rng_len = take<uint32_t>(buf, off, "rng state length");
    if (off + rng_len > buf.size())
        throw truncated_checkpoint_error("checkpoint: truncated rng state");
    ckpt.rng_state.assign(buf.begin() + static_cast<long>(off),
                          buf.begin() + static_cast<long>(off + rng_len));
    return ckpt;
}

inline void save_checkpoint(const std::string& path, const CheckpointData& ckpt) {
    std::string buf = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(cat("checkpoint: cannot open ", path, " for writing"));
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error(cat("checkpoint: write failed for ", path));
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(cat("checkpoint: cannot open ", path));
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(buf);
}

} // namespace atvd
