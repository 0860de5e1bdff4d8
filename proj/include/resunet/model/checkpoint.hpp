#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "resunet/model/graph.hpp"
#include "resunet/model/param_store.hpp"
#include "resunet/model/resunet.hpp"

namespace resunet {

// Checkpoint byte layout (all integers and floats little-endian):
//
//   magic           8 bytes  "RESUNET\0"
//   schema_version  u32
//   meta_count      u32
//   meta_count x    { u32 key_len, key bytes, f64 value }
//   tensor_count    u32
//   tensor_count x  { u32 name_len, name bytes, u8 kind, u32 n, u32 c, u32 h, u32 w,
//                     f32 values[n*c*h*w] }

inline constexpr std::array<char, 8> kCheckpointMagic{'R', 'E', 'S', 'U', 'N', 'E', 'T', '\0'};

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { io, bad_magic, unsupported_version, truncated, malformed, graph_mismatch };

    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.append(s);
    }
    void raw(std::string_view s) { bytes_.append(s); }
    const std::string& bytes() const noexcept { return bytes_; }

private:
    std::string bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    std::uint8_t u8() {
        need(1, "byte");
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8, "u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t len = u32();
        need(len, "string");
        std::string s(bytes_.substr(pos_, len));
        pos_ += len;
        return s;
    }
    std::string_view raw(std::size_t len) {
        need(len, "header");
        auto s = bytes_.substr(pos_, len);
        pos_ += len;
        return s;
    }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  std::string("checkpoint truncated while reading ") + what +
                                      " at byte " + std::to_string(pos_));
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Serializes a store to the checkpoint byte layout.
inline std::string encode_checkpoint(const ParamStore& store) {
    detail::ByteWriter w;
    w.raw(std::string_view(kCheckpointMagic.data(), kCheckpointMagic.size()));
    w.u32(kSchemaVersion);
    w.u32(static_cast<std::uint32_t>(store.metadata().size()));
    for (const auto& [key, value] : store.metadata()) {
        w.str(key);
        w.f64(value);
    }
    w.u32(static_cast<std::uint32_t>(store.size()));
    for (const auto& e : store.entries()) {
        w.str(e.name);
        w.u8(static_cast<std::uint8_t>(e.kind));
        const Shape& s = e.tensor.shape();
        for (std::size_t d : {s.n, s.c, s.h, s.w}) w.u32(static_cast<std::uint32_t>(d));
        for (float v : e.tensor.data()) w.f32(v);
    }
    return w.bytes();
}

/// Parses checkpoint bytes. Throws CheckpointError; never returns a partial
/// store.
inline ParamStore decode_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes);
    if (bytes.size() < kCheckpointMagic.size() ||
        r.raw(kCheckpointMagic.size()) != std::string_view(kCheckpointMagic.data(), kCheckpointMagic.size())) {
        throw CheckpointError(CheckpointError::Kind::bad_magic, "not a ResUnet checkpoint (bad magic bytes)");
    }
    const std::uint32_t version = r.u32();
    if (version != kSchemaVersion) {
        throw CheckpointError(CheckpointError::Kind::unsupported_version,
                              "unsupported checkpoint schema version " + std::to_string(version));
    }
    ParamStore store;
    const std::uint32_t meta_count = r.u32();
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        std::string key = r.str();
        store.set_meta(key, r.f64());
    }
    const std::uint32_t tensor_count = r.u32();
    for (std::uint32_t i = 0; i < tensor_count; ++i) {
        std::string name = r.str();
        const std::uint8_t kind = r.u8();
        if (kind > 1) {
            throw CheckpointError(CheckpointError::Kind::malformed,
                                  "tensor '" + name + "' has unknown kind " + std::to_string(kind));
        }
        Shape s;
        s.n = r.u32();
        s.c = r.u32();
        s.h = r.u32();
        s.w = r.u32();
        if (s.numel() > r.remaining() / 4) {
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  "checkpoint truncated inside tensor '" + name + "' " + s.str());
        }
        std::vector<float> values(s.numel());
        for (float& v : values) v = r.f32();
        if (store.contains(name)) {
            throw CheckpointError(CheckpointError::Kind::malformed,
                                  "duplicate tensor '" + name + "' in checkpoint");
        }
        store.add(std::move(name), static_cast<ParamKind>(kind), Tensor<float>(s, std::move(values)));
    }
    if (!r.at_end()) {
        throw CheckpointError(CheckpointError::Kind::malformed,
                              "checkpoint has " + std::to_string(r.remaining()) + " unexpected trailing bytes");
    }
    return store;
}

inline void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
    const std::string bytes = encode_checkpoint(store);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError(CheckpointError::Kind::io, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline ParamStore load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

/// Loads a checkpoint and rejects it unless its tensors match `graph`.
inline ParamStore load_checkpoint(const std::filesystem::path& path, const ModelGraph& graph) {
    ParamStore store = load_checkpoint(path);
    try {
        check_compatible(graph, store);
    } catch (const InputError& e) {
        throw CheckpointError(CheckpointError::Kind::graph_mismatch,
                              "checkpoint does not match the model graph: " + std::string(e.what()));
    }
    return store;
}

/// Rebuilds the graph a checkpoint was trained with.
inline ModelGraph graph_for(const ParamStore& store) {
    return ModelGraph::build(store.meta("width_scale").value_or(1.0));
}

}  // namespace resunet
