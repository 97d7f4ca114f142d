#pragma once

// Checkpoint container: a manifest of named parameter blocks followed by
// raw little-endian data. Round-trips are bit-exact for fp32 stores.
//
//   magic "GHCP", version u16, dtype u8 (width in bytes), meta count u16,
//   param count u32;
//   meta entries:  key u16+bytes, value u32+bytes;
//   param entries: name u16+bytes, trainable u8, rank u8, dims i32[rank],
//                  byte offset u64 (into the data section);
//   data section:  contiguous value blocks.

#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "gridhack/common/serde.hpp"
#include "gridhack/nn/tensor.hpp"

namespace gridhack::nn {

inline constexpr char kCkptMagic[4] = {'G', 'H', 'C', 'P'};
inline constexpr std::uint16_t kCkptVersion = 1;

template <typename S>
void save_checkpoint(const std::string& path, const ParamStore<S>& params,
                     const std::map<std::string, std::string>& metadata = {}) {
    std::vector<std::uint8_t> head;
    for (char m : kCkptMagic) head.push_back(static_cast<std::uint8_t>(m));
    put_u16(head, kCkptVersion);
    head.push_back(static_cast<std::uint8_t>(sizeof(S)));
    put_u16(head, static_cast<std::uint16_t>(metadata.size()));
    put_u32(head, static_cast<std::uint32_t>(params.all().size()));
    for (const auto& [key, value] : metadata) {
        put_u16(head, static_cast<std::uint16_t>(key.size()));
        head.insert(head.end(), key.begin(), key.end());
        put_u32(head, static_cast<std::uint32_t>(value.size()));
        head.insert(head.end(), value.begin(), value.end());
    }
    std::uint64_t offset = 0;
    for (const auto& p : params.all()) {
        put_u16(head, static_cast<std::uint16_t>(p->name.size()));
        head.insert(head.end(), p->name.begin(), p->name.end());
        head.push_back(p->trainable ? 1 : 0);
        head.push_back(static_cast<std::uint8_t>(p->shape.size()));
        for (int d : p->shape) put_u32(head, static_cast<std::uint32_t>(d));
        put_u64(head, offset);
        offset += static_cast<std::uint64_t>(p->size()) * sizeof(S);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));
    for (const auto& p : params.all()) {
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->size() * sizeof(S)));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

template <typename S>
struct Checkpoint {
    std::map<std::string, std::string> metadata;
    std::vector<std::string> names;
    std::map<std::string, std::pair<Shape, ArrayX<S>>> entries;
};

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (pos + n > bytes.size()) throw std::runtime_error("load_checkpoint: truncated " + path);
    };
    need(13);
    if (std::memcmp(bytes.data(), kCkptMagic, 4) != 0) {
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    }
    pos = 4;
    const std::uint16_t version = get_u16(bytes.data() + pos);
    pos += 2;
    if (version != kCkptVersion) throw std::runtime_error("load_checkpoint: unsupported version");
    const std::uint8_t width = bytes[pos++];
    if (width != sizeof(S)) {
        throw std::runtime_error("load_checkpoint: dtype width " + std::to_string(width) +
                                 " does not match requested scalar");
    }
    const std::uint16_t n_meta = get_u16(bytes.data() + pos);
    pos += 2;
    const std::uint32_t n_params = get_u32(bytes.data() + pos);
    pos += 4;
    Checkpoint<S> ckpt;
    for (int i = 0; i < n_meta; ++i) {
        need(2);
        const std::uint16_t klen = get_u16(bytes.data() + pos);
        pos += 2;
        need(klen + 4);
        std::string key(reinterpret_cast<const char*>(bytes.data() + pos), klen);
        pos += klen;
        const std::uint32_t vlen = get_u32(bytes.data() + pos);
        pos += 4;
        need(vlen);
        ckpt.metadata[key] =
            std::string(reinterpret_cast<const char*>(bytes.data() + pos), vlen);
        pos += vlen;
    }
    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Entry> manifest;
    for (std::uint32_t i = 0; i < n_params; ++i) {
        need(2);
        const std::uint16_t nlen = get_u16(bytes.data() + pos);
        pos += 2;
        need(nlen + 2);
        Entry e;
        e.name = std::string(reinterpret_cast<const char*>(bytes.data() + pos), nlen);
        pos += nlen;
        pos += 1;  // trainable flag: informational, the arch decides
        const std::uint8_t rank = bytes[pos++];
        need(static_cast<std::size_t>(rank) * 4 + 8);
        for (int d = 0; d < rank; ++d) {
            e.shape.push_back(static_cast<int>(get_u32(bytes.data() + pos)));
            pos += 4;
        }
        e.offset = get_u64(bytes.data() + pos);
        pos += 8;
        manifest.push_back(std::move(e));
    }
    const std::size_t data_start = pos;
    for (auto& e : manifest) {
        const std::int64_t n = numel(e.shape);
        const std::size_t at = data_start + e.offset;
        if (at + n * sizeof(S) > bytes.size()) {
            throw std::runtime_error("load_checkpoint: data block out of range for " + e.name);
        }
        ArrayX<S> value(n);
        std::memcpy(value.data(), bytes.data() + at, n * sizeof(S));
        ckpt.names.push_back(e.name);
        ckpt.entries[e.name] = {e.shape, std::move(value)};
    }
    return ckpt;
}

// Loads matching names into the store. strict=true demands an exact
// one-to-one match and throws listing every mismatch.
template <typename S>
void load_into(const Checkpoint<S>& ckpt, ParamStore<S>& params, bool strict = true) {
    std::string missing, extra, shape_diff;
    for (auto& p : params.all()) {
        auto it = ckpt.entries.find(p->name);
        if (it == ckpt.entries.end()) {
            missing += (missing.empty() ? "" : ", ") + p->name;
            continue;
        }
        if (it->second.first != p->shape) {
            shape_diff += (shape_diff.empty() ? "" : ", ") + p->name + " (want " +
                          shape_str(p->shape) + ", have " + shape_str(it->second.first) + ")";
            continue;
        }
        p->value = it->second.second;
    }
    for (const auto& name : ckpt.names) {
        if (!params.find(name)) extra += (extra.empty() ? "" : ", ") + name;
    }
    if (strict && (!missing.empty() || !extra.empty() || !shape_diff.empty())) {
        std::string msg = "checkpoint/arch mismatch";
        if (!missing.empty()) msg += "; absent from checkpoint: " + missing;
        if (!extra.empty()) msg += "; unused checkpoint blocks: " + extra;
        if (!shape_diff.empty()) msg += "; shape conflicts: " + shape_diff;
        throw std::runtime_error(msg);
    }
}

}  // namespace gridhack::nn
