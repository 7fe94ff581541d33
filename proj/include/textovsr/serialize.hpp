#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "textovsr/config.hpp"
#include "textovsr/nn.hpp"

namespace tovsr {

namespace serdetail {
inline void put_u32(std::ofstream& f, uint32_t v) { f.write((const char*)&v, 4); }
inline void put_u64(std::ofstream& f, uint64_t v) { f.write((const char*)&v, 8); }
inline uint32_t get_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read((char*)&v, 4);
    return v;
}
inline uint64_t get_u64(std::ifstream& f) {
    uint64_t v = 0;
    f.read((char*)&v, 8);
    return v;
}
}  // namespace serdetail

// ---- embedding sidecar ---------------------------------------------------------
// 16-byte header: magic "TOVE", u32 version, u32 d_text, u32 count; then
// count * d_text row-major float32.

inline void write_embeddings(const std::string& path, const std::vector<std::vector<float>>& rows,
                             int d_text) {
    using namespace serdetail;
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write("TOVE", 4);
    put_u32(f, 1u);
    put_u32(f, (uint32_t)d_text);
    put_u32(f, (uint32_t)rows.size());
    for (const auto& r : rows) {
        if ((int)r.size() != d_text) throw ShapeError("embedding row width mismatch");
        f.write((const char*)r.data(), (std::streamsize)(sizeof(float) * r.size()));
    }
    if (!f) throw IoError("short write: " + path);
}

inline std::vector<std::vector<float>> read_embeddings(const std::string& path, int* d_text_out) {
    using namespace serdetail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    char magic[4];
    f.read(magic, 4);
    if (std::memcmp(magic, "TOVE", 4) != 0) throw IoError("bad embedding magic in " + path);
    uint32_t version = get_u32(f);
    if (version != 1) throw IoError("unsupported embedding version in " + path);
    uint32_t d = get_u32(f), count = get_u32(f);
    std::vector<std::vector<float>> rows(count, std::vector<float>(d));
    for (auto& r : rows) f.read((char*)r.data(), (std::streamsize)(sizeof(float) * d));
    if (!f) throw IoError("truncated embedding file " + path);
    if (d_text_out) *d_text_out = (int)d;
    return rows;
}

// ---- precomputed flow files ------------------------------------------------------
// "TOVF", u32 version, u32 h, u32 w, then u-plane and v-plane float32.

inline void write_flow_file(const std::string& path, const Tensorf& flow) {
    using namespace serdetail;
    if (flow.rank() != 3 || flow.size(0) != 2) throw ShapeError("flow must be (2,h,w)");
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write("TOVF", 4);
    put_u32(f, 1u);
    put_u32(f, (uint32_t)flow.size(1));
    put_u32(f, (uint32_t)flow.size(2));
    f.write((const char*)flow.data(), (std::streamsize)(sizeof(float) * flow.numel()));
    if (!f) throw IoError("short write: " + path);
}

inline Tensorf read_flow_file(const std::string& path) {
    using namespace serdetail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("missing flow file: " + path);
    char magic[4];
    f.read(magic, 4);
    if (std::memcmp(magic, "TOVF", 4) != 0) throw IoError("bad flow magic in " + path);
    if (get_u32(f) != 1) throw IoError("unsupported flow version in " + path);
    uint32_t h = get_u32(f), w = get_u32(f);
    Tensorf flow({2, (int)h, (int)w});
    f.read((char*)flow.data(), (std::streamsize)(sizeof(float) * flow.numel()));
    if (!f) throw IoError("truncated flow file " + path);
    return flow;
}

// ---- checkpoint archive -----------------------------------------------------------
// Single file: magic "TOVSRCKP", u32 format version, u64 json length, json
// meta (stage, iteration, config snapshot, lineage), u32 tensor count, then
// per tensor: name, trainable flag, dims, float32 payload.

struct Checkpoint {
    json meta;
    struct Item {
        std::string name;
        Tensorf tensor;
        bool trainable = true;
    };
    std::vector<Item> tensors;

    const Item* find(const std::string& name) const {
        for (const auto& it : tensors)
            if (it.name == name) return &it;
        return nullptr;
    }
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    using namespace serdetail;
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write("TOVSRCKP", 8);
    put_u32(f, 1u);
    std::string meta = ckpt.meta.dump();
    put_u64(f, meta.size());
    f.write(meta.data(), (std::streamsize)meta.size());
    put_u32(f, (uint32_t)ckpt.tensors.size());
    for (const auto& it : ckpt.tensors) {
        put_u32(f, (uint32_t)it.name.size());
        f.write(it.name.data(), (std::streamsize)it.name.size());
        f.put(it.trainable ? 1 : 0);
        put_u32(f, (uint32_t)it.tensor.rank());
        for (int i = 0; i < it.tensor.rank(); ++i) put_u32(f, (uint32_t)it.tensor.size(i));
        f.write((const char*)it.tensor.data(),
                (std::streamsize)(sizeof(float) * it.tensor.numel()));
    }
    if (!f) throw IoError("short checkpoint write: " + path);
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
    using namespace serdetail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("missing checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (std::memcmp(magic, "TOVSRCKP", 8) != 0) throw IoError("bad checkpoint magic: " + path);
    uint32_t version = get_u32(f);
    if (version != 1) throw IoError("unsupported checkpoint version in " + path);
    uint64_t mlen = get_u64(f);
    std::string meta(mlen, '\0');
    f.read(meta.data(), (std::streamsize)mlen);
    Checkpoint ckpt;
    ckpt.meta = json::parse(meta);
    uint32_t count = get_u32(f);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t nlen = get_u32(f);
        std::string name(nlen, '\0');
        f.read(name.data(), nlen);
        bool trainable = f.get() != 0;
        uint32_t rank = get_u32(f);
        std::vector<int> dims;
        for (uint32_t d = 0; d < rank; ++d) dims.push_back((int)get_u32(f));
        Tensorf t(dims);
        f.read((char*)t.data(), (std::streamsize)(sizeof(float) * t.numel()));
        ckpt.tensors.push_back({std::move(name), std::move(t), trainable});
    }
    if (!f) throw IoError("truncated checkpoint " + path);
    return ckpt;
}

inline Checkpoint checkpoint_from_store(const ParamStore<float>& store, json meta,
                                        const std::string& prefix = "") {
    Checkpoint ckpt;
    ckpt.meta = std::move(meta);
    for (const auto& e : store.entries())
        if (e.name.rfind(prefix, 0) == 0)
            ckpt.tensors.push_back({e.name, e.var.value(), e.trainable});
    return ckpt;
}

// Copies matching tensors into existing parameters. With strict=true every
// store entry under `prefix` must be present in the checkpoint.
inline void load_into_store(ParamStore<float>& store, const Checkpoint& ckpt,
                            const std::string& prefix = "", bool strict = true) {
    for (auto& e : store.entries()) {
        if (e.name.rfind(prefix, 0) != 0) continue;
        const Checkpoint::Item* it = ckpt.find(e.name);
        if (!it) {
            if (strict) throw IoError("checkpoint missing tensor " + e.name);
            continue;
        }
        if (!(it->tensor.dims() == e.var.value().dims()))
            throw ShapeError("checkpoint tensor " + e.name + " has shape " +
                             shape_str(it->tensor) + ", expected " + shape_str(e.var.value()));
        e.var.value() = it->tensor;
    }
}

}  // namespace tovsr
