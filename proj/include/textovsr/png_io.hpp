#pragma once

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "textovsr/tensor.hpp"

namespace tovsr {

// Minimal PNG codec: 8-bit gray/RGB/RGBA, non-interlaced. Enough for the
// frame directories this project reads and writes; anything else is rejected
// with a clear error.

namespace pngdetail {

inline void put_u32(std::vector<unsigned char>& v, uint32_t x) {
    v.push_back((unsigned char)(x >> 24));
    v.push_back((unsigned char)(x >> 16));
    v.push_back((unsigned char)(x >> 8));
    v.push_back((unsigned char)x);
}
inline uint32_t get_u32(const unsigned char* p) {
    return ((uint32_t)p[0] << 24) | ((uint32_t)p[1] << 16) | ((uint32_t)p[2] << 8) | p[3];
}

inline void append_chunk(std::vector<unsigned char>& out, const char type[4],
                         const std::vector<unsigned char>& data) {
    put_u32(out, (uint32_t)data.size());
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = (uint32_t)::crc32(0, out.data() + start, (uInt)(out.size() - start));
    put_u32(out, crc);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace pngdetail

// (c,h,w) float in [0,1] -> 8-bit RGB PNG bytes (c must be 1 or 3)
inline std::vector<unsigned char> encode_png(const Tensorf& img) {
    using namespace pngdetail;
    if (img.rank() != 3 || (img.size(0) != 1 && img.size(0) != 3))
        throw IoError("encode_png expects (1|3,h,w), got " + shape_str(img));
    const int c = img.size(0), h = img.size(1), w = img.size(2);

    std::vector<unsigned char> raw((size_t)h * (1 + (size_t)w * 3));
    size_t p = 0;
    for (int y = 0; y < h; ++y) {
        raw[p++] = 0;  // filter: none
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                float v = img.at(c == 1 ? 0 : ch, y, x);
                v = std::min(std::max(v, 0.0f), 1.0f);
                raw[p++] = (unsigned char)std::lround(v * 255.0f);
            }
    }
    uLongf zlen = ::compressBound((uLong)raw.size());
    std::vector<unsigned char> zdata(zlen);
    if (::compress2(zdata.data(), &zlen, raw.data(), (uLong)raw.size(), 6) != Z_OK)
        throw IoError("png deflate failed");
    zdata.resize(zlen);

    std::vector<unsigned char> out;
    const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);
    std::vector<unsigned char> ihdr;
    put_u32(ihdr, (uint32_t)w);
    put_u32(ihdr, (uint32_t)h);
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", zdata);
    append_chunk(out, "IEND", {});
    return out;
}

inline void write_png(const std::string& path, const Tensorf& img) {
    std::vector<unsigned char> out = encode_png(img);
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write((const char*)out.data(), (std::streamsize)out.size());
    if (!f) throw IoError("short write: " + path);
}

// decode from memory
inline Tensorf decode_png(const unsigned char* bytes, size_t len);

// PNG bytes -> (3,h,w) float in [0,1]; gray is replicated, alpha dropped
inline Tensorf decode_png_impl(const std::vector<unsigned char>& buf, const std::string& path) {
    using namespace pngdetail;
    const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
        throw IoError("not a PNG file: " + path);

    int w = 0, h = 0, depth = 0, color = 0, interlace = 0;
    std::vector<unsigned char> zdata;
    size_t pos = 8;
    while (pos + 8 <= buf.size()) {
        uint32_t len = get_u32(buf.data() + pos);
        if (pos + 12 + len > buf.size()) throw IoError("truncated PNG: " + path);
        const char* type = (const char*)buf.data() + pos + 4;
        const unsigned char* data = buf.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            w = (int)get_u32(data);
            h = (int)get_u32(data + 4);
            depth = data[8];
            color = data[9];
            interlace = data[12];
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            zdata.insert(zdata.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0) throw IoError("bad PNG header: " + path);
    if (depth != 8) throw IoError("unsupported PNG bit depth (want 8): " + path);
    if (interlace != 0) throw IoError("interlaced PNG unsupported: " + path);
    int nch;
    switch (color) {
        case 0: nch = 1; break;
        case 2: nch = 3; break;
        case 4: nch = 2; break;
        case 6: nch = 4; break;
        default: throw IoError("unsupported PNG color type: " + path);
    }

    size_t rowbytes = 1 + (size_t)w * nch;
    std::vector<unsigned char> raw((size_t)h * rowbytes);
    uLongf rawlen = (uLongf)raw.size();
    if (::uncompress(raw.data(), &rawlen, zdata.data(), (uLong)zdata.size()) != Z_OK ||
        rawlen != raw.size())
        throw IoError("png inflate failed: " + path);

    // defilter in place
    size_t stride = (size_t)w * nch;
    std::vector<unsigned char> img((size_t)h * stride);
    for (int y = 0; y < h; ++y) {
        unsigned char ft = raw[(size_t)y * rowbytes];
        const unsigned char* src = raw.data() + (size_t)y * rowbytes + 1;
        unsigned char* dst = img.data() + (size_t)y * stride;
        const unsigned char* up = y > 0 ? img.data() + (size_t)(y - 1) * stride : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= (size_t)nch ? dst[i - nch] : 0;
            int b = up ? up[i] : 0;
            int cc = (up && i >= (size_t)nch) ? up[i - nch] : 0;
            int v = src[i];
            switch (ft) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, cc); break;
                default: throw IoError("unknown PNG filter: " + path);
            }
            dst[i] = (unsigned char)v;
        }
    }

    Tensorf out({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const unsigned char* px = img.data() + (size_t)y * stride + (size_t)x * nch;
            float r, g, b;
            if (nch == 1 || nch == 2) r = g = b = px[0] / 255.0f;
            else {
                r = px[0] / 255.0f;
                g = px[1] / 255.0f;
                b = px[2] / 255.0f;
            }
            out.at(0, y, x) = r;
            out.at(1, y, x) = g;
            out.at(2, y, x) = b;
        }
    return out;
}

inline Tensorf decode_png(const unsigned char* bytes, size_t len) {
    return decode_png_impl(std::vector<unsigned char>(bytes, bytes + len), "<memory>");
}

inline Tensorf read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    return decode_png_impl(buf, path);
}

}  // namespace tovsr
