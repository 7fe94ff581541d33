#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "textovsr/tensor.hpp"

namespace tovsr {

// ---------------------------------------------------------------------------
// Separable resampling. Cubic kernel is Keys a=-0.5; downscaling widens the
// kernel support by the scale factor (antialias), matching the usual
// "bicubic" used for LR synthesis.
// ---------------------------------------------------------------------------

template <class S>
inline S cubic_kernel(S x) {
    const S a = S(-0.5);
    x = std::abs(x);
    if (x < S(1)) return ((a + S(2)) * x - (a + S(3))) * x * x + S(1);
    if (x < S(2)) return (((x - S(5)) * x + S(8)) * x - S(4)) * a;
    return S(0);
}

template <class S>
struct ResizeTaps {
    int in_size = 0, out_size = 0;
    std::vector<int> start;     // first source index per output index
    std::vector<int> count;     // taps per output index
    std::vector<S> weights;     // concatenated, normalized
    std::vector<size_t> offset; // into weights
};

template <class S>
inline ResizeTaps<S> build_cubic_taps(int in_size, int out_size, bool antialias) {
    ResizeTaps<S> t;
    t.in_size = in_size;
    t.out_size = out_size;
    double scale = (double)in_size / (double)out_size;
    double support_scale = (antialias && scale > 1.0) ? scale : 1.0;
    double support = 2.0 * support_scale;
    for (int o = 0; o < out_size; ++o) {
        double center = (o + 0.5) * scale - 0.5;
        int lo = (int)std::floor(center - support + 1e-9);
        int hi = (int)std::ceil(center + support - 1e-9);
        t.start.push_back(lo);
        t.count.push_back(hi - lo + 1);
        t.offset.push_back(t.weights.size());
        S wsum = S(0);
        for (int i = lo; i <= hi; ++i) {
            S w = cubic_kernel<S>((S)((i - center) / support_scale));
            t.weights.push_back(w);
            wsum += w;
        }
        if (std::abs((double)wsum) > 1e-12)
            for (int i = 0; i < t.count.back(); ++i) t.weights[t.offset.back() + i] /= wsum;
    }
    return t;
}

inline int reflect_clamp(int i, int n) { return std::min(std::max(i, 0), n - 1); }

// (c,h,w) -> (c,oh,ow)
template <class S>
inline Tensor<S> resize_bicubic(const Tensor<S>& img, int oh, int ow, bool antialias = true) {
    if (img.rank() != 3) throw ShapeError("resize_bicubic expects (c,h,w)");
    const int c = img.size(0), h = img.size(1), w = img.size(2);
    auto ty = build_cubic_taps<S>(h, oh, antialias);
    auto tx = build_cubic_taps<S>(w, ow, antialias);

    Tensor<S> tmp({c, oh, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y) {
            const S* wt = ty.weights.data() + ty.offset[y];
            for (int x = 0; x < w; ++x) {
                S acc = S(0);
                for (int k = 0; k < ty.count[y]; ++k)
                    acc += wt[k] * img.at(ch, reflect_clamp(ty.start[y] + k, h), x);
                tmp.at(ch, y, x) = acc;
            }
        }
    Tensor<S> out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const S* wt = tx.weights.data() + tx.offset[x];
                S acc = S(0);
                for (int k = 0; k < tx.count[x]; ++k)
                    acc += wt[k] * tmp.at(ch, y, reflect_clamp(tx.start[x] + k, w));
                out.at(ch, y, x) = acc;
            }
    return out;
}

template <class S>
inline void clamp01_inplace(Tensor<S>& t) {
    for (long long i = 0; i < t.numel(); ++i) t[i] = std::min(std::max(t[i], S(0)), S(1));
}

template <class S>
inline Tensor<S> to_gray(const Tensor<S>& img) {
    const int c = img.size(0), h = img.size(1), w = img.size(2);
    Tensor<S> g({1, h, w});
    if (c == 1) {
        for (long long i = 0; i < g.numel(); ++i) g[i] = img[i];
        return g;
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            g.at(0, y, x) = S(0.299) * img.at(0, y, x) + S(0.587) * img.at(1, y, x) +
                            S(0.114) * img.at(2, y, x);
    return g;
}

template <class S>
inline Tensor<S> flip_horizontal(const Tensor<S>& img) {
    const int c = img.size(0), h = img.size(1), w = img.size(2);
    Tensor<S> out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ch, y, x) = img.at(ch, y, w - 1 - x);
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian blur, replicate border. Anisotropic kernels take (sigma_x,
// sigma_y, theta); sigma below ~1e-3 collapses to the identity kernel.
// ---------------------------------------------------------------------------

template <class S>
inline Tensor<S> gaussian_kernel2d(double sx, double sy, double theta) {
    if (sx < 1e-3 && sy < 1e-3) {
        Tensor<S> k({1, 1});
        k[0] = S(1);
        return k;
    }
    sx = std::max(sx, 1e-3);
    sy = std::max(sy, 1e-3);
    int r = (int)std::ceil(3.0 * std::max(sx, sy));
    r = std::max(r, 1);
    int n = 2 * r + 1;
    Tensor<S> k({n, n});
    double ct = std::cos(theta), st = std::sin(theta);
    double sum = 0.0;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
            double u = ct * x + st * y;
            double v = -st * x + ct * y;
            double e = std::exp(-0.5 * (u * u / (sx * sx) + v * v / (sy * sy)));
            k.at(y + r, x + r) = (S)e;
            sum += e;
        }
    for (long long i = 0; i < k.numel(); ++i) k[i] = (S)((double)k[i] / sum);
    return k;
}

template <class S>
inline Tensor<S> convolve_replicate(const Tensor<S>& img, const Tensor<S>& kernel) {
    const int c = img.size(0), h = img.size(1), w = img.size(2);
    const int kh = kernel.size(0), kw = kernel.size(1);
    const int ry = kh / 2, rx = kw / 2;
    Tensor<S> out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                S acc = S(0);
                for (int ky = 0; ky < kh; ++ky) {
                    int sy = reflect_clamp(y + ky - ry, h);
                    for (int kx = 0; kx < kw; ++kx) {
                        int sx = reflect_clamp(x + kx - rx, w);
                        acc += kernel.at(ky, kx) * img.at(ch, sy, sx);
                    }
                }
                out.at(ch, y, x) = acc;
            }
    return out;
}

template <class S>
inline Tensor<S> gaussian_blur(const Tensor<S>& img, double sx, double sy, double theta) {
    return convolve_replicate(img, gaussian_kernel2d<S>(sx, sy, theta));
}

// Separable isotropic variant for metric windows.
template <class S>
inline Tensor<S> gaussian_blur_iso(const Tensor<S>& img, double sigma, int radius) {
    int n = 2 * radius + 1;
    std::vector<S> k((size_t)n);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        double e = std::exp(-0.5 * i * i / (sigma * sigma));
        k[(size_t)(i + radius)] = (S)e;
        sum += e;
    }
    for (auto& v : k) v = (S)((double)v / sum);
    const int c = img.size(0), h = img.size(1), w = img.size(2);
    Tensor<S> tmp({c, h, w}), out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                S acc = S(0);
                for (int i = -radius; i <= radius; ++i)
                    acc += k[(size_t)(i + radius)] * img.at(ch, y, reflect_clamp(x + i, w));
                tmp.at(ch, y, x) = acc;
            }
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                S acc = S(0);
                for (int i = -radius; i <= radius; ++i)
                    acc += k[(size_t)(i + radius)] * tmp.at(ch, reflect_clamp(y + i, h), x);
                out.at(ch, y, x) = acc;
            }
    return out;
}

// ---------------------------------------------------------------------------
// 8x8 block DCT quantization. Baseline-JPEG tables scaled by quality for the
// jpeg stage; a flat table scaled by strength models per-clip video
// compression. Both operate on YCbCr planes and round-trip the quantization
// (the lossy part of the codec) without entropy coding.
// ---------------------------------------------------------------------------

namespace detail {

inline const std::array<int, 64>& jpeg_luma_table() {
    static const std::array<int, 64> t = {
        16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
        14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
        18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
        49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
    return t;
}
inline const std::array<int, 64>& jpeg_chroma_table() {
    static const std::array<int, 64> t = {
        17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
        24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
        99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
        99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};
    return t;
}

template <class S>
inline const std::array<S, 64>& dct8_matrix() {
    static const std::array<S, 64> m = [] {
        std::array<S, 64> a{};
        const double pi = 3.14159265358979323846;
        for (int k = 0; k < 8; ++k) {
            double ck = (k == 0) ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int n = 0; n < 8; ++n)
                a[(size_t)(k * 8 + n)] = (S)(ck * std::cos(pi * (2 * n + 1) * k / 16.0));
        }
        return a;
    }();
    return m;
}

// block: 8x8 row-major, in-place D * B * D^T or D^T * B * D
template <class S>
inline void dct8_2d(S* b, bool inverse) {
    const auto& d = dct8_matrix<S>();
    S tmp[64];
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            S acc = 0;
            for (int k = 0; k < 8; ++k)
                acc += (inverse ? d[(size_t)(k * 8 + i)] : d[(size_t)(i * 8 + k)]) * b[k * 8 + j];
            tmp[i * 8 + j] = acc;
        }
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            S acc = 0;
            for (int k = 0; k < 8; ++k)
                acc += tmp[i * 8 + k] * (inverse ? d[(size_t)(k * 8 + j)] : d[(size_t)(j * 8 + k)]);
            b[i * 8 + j] = acc;
        }
}

// libjpeg quality-to-table scaling
inline int scaled_q(int base, int quality) {
    quality = std::min(std::max(quality, 1), 100);
    int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    int q = (base * scale + 50) / 100;
    return std::min(std::max(q, 1), 255);
}

// plane (h,w) values centered around 0, quant table q (64 ints)
template <class S>
inline void quantize_plane(Tensor<S>& plane, const std::array<int, 64>& q) {
    const int h = plane.size(0), w = plane.size(1);
    for (int by = 0; by < h; by += 8)
        for (int bx = 0; bx < w; bx += 8) {
            S block[64];
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    block[y * 8 + x] =
                        plane.at(reflect_clamp(by + y, h), reflect_clamp(bx + x, w));
            dct8_2d(block, false);
            for (int i = 0; i < 64; ++i)
                block[i] = (S)(std::round((double)block[i] / q[(size_t)i]) * q[(size_t)i]);
            dct8_2d(block, true);
            for (int y = 0; y < 8 && by + y < h; ++y)
                for (int x = 0; x < 8 && bx + x < w; ++x)
                    plane.at(by + y, bx + x) = block[y * 8 + x];
        }
}

}  // namespace detail

template <class S>
inline Tensor<S> rgb_to_ycbcr(const Tensor<S>& rgb) {
    const int h = rgb.size(1), w = rgb.size(2);
    Tensor<S> out({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            S r = rgb.at(0, y, x), g = rgb.at(1, y, x), b = rgb.at(2, y, x);
            out.at(0, y, x) = S(0.299) * r + S(0.587) * g + S(0.114) * b;
            out.at(1, y, x) = S(-0.168736) * r - S(0.331264) * g + S(0.5) * b;
            out.at(2, y, x) = S(0.5) * r - S(0.418688) * g - S(0.081312) * b;
        }
    return out;
}

template <class S>
inline Tensor<S> ycbcr_to_rgb(const Tensor<S>& ycc) {
    const int h = ycc.size(1), w = ycc.size(2);
    Tensor<S> out({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            S Y = ycc.at(0, y, x), cb = ycc.at(1, y, x), cr = ycc.at(2, y, x);
            out.at(0, y, x) = Y + S(1.402) * cr;
            out.at(1, y, x) = Y - S(0.344136) * cb - S(0.714136) * cr;
            out.at(2, y, x) = Y + S(1.772) * cb;
        }
    return out;
}

// Baseline-JPEG quantization round trip on an RGB image in [0,1].
template <class S>
inline Tensor<S> jpeg_quantize(const Tensor<S>& rgb, int quality) {
    const int h = rgb.size(1), w = rgb.size(2);
    Tensor<S> ycc = rgb_to_ycbcr(rgb);
    std::array<int, 64> lq{}, cq{};
    for (int i = 0; i < 64; ++i) {
        lq[(size_t)i] = detail::scaled_q(detail::jpeg_luma_table()[(size_t)i], quality);
        cq[(size_t)i] = detail::scaled_q(detail::jpeg_chroma_table()[(size_t)i], quality);
    }
    for (int c = 0; c < 3; ++c) {
        Tensor<S> plane({h, w});
        S center = (c == 0) ? S(0.5) : S(0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                plane.at(y, x) = (ycc.at(c, y, x) - center) * S(255);
        detail::quantize_plane(plane, c == 0 ? lq : cq);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                ycc.at(c, y, x) = plane.at(y, x) / S(255) + center;
    }
    Tensor<S> out = ycbcr_to_rgb(ycc);
    clamp01_inplace(out);
    return out;
}

// Flat-table re-quantization shared by all frames of a clip; strength is the
// uniform quantizer step on 8x8 DCT coefficients of 255-scaled planes.
template <class S>
inline Tensor<S> block_requantize(const Tensor<S>& rgb, double strength) {
    const int c = rgb.size(0), h = rgb.size(1), w = rgb.size(2);
    std::array<int, 64> q{};
    int step = std::max(1, (int)std::lround(strength));
    q.fill(step);
    Tensor<S> out = rgb;
    for (int ch = 0; ch < c; ++ch) {
        Tensor<S> plane({h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) plane.at(y, x) = (rgb.at(ch, y, x) - S(0.5)) * S(255);
        detail::quantize_plane(plane, q);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ch, y, x) = plane.at(y, x) / S(255) + S(0.5);
    }
    clamp01_inplace(out);
    return out;
}

}  // namespace tovsr
