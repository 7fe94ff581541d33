#pragma once

#include <functional>
#include <vector>

#include "textovsr/autograd.hpp"
#include "textovsr/rng.hpp"
#include "textovsr/tensor.hpp"

namespace tovsr::testing {

inline Tensord random_tensor(std::vector<int> dims, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
    Tensord t(std::move(dims));
    for (long long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline Tensorf random_tensorf(std::vector<int> dims, Rng& rng, double lo = 0.0,
                              double hi = 1.0) {
    Tensorf t(std::move(dims));
    for (long long i = 0; i < t.numel(); ++i) t[i] = (float)rng.uniform(lo, hi);
    return t;
}

// Central finite differences on every element of `x` against the analytic
// gradient of a scalar-valued function. Returns max relative error, with
// relative defined against max(|fd|, |an|, floor).
inline double fd_check(Tensord& x, const std::function<double()>& eval_loss,
                       const Tensord& analytic, double step = 1e-4, double floor = 1e-6) {
    double worst = 0.0;
    for (long long i = 0; i < x.numel(); ++i) {
        double orig = x[i];
        x[i] = orig + step;
        double fp = eval_loss();
        x[i] = orig - step;
        double fm = eval_loss();
        x[i] = orig;
        double fd = (fp - fm) / (2.0 * step);
        double an = analytic[i];
        double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor});
        worst = std::max(worst, rel);
    }
    return worst;
}

// Procedural textured frame: multiscale value noise plus a moving box, so the
// content is learnable and has natural-ish statistics.
inline Tensorf synth_frame(int h, int w, uint64_t seed, int t = 0) {
    Tensorf img({3, h, w});
    Rng rng(seed);
    // per-octave random phases
    double ph[4][4];
    for (auto& row : ph)
        for (auto& v : row) v = rng.uniform(0.0, 6.28318);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double base = 0.0, amp = 0.5, freq = 2.0 * 3.14159265 / 16.0;
            for (int o = 0; o < 4; ++o) {
                base += amp * std::sin(freq * (x + 3 * t) + ph[o][0]) *
                        std::cos(freq * (y - 2 * t) + ph[o][1]);
                amp *= 0.55;
                freq *= 1.9;
            }
            double v = 0.5 + 0.4 * base;
            img.at(0, y, x) = (float)std::clamp(v + 0.05 * std::sin(0.21 * x), 0.0, 1.0);
            img.at(1, y, x) = (float)std::clamp(v, 0.0, 1.0);
            img.at(2, y, x) = (float)std::clamp(v + 0.05 * std::cos(0.17 * y), 0.0, 1.0);
        }
    int bx = (int)((seed + 5 * t) % (uint64_t)std::max(1, w - 12));
    int by = (int)((seed / 7 + 3 * t) % (uint64_t)std::max(1, h - 12));
    for (int y = by; y < by + 10 && y < h; ++y)
        for (int x = bx; x < bx + 10 && x < w; ++x) {
            img.at(0, y, x) = 0.9f;
            img.at(1, y, x) = 0.2f;
            img.at(2, y, x) = 0.25f;
        }
    return img;
}

// (n,3,h,w) clip of synth frames
inline Tensorf synth_clip(int n, int h, int w, uint64_t seed) {
    Tensorf clip({n, 3, h, w});
    for (int t = 0; t < n; ++t) {
        Tensorf f = synth_frame(h, w, seed, t);
        for (long long i = 0; i < f.numel(); ++i)
            clip[(long long)t * f.numel() + i] = f[i];
    }
    return clip;
}

}  // namespace tovsr::testing
