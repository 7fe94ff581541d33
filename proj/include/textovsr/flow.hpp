#pragma once

#include <string>
#include <vector>

#include "textovsr/config.hpp"
#include "textovsr/image.hpp"
#include "textovsr/serialize.hpp"

namespace tovsr {

// Coarse-to-fine Lucas-Kanade. estimate(a, b) returns v with b(x + v) ~= a(x),
// so warping a source feature by estimate(target, source) aligns it onto the
// target grid. The backend is frozen: plain tensors, nothing trainable.

namespace flowdetail {

template <class S>
inline Tensor<S> downsample2(const Tensor<S>& g) {
    const int h = g.size(1), w = g.size(2);
    const int oh = h / 2, ow = w / 2;
    Tensor<S> out({1, oh, ow});
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            out.at(0, y, x) = (g.at(0, 2 * y, 2 * x) + g.at(0, 2 * y, 2 * x + 1) +
                               g.at(0, 2 * y + 1, 2 * x) + g.at(0, 2 * y + 1, 2 * x + 1)) /
                              S(4);
    return out;
}

template <class S>
inline S sample_bilinear(const Tensor<S>& g, S y, S x) {
    const int h = g.size(1), w = g.size(2);
    x = std::min(std::max(x, S(0)), S(w - 1));
    y = std::min(std::max(y, S(0)), S(h - 1));
    int x0 = std::min((int)x, w - 2 >= 0 ? w - 2 : 0);
    int y0 = std::min((int)y, h - 2 >= 0 ? h - 2 : 0);
    S fx = x - (S)x0, fy = y - (S)y0;
    int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    return (S(1) - fy) * ((S(1) - fx) * g.at(0, y0, x0) + fx * g.at(0, y0, x1)) +
           fy * ((S(1) - fx) * g.at(0, y1, x0) + fx * g.at(0, y1, x1));
}

}  // namespace flowdetail

template <class S>
inline Tensor<S> pyramid_lk_flow(const Tensor<S>& a, const Tensor<S>& b, int iters = 3,
                                 int radius = 3) {
    using namespace flowdetail;
    if (!(a.rank() == 3 && b.rank() == 3 && a.size(1) == b.size(1) && a.size(2) == b.size(2)))
        throw ShapeError("flow frames must share (c,h,w)");
    Tensor<S> ga = to_gray(a), gb = to_gray(b);

    std::vector<Tensor<S>> pa{ga}, pb{gb};
    while (pa.back().size(1) >= 24 && pa.back().size(2) >= 24 && (int)pa.size() < 4) {
        pa.push_back(downsample2(gaussian_blur_iso(pa.back(), 1.0, 2)));
        pb.push_back(downsample2(gaussian_blur_iso(pb.back(), 1.0, 2)));
    }

    Tensor<S> u, v;
    for (int lvl = (int)pa.size() - 1; lvl >= 0; --lvl) {
        const Tensor<S>& A = pa[(size_t)lvl];
        const Tensor<S>& B = pb[(size_t)lvl];
        const int h = A.size(1), w = A.size(2);
        if (u.empty()) {
            u = Tensor<S>({h, w});
            v = Tensor<S>({h, w});
        } else {
            Tensor<S> u2({h, w}), v2({h, w});
            const int ph = u.size(0), pw = u.size(1);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    S sy = (S)y * (S)(ph - 1) / (S)std::max(h - 1, 1);
                    S sx = (S)x * (S)(pw - 1) / (S)std::max(w - 1, 1);
                    Tensor<S> tmp;  // bilinear on the (h,w) planes
                    int x0 = std::min((int)sx, pw - 2 >= 0 ? pw - 2 : 0);
                    int y0 = std::min((int)sy, ph - 2 >= 0 ? ph - 2 : 0);
                    S fx = sx - (S)x0, fy = sy - (S)y0;
                    int x1 = std::min(x0 + 1, pw - 1), y1 = std::min(y0 + 1, ph - 1);
                    auto bil = [&](const Tensor<S>& p) {
                        return (S(1) - fy) * ((S(1) - fx) * p.at(y0, x0) + fx * p.at(y0, x1)) +
                               fy * ((S(1) - fx) * p.at(y1, x0) + fx * p.at(y1, x1));
                    };
                    u2.at(y, x) = S(2) * bil(u);
                    v2.at(y, x) = S(2) * bil(v);
                }
            u = std::move(u2);
            v = std::move(v2);
        }

        Tensor<S> bw({1, h, w}), ix({h, w}), iy({h, w}), it({h, w});
        for (int iter = 0; iter < iters; ++iter) {
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    bw.at(0, y, x) = sample_bilinear(B, (S)y + v.at(y, x), (S)x + u.at(y, x));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    int xm = reflect_clamp(x - 1, w), xp = reflect_clamp(x + 1, w);
                    int ym = reflect_clamp(y - 1, h), yp = reflect_clamp(y + 1, h);
                    ix.at(y, x) = (bw.at(0, y, xp) - bw.at(0, y, xm)) / S(2);
                    iy.at(y, x) = (bw.at(0, yp, x) - bw.at(0, ym, x)) / S(2);
                    it.at(y, x) = bw.at(0, y, x) - A.at(0, y, x);
                }
            const S eps = (S)1e-4;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    S sxx = 0, sxy = 0, syy = 0, sxt = 0, syt = 0;
                    for (int dy = -radius; dy <= radius; ++dy) {
                        int yy = reflect_clamp(y + dy, h);
                        for (int dx = -radius; dx <= radius; ++dx) {
                            int xx = reflect_clamp(x + dx, w);
                            S gx = ix.at(yy, xx), gy = iy.at(yy, xx), gt = it.at(yy, xx);
                            sxx += gx * gx;
                            sxy += gx * gy;
                            syy += gy * gy;
                            sxt += gx * gt;
                            syt += gy * gt;
                        }
                    }
                    S det = (sxx + eps) * (syy + eps) - sxy * sxy;
                    S du = (-(sxt) * (syy + eps) + sxy * syt) / det;
                    S dv = (-(syt) * (sxx + eps) + sxy * sxt) / det;
                    du = std::min(std::max(du, S(-1.5)), S(1.5));
                    dv = std::min(std::max(dv, S(-1.5)), S(1.5));
                    u.at(y, x) += du;
                    v.at(y, x) += dv;
                }
        }
    }

    Tensor<S> flow({2, a.size(1), a.size(2)});
    for (int y = 0; y < a.size(1); ++y)
        for (int x = 0; x < a.size(2); ++x) {
            flow.at(0, y, x) = u.at(y, x);
            flow.at(1, y, x) = v.at(y, x);
        }
    return flow;
}

// Frozen flow source for a clip. zero returns all-zero fields; pyramid_lk
// estimates from the frames; external loads precomputed files named
// flow_<target>_<source>.tovf from a directory.
template <class S>
class FlowSource {
public:
    FlowSource() = default;
    FlowSource(FlowBackend backend, std::string external_dir = "")
        : backend_(backend), dir_(std::move(external_dir)) {}

    FlowBackend backend() const { return backend_; }

    Tensor<S> estimate(const Tensor<S>& target, const Tensor<S>& source, int t_target,
                       int t_source) const {
        switch (backend_) {
            case FlowBackend::zero:
                return Tensor<S>({2, target.size(1), target.size(2)});
            case FlowBackend::pyramid_lk:
                return pyramid_lk_flow(target, source);
            case FlowBackend::external: {
                std::string path = dir_ + "/flow_" + std::to_string(t_target) + "_" +
                                   std::to_string(t_source) + ".tovf";
                Tensorf f = read_flow_file(path);
                if (f.size(1) != target.size(1) || f.size(2) != target.size(2))
                    throw ShapeError("external flow dims mismatch in " + path);
                Tensor<S> out({2, f.size(1), f.size(2)});
                for (long long i = 0; i < f.numel(); ++i) out[i] = (S)f[i];
                return out;
            }
        }
        throw ConfigError("bad flow backend");
    }

private:
    FlowBackend backend_ = FlowBackend::pyramid_lk;
    std::string dir_;
};

}  // namespace tovsr
