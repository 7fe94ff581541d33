#pragma once

#include <Eigen/Core>
#include <cmath>
#include <memory>

#include "textovsr/autograd.hpp"
#include "textovsr/image.hpp"

namespace tovsr {

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;

template <class S>
inline void accum(const std::shared_ptr<Node<S>>& p, const Tensor<S>& g) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (long long i = 0; i < g.numel(); ++i) p->grad[i] += g[i];
}

template <class S>
inline void touch(const Var<S>& v) {
    if (v.defined()) ++v.node()->access_count;
}

namespace ops {

// ---- elementwise -----------------------------------------------------------

template <class S, class F, class DF>
inline Var<S> unary(const Var<S>& x, F f, DF df) {
    Tensor<S> out(x.value().dims());
    const Tensor<S>& xv = x.value();
    for (long long i = 0; i < out.numel(); ++i) out[i] = f(xv[i]);
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn, df](Node<S>& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (long long i = 0; i < n.grad.numel(); ++i)
            xn->grad[i] += n.grad[i] * df(xn->value[i], n.value[i]);
    });
}

template <class S>
inline Var<S> add(const Var<S>& a, const Var<S>& b) {
    if (!a.value().same_shape(b.value())) throw ShapeError("add shape mismatch");
    Tensor<S> out(a.value().dims());
    for (long long i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
    auto an = a.node(), bn = b.node();
    return make_op<S>(std::move(out), {a, b}, [an, bn](Node<S>& n) {
        accum(an, n.grad);
        accum(bn, n.grad);
    });
}

template <class S>
inline Var<S> sub(const Var<S>& a, const Var<S>& b) {
    if (!a.value().same_shape(b.value())) throw ShapeError("sub shape mismatch");
    Tensor<S> out(a.value().dims());
    for (long long i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    auto an = a.node(), bn = b.node();
    return make_op<S>(std::move(out), {a, b}, [an, bn](Node<S>& n) {
        accum(an, n.grad);
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (long long i = 0; i < n.grad.numel(); ++i) bn->grad[i] -= n.grad[i];
        }
    });
}

template <class S>
inline Var<S> mul(const Var<S>& a, const Var<S>& b) {
    if (!a.value().same_shape(b.value())) throw ShapeError("mul shape mismatch");
    Tensor<S> out(a.value().dims());
    for (long long i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    auto an = a.node(), bn = b.node();
    return make_op<S>(std::move(out), {a, b}, [an, bn](Node<S>& n) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (long long i = 0; i < n.grad.numel(); ++i)
                an->grad[i] += n.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (long long i = 0; i < n.grad.numel(); ++i)
                bn->grad[i] += n.grad[i] * an->value[i];
        }
    });
}

template <class S>
inline Var<S> scale(const Var<S>& x, S s) {
    return unary<S>(x, [s](S v) { return v * s; }, [s](S, S) { return s; });
}
template <class S>
inline Var<S> add_const(const Var<S>& x, S c) {
    return unary<S>(x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}
template <class S>
inline Var<S> neg(const Var<S>& x) {
    return scale(x, S(-1));
}
template <class S>
inline Var<S> square(const Var<S>& x) {
    return unary<S>(x, [](S v) { return v * v; }, [](S v, S) { return S(2) * v; });
}
template <class S>
inline Var<S> abs(const Var<S>& x) {
    return unary<S>(
        x, [](S v) { return std::abs(v); },
        [](S v, S) { return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0)); });
}
// sqrt(x + c), c >= 0
template <class S>
inline Var<S> sqrt_shift(const Var<S>& x, S c) {
    return unary<S>(
        x, [c](S v) { return std::sqrt(v + c); },
        [](S, S y) { return S(0.5) / y; });
}
template <class S>
inline Var<S> exp(const Var<S>& x) {
    return unary<S>(x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}
template <class S>
inline Var<S> leaky_relu(const Var<S>& x, S slope = S(0.1)) {
    return unary<S>(
        x, [slope](S v) { return v > S(0) ? v : slope * v; },
        [slope](S v, S) { return v > S(0) ? S(1) : slope; });
}
template <class S>
inline S sigmoid_scalar(S v) {
    if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
    S e = std::exp(v);
    return e / (S(1) + e);
}
template <class S>
inline Var<S> sigmoid(const Var<S>& x) {
    return unary<S>(x, [](S v) { return sigmoid_scalar(v); },
                    [](S, S y) { return y * (S(1) - y); });
}
// log(1 + e^x)
template <class S>
inline Var<S> softplus(const Var<S>& x) {
    return unary<S>(
        x,
        [](S v) { return v > S(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](S v, S) { return sigmoid_scalar(v); });
}

// ---- reductions -------------------------------------------------------------

template <class S>
inline Var<S> sum_all(const Var<S>& x) {
    Tensor<S> out({1});
    S acc = S(0);
    for (long long i = 0; i < x.value().numel(); ++i) acc += x.value()[i];
    out[0] = acc;
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn](Node<S>& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (long long i = 0; i < xn->grad.numel(); ++i) xn->grad[i] += n.grad[0];
    });
}

template <class S>
inline Var<S> mean_all(const Var<S>& x) {
    long long m = x.value().numel();
    return scale(sum_all(x), S(1) / S(m));
}

template <class S>
inline Var<S> dot(const Var<S>& a, const Var<S>& b) {
    return sum_all(mul(a, b));
}

// scalar vars: out = x * s (s is a [1] var)
template <class S>
inline Var<S> scale_by(const Var<S>& x, const Var<S>& s) {
    if (s.value().numel() != 1) throw ShapeError("scale_by expects scalar var");
    Tensor<S> out(x.value().dims());
    S sv = s.value()[0];
    for (long long i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * sv;
    auto xn = x.node(), sn = s.node();
    return make_op<S>(std::move(out), {x, s}, [xn, sn](Node<S>& n) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            S sv = sn->value[0];
            for (long long i = 0; i < n.grad.numel(); ++i) xn->grad[i] += n.grad[i] * sv;
        }
        if (sn->requires_grad) {
            sn->ensure_grad();
            S acc = S(0);
            for (long long i = 0; i < n.grad.numel(); ++i) acc += n.grad[i] * xn->value[i];
            sn->grad[0] += acc;
        }
    });
}

template <class S>
inline Var<S> reciprocal(const Var<S>& x) {
    return unary<S>(x, [](S v) { return S(1) / v; }, [](S, S y) { return -y * y; });
}

// ---- structure ---------------------------------------------------------------

template <class S>
inline Var<S> reshape(const Var<S>& x, std::vector<int> dims) {
    Tensor<S> out = x.value().reshaped(dims);
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn](Node<S>& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (long long i = 0; i < n.grad.numel(); ++i) xn->grad[i] += n.grad[i];
    });
}

// concat along dim 0; all inputs share trailing dims
template <class S>
inline Var<S> concat0(const std::vector<Var<S>>& xs) {
    if (xs.empty()) throw ShapeError("concat0 of nothing");
    std::vector<int> dims = xs[0].value().dims();
    long long inner = xs[0].value().numel() / dims[0];
    int d0 = 0;
    for (const auto& x : xs) {
        if (x.value().numel() / x.value().size(0) != inner)
            throw ShapeError("concat0 trailing dims mismatch");
        d0 += x.value().size(0);
    }
    dims[0] = d0;
    Tensor<S> out(dims);
    long long off = 0;
    for (const auto& x : xs) {
        for (long long i = 0; i < x.value().numel(); ++i) out[off + i] = x.value()[i];
        off += x.value().numel();
    }
    std::vector<std::shared_ptr<Node<S>>> nodes;
    for (auto& x : xs) nodes.push_back(x.node());
    return make_op<S>(std::move(out), xs, [nodes](Node<S>& n) {
        long long off = 0;
        for (auto& p : nodes) {
            long long cnt = p->value.numel();
            if (p->requires_grad) {
                p->ensure_grad();
                for (long long i = 0; i < cnt; ++i) p->grad[i] += n.grad[off + i];
            }
            off += cnt;
        }
    });
}

template <class S>
inline Var<S> slice0(const Var<S>& x, int a0, int b0) {
    std::vector<int> dims = x.value().dims();
    if (a0 < 0 || b0 > dims[0] || a0 >= b0) throw ShapeError("slice0 bounds");
    long long inner = x.value().numel() / dims[0];
    dims[0] = b0 - a0;
    Tensor<S> out(dims);
    for (long long i = 0; i < out.numel(); ++i) out[i] = x.value()[a0 * inner + i];
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn, a0, inner](Node<S>& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (long long i = 0; i < n.grad.numel(); ++i) xn->grad[a0 * inner + i] += n.grad[i];
    });
}

// (C,H,W) -> [H*W, C]
template <class S>
inline Var<S> tokens_from_map(const Var<S>& x) {
    const int c = x.value().size(0), h = x.value().size(1), w = x.value().size(2);
    Tensor<S> out({h * w, c});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h * w; ++i) out.at(i, ch) = x.value()[(long long)ch * h * w + i];
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn, c, h, w](Node<S>& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h * w; ++i)
                xn->grad[(long long)ch * h * w + i] += n.grad.at(i, ch);
    });
}

// [H*W, C] -> (C,H,W)
template <class S>
inline Var<S> map_from_tokens(const Var<S>& x, int h, int w) {
    const int c = x.value().size(1);
    if (x.value().size(0) != h * w) throw ShapeError("map_from_tokens token count");
    Tensor<S> out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h * w; ++i) out[(long long)ch * h * w + i] = x.value().at(i, ch);
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn, c, h, w](Node<S>& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h * w; ++i)
                xn->grad.at(i, ch) += n.grad[(long long)ch * h * w + i];
    });
}

// [K] -> (K,h,w)
template <class S>
inline Var<S> broadcast_vec_map(const Var<S>& v, int h, int w) {
    const int k = (int)v.value().numel();
    Tensor<S> out({k, h, w});
    for (int c = 0; c < k; ++c) {
        S val = v.value()[c];
        for (int i = 0; i < h * w; ++i) out[(long long)c * h * w + i] = val;
    }
    auto vn = v.node();
    return make_op<S>(std::move(out), {v}, [vn, k, h, w](Node<S>& n) {
        if (!vn->requires_grad) return;
        vn->ensure_grad();
        for (int c = 0; c < k; ++c) {
            S acc = S(0);
            for (int i = 0; i < h * w; ++i) acc += n.grad[(long long)c * h * w + i];
            vn->grad[c] += acc;
        }
    });
}

// ---- linear algebra ----------------------------------------------------------

template <class S>
inline Var<S> matmul(const Var<S>& a, const Var<S>& b) {
    const int m = a.value().size(0), k = a.value().size(1);
    const int k2 = b.value().size(0), n = b.value().size(1);
    if (k != k2) throw ShapeError("matmul inner dims");
    Tensor<S> out({m, n});
    EMap<S>(out.data(), m, n).noalias() =
        ECMap<S>(a.value().data(), m, k) * ECMap<S>(b.value().data(), k, n);
    auto an = a.node(), bn = b.node();
    return make_op<S>(std::move(out), {a, b}, [an, bn, m, k, n](Node<S>& n_) {
        ECMap<S> g(n_.grad.data(), m, n);
        if (an->requires_grad) {
            an->ensure_grad();
            EMap<S>(an->grad.data(), m, k).noalias() +=
                g * ECMap<S>(bn->value.data(), k, n).transpose();
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            EMap<S>(bn->grad.data(), k, n).noalias() +=
                ECMap<S>(an->value.data(), m, k).transpose() * g;
        }
    });
}

template <class S>
inline Var<S> transpose2d(const Var<S>& x) {
    const int m = x.value().size(0), n = x.value().size(1);
    Tensor<S> out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = x.value().at(i, j);
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn, m, n](Node<S>& nd) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) xn->grad.at(i, j) += nd.grad.at(j, i);
    });
}

// X [N,Din], W [Dout,Din], b [Dout] or undefined -> [N,Dout]
template <class S>
inline Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
    const int N = x.value().size(0), din = x.value().size(1), dout = w.value().size(0);
    if (w.value().size(1) != din) throw ShapeError("linear weight dims");
    Tensor<S> out({N, dout});
    EMap<S>(out.data(), N, dout).noalias() =
        ECMap<S>(x.value().data(), N, din) * ECMap<S>(w.value().data(), dout, din).transpose();
    if (b.defined()) {
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < dout; ++j) out.at(i, j) += b.value()[j];
    }
    auto xn = x.node(), wn = w.node();
    auto bn = b.defined() ? b.node() : nullptr;
    std::vector<Var<S>> ins = {x, w};
    if (b.defined()) ins.push_back(b);
    return make_op<S>(std::move(out), std::move(ins), [xn, wn, bn, N, din, dout](Node<S>& nd) {
        ECMap<S> g(nd.grad.data(), N, dout);
        if (xn->requires_grad) {
            xn->ensure_grad();
            EMap<S>(xn->grad.data(), N, din).noalias() +=
                g * ECMap<S>(wn->value.data(), dout, din);
        }
        if (wn->requires_grad) {
            wn->ensure_grad();
            EMap<S>(wn->grad.data(), dout, din).noalias() +=
                g.transpose() * ECMap<S>(xn->value.data(), N, din);
        }
        if (bn && bn->requires_grad) {
            bn->ensure_grad();
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < dout; ++j) bn->grad[j] += nd.grad.at(i, j);
        }
    });
}

template <class S>
inline Var<S> softmax_rows(const Var<S>& x) {
    const int r = x.value().size(0), c = x.value().size(1);
    Tensor<S> out({r, c});
    for (int i = 0; i < r; ++i) {
        S mx = x.value().at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, x.value().at(i, j));
        S sum = S(0);
        for (int j = 0; j < c; ++j) {
            S e = std::exp(x.value().at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < c; ++j) out.at(i, j) /= sum;
    }
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn, r, c](Node<S>& nd) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < r; ++i) {
            S dp = S(0);
            for (int j = 0; j < c; ++j) dp += nd.grad.at(i, j) * nd.value.at(i, j);
            for (int j = 0; j < c; ++j)
                xn->grad.at(i, j) += nd.value.at(i, j) * (nd.grad.at(i, j) - dp);
        }
    });
}

// columns [c0,c1) of a 2D var
template <class S>
inline Var<S> col_slice(const Var<S>& x, int c0, int c1) {
    const int r = x.value().size(0), c = x.value().size(1);
    if (c0 < 0 || c1 > c || c0 >= c1) throw ShapeError("col_slice bounds");
    Tensor<S> out({r, c1 - c0});
    for (int i = 0; i < r; ++i)
        for (int j = c0; j < c1; ++j) out.at(i, j - c0) = x.value().at(i, j);
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn, r, c0, c1](Node<S>& nd) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = c0; j < c1; ++j) xn->grad.at(i, j) += nd.grad.at(i, j - c0);
    });
}

template <class S>
inline Var<S> concat_cols(const std::vector<Var<S>>& xs) {
    const int r = xs.at(0).value().size(0);
    int c = 0;
    for (const auto& x : xs) {
        if (x.value().size(0) != r) throw ShapeError("concat_cols row mismatch");
        c += x.value().size(1);
    }
    Tensor<S> out({r, c});
    int off = 0;
    for (const auto& x : xs) {
        int cc = x.value().size(1);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < cc; ++j) out.at(i, off + j) = x.value().at(i, j);
        off += cc;
    }
    std::vector<std::shared_ptr<Node<S>>> nodes;
    for (auto& x : xs) nodes.push_back(x.node());
    return make_op<S>(std::move(out), xs, [nodes, r](Node<S>& nd) {
        int off = 0;
        for (auto& p : nodes) {
            int cc = p->value.size(1);
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < cc; ++j) p->grad.at(i, j) += nd.grad.at(i, off + j);
            }
            off += cc;
        }
    });
}

// ---- convolution and friends ---------------------------------------------------

namespace detail {
template <class S>
inline void im2col(const Tensor<S>& x, int kh, int kw, int stride, int pad, int ho, int wo,
                   Tensor<S>& cols) {
    const int cin = x.size(0), h = x.size(1), w = x.size(2);
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                long long row = (long long)((c * kh + ky) * kw + kx) * (ho * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride - pad + ky;
                    bool yin = iy >= 0 && iy < h;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride - pad + kx;
                        cols[row + oy * wo + ox] =
                            (yin && ix >= 0 && ix < w) ? x.at(c, iy, ix) : S(0);
                    }
                }
            }
}
template <class S>
inline void col2im_accum(const Tensor<S>& cols, int cin, int h, int w, int kh, int kw,
                         int stride, int pad, int ho, int wo, Tensor<S>& dx) {
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                long long row = (long long)((c * kh + ky) * kw + kx) * (ho * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        dx.at(c, iy, ix) += cols[row + oy * wo + ox];
                    }
                }
            }
}
}  // namespace detail

// x (Cin,H,W), w (Cout,Cin,kh,kw), b (Cout) or undefined; zero padding
template <class S>
inline Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int stride = 1,
                     int pad = 1) {
    const int cin = x.value().size(0), h = x.value().size(1), wd = x.value().size(2);
    const int cout = w.value().size(0), kh = w.value().size(2), kw = w.value().size(3);
    if (w.value().size(1) != cin) throw ShapeError("conv2d channel mismatch");
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d output collapsed");
    const int K = cin * kh * kw, M = ho * wo;

    auto cols = std::make_shared<Tensor<S>>(std::vector<int>{K, M});
    detail::im2col(x.value(), kh, kw, stride, pad, ho, wo, *cols);

    Tensor<S> out({cout, ho, wo});
    EMap<S>(out.data(), cout, M).noalias() =
        ECMap<S>(w.value().data(), cout, K) * ECMap<S>(cols->data(), K, M);
    if (b.defined())
        for (int c = 0; c < cout; ++c) {
            S bv = b.value()[c];
            for (int i = 0; i < M; ++i) out[(long long)c * M + i] += bv;
        }

    auto xn = x.node(), wn = w.node();
    auto bn = b.defined() ? b.node() : nullptr;
    std::vector<Var<S>> ins = {x, w};
    if (b.defined()) ins.push_back(b);
    return make_op<S>(
        std::move(out), std::move(ins),
        [xn, wn, bn, cols, cin, h, wd, cout, kh, kw, stride, pad, ho, wo, K, M](Node<S>& nd) {
            ECMap<S> g(nd.grad.data(), cout, M);
            if (wn->requires_grad) {
                wn->ensure_grad();
                EMap<S>(wn->grad.data(), cout, K).noalias() +=
                    g * ECMap<S>(cols->data(), K, M).transpose();
            }
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                for (int c = 0; c < cout; ++c) {
                    S acc = S(0);
                    for (int i = 0; i < M; ++i) acc += nd.grad[(long long)c * M + i];
                    bn->grad[c] += acc;
                }
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                Tensor<S> dcols({K, M});
                EMap<S>(dcols.data(), K, M).noalias() =
                    ECMap<S>(wn->value.data(), cout, K).transpose() * g;
                detail::col2im_accum(dcols, cin, h, wd, kh, kw, stride, pad, ho, wo, xn->grad);
            }
        });
}

// (C*r*r, H, W) -> (C, H*r, W*r); out[c, y*r+dy, x*r+dx] = in[(c*r+dy)*r+dx, y, x]
template <class S>
inline Var<S> pixel_shuffle(const Var<S>& x, int r) {
    const int cin = x.value().size(0), h = x.value().size(1), w = x.value().size(2);
    if (cin % (r * r) != 0) throw ShapeError("pixel_shuffle channel count");
    const int c = cin / (r * r);
    Tensor<S> out({c, h * r, w * r});
    for (int ch = 0; ch < c; ++ch)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx)
                        out.at(ch, y * r + dy, xx * r + dx) =
                            x.value().at((ch * r + dy) * r + dx, y, xx);
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn, c, h, w, r](Node<S>& nd) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx)
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx)
                            xn->grad.at((ch * r + dy) * r + dx, y, xx) +=
                                nd.grad.at(ch, y * r + dy, xx * r + dx);
    });
}

template <class S>
inline Var<S> upsample_nearest2x(const Var<S>& x) {
    const int c = x.value().size(0), h = x.value().size(1), w = x.value().size(2);
    Tensor<S> out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
                out.at(ch, y, xx) = x.value().at(ch, y / 2, xx / 2);
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn, c, h, w](Node<S>& nd) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx)
                    xn->grad.at(ch, y / 2, xx / 2) += nd.grad.at(ch, y, xx);
    });
}

// Bilinear backward warp by a fixed flow (2,h,w): out(x) = in(x + u, y + v),
// border replicate. The flow is data, not a differentiable input.
template <class S>
inline Var<S> warp_bilinear(const Var<S>& x, const Tensor<S>& flow) {
    const int c = x.value().size(0), h = x.value().size(1), w = x.value().size(2);
    if (flow.size(0) != 2 || flow.size(1) != h || flow.size(2) != w)
        throw ShapeError("warp flow dims");
    Tensor<S> out({c, h, w});
    auto sample_setup = [&](int y, int xx, int& x0, int& y0, S& fx, S& fy) {
        S sx = (S)xx + flow.at(0, y, xx);
        S sy = (S)y + flow.at(1, y, xx);
        sx = std::min(std::max(sx, S(0)), S(w - 1));
        sy = std::min(std::max(sy, S(0)), S(h - 1));
        x0 = std::min((int)std::floor((double)sx), w - 2 >= 0 ? w - 2 : 0);
        y0 = std::min((int)std::floor((double)sy), h - 2 >= 0 ? h - 2 : 0);
        x0 = std::max(x0, 0);
        y0 = std::max(y0, 0);
        fx = sx - (S)x0;
        fy = sy - (S)y0;
    };
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            int x0, y0;
            S fx, fy;
            sample_setup(y, xx, x0, y0, fx, fy);
            int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            for (int ch = 0; ch < c; ++ch) {
                S v00 = x.value().at(ch, y0, x0), v01 = x.value().at(ch, y0, x1);
                S v10 = x.value().at(ch, y1, x0), v11 = x.value().at(ch, y1, x1);
                out.at(ch, y, xx) = (S(1) - fy) * ((S(1) - fx) * v00 + fx * v01) +
                                    fy * ((S(1) - fx) * v10 + fx * v11);
            }
        }
    auto xn = x.node();
    Tensor<S> flow_copy = flow;
    return make_op<S>(std::move(out), {x}, [xn, flow_copy, c, h, w](Node<S>& nd) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                int x0, y0;
                S fx, fy;
                S sx = (S)xx + flow_copy.at(0, y, xx);
                S sy = (S)y + flow_copy.at(1, y, xx);
                sx = std::min(std::max(sx, S(0)), S(w - 1));
                sy = std::min(std::max(sy, S(0)), S(h - 1));
                x0 = std::max(std::min((int)std::floor((double)sx), w - 2 >= 0 ? w - 2 : 0), 0);
                y0 = std::max(std::min((int)std::floor((double)sy), h - 2 >= 0 ? h - 2 : 0), 0);
                fx = sx - (S)x0;
                fy = sy - (S)y0;
                int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
                for (int ch = 0; ch < c; ++ch) {
                    S g = nd.grad.at(ch, y, xx);
                    xn->grad.at(ch, y0, x0) += g * (S(1) - fy) * (S(1) - fx);
                    xn->grad.at(ch, y0, x1) += g * (S(1) - fy) * fx;
                    xn->grad.at(ch, y1, x0) += g * fy * (S(1) - fx);
                    xn->grad.at(ch, y1, x1) += g * fy * fx;
                }
            }
    });
}

// Differentiable separable bicubic resize (linear in the input).
template <class S>
inline Var<S> resize_bicubic_var(const Var<S>& x, int oh, int ow, bool antialias = true) {
    const int c = x.value().size(0), h = x.value().size(1), w = x.value().size(2);
    auto ty = std::make_shared<ResizeTaps<S>>(build_cubic_taps<S>(h, oh, antialias));
    auto tx = std::make_shared<ResizeTaps<S>>(build_cubic_taps<S>(w, ow, antialias));
    Tensor<S> out = resize_bicubic(x.value(), oh, ow, antialias);
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn, ty, tx, c, h, w, oh, ow](Node<S>& nd) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        Tensor<S> dtmp({c, oh, w});
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    S g = nd.grad.at(ch, y, xx);
                    const S* wt = tx->weights.data() + tx->offset[xx];
                    for (int k = 0; k < tx->count[xx]; ++k)
                        dtmp.at(ch, y, reflect_clamp(tx->start[xx] + k, w)) += wt[k] * g;
                }
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < oh; ++y) {
                const S* wt = ty->weights.data() + ty->offset[y];
                for (int xx = 0; xx < w; ++xx) {
                    S g = dtmp.at(ch, y, xx);
                    for (int k = 0; k < ty->count[y]; ++k)
                        xn->grad.at(ch, reflect_clamp(ty->start[y] + k, h), xx) += wt[k] * g;
                }
            }
    });
}

// forward differences along x / y; outputs (C,H,W-1) / (C,H-1,W)
template <class S>
inline Var<S> diff_x(const Var<S>& x) {
    const int c = x.value().size(0), h = x.value().size(1), w = x.value().size(2);
    Tensor<S> out({c, h, w - 1});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx + 1 < w; ++xx)
                out.at(ch, y, xx) = x.value().at(ch, y, xx + 1) - x.value().at(ch, y, xx);
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn, c, h, w](Node<S>& nd) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx + 1 < w; ++xx) {
                    S g = nd.grad.at(ch, y, xx);
                    xn->grad.at(ch, y, xx + 1) += g;
                    xn->grad.at(ch, y, xx) -= g;
                }
    });
}

template <class S>
inline Var<S> diff_y(const Var<S>& x) {
    const int c = x.value().size(0), h = x.value().size(1), w = x.value().size(2);
    Tensor<S> out({c, h - 1, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y + 1 < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                out.at(ch, y, xx) = x.value().at(ch, y + 1, xx) - x.value().at(ch, y, xx);
    auto xn = x.node();
    return make_op<S>(std::move(out), {x}, [xn, c, h, w](Node<S>& nd) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y + 1 < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    S g = nd.grad.at(ch, y, xx);
                    xn->grad.at(ch, y + 1, xx) += g;
                    xn->grad.at(ch, y, xx) -= g;
                }
    });
}

}  // namespace ops
}  // namespace tovsr
