#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "textovsr/ops.hpp"
#include "textovsr/rng.hpp"

namespace tovsr {

// Named parameter registry. Modules register their tensors here so the
// trainer, checkpointer and the access-tracing tests all see one flat view.
template <class S>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Var<S> var;
        bool trainable = true;
    };

    Var<S> add(const std::string& name, Tensor<S> init, bool trainable = true) {
        if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
        Var<S> v = Var<S>::leaf(std::move(init), trainable);
        index_[name] = entries_.size();
        entries_.push_back({name, v, trainable});
        return v;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    Entry* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &entries_[it->second];
    }

    std::vector<std::string> names(const std::string& prefix = "") const {
        std::vector<std::string> out;
        for (const auto& e : entries_)
            if (e.name.rfind(prefix, 0) == 0) out.push_back(e.name);
        return out;
    }

    void zero_grads() {
        for (auto& e : entries_)
            if (e.var.has_grad()) e.var.grad().fill(S(0));
    }

    void reset_access() {
        for (auto& e : entries_) e.var.node()->access_count = 0;
    }
    uint64_t access_count(const std::string& prefix) const {
        uint64_t n = 0;
        for (const auto& e : entries_)
            if (e.name.rfind(prefix, 0) == 0) n += e.var.node()->access_count;
        return n;
    }

    long long total_scalars(const std::string& prefix = "") const {
        long long n = 0;
        for (const auto& e : entries_)
            if (e.name.rfind(prefix, 0) == 0) n += e.var.value().numel();
        return n;
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

template <class S>
inline Tensor<S> he_normal(std::vector<int> dims, long long fan_in, Rng& rng, double gain = 1.0) {
    Tensor<S> t(std::move(dims));
    double std = gain * std::sqrt(2.0 / (double)fan_in);
    for (long long i = 0; i < t.numel(); ++i) t[i] = (S)(rng.normal() * std);
    return t;
}

// ---- layers -----------------------------------------------------------------

template <class S>
struct Linear {
    Var<S> w, b;
    Linear() = default;
    Linear(ParamStore<S>& ps, const std::string& prefix, int din, int dout, Rng& rng,
           bool bias = true, double gain = 1.0) {
        w = ps.add(prefix + "/w", he_normal<S>({dout, din}, din, rng, gain));
        if (bias) b = ps.add(prefix + "/b", Tensor<S>({dout}));
    }
    Var<S> operator()(const Var<S>& x) const {
        touch(w);
        if (b.defined()) touch(b);
        return ops::linear(x, w, b);
    }
};

template <class S>
struct Conv {
    Var<S> w, b;
    int stride = 1, pad = 1;
    Conv() = default;
    Conv(ParamStore<S>& ps, const std::string& prefix, int cin, int cout, int k, Rng& rng,
         int stride_ = 1, bool bias = true, double gain = 1.0)
        : stride(stride_), pad(k / 2) {
        w = ps.add(prefix + "/w",
                   he_normal<S>({cout, cin, k, k}, (long long)cin * k * k, rng, gain));
        if (bias) b = ps.add(prefix + "/b", Tensor<S>({cout}));
    }
    Var<S> operator()(const Var<S>& x) const {
        touch(w);
        if (b.defined()) touch(b);
        return ops::conv2d(x, w, b, stride, pad);
    }
};

// conv-lrelu-conv with identity skip; the residual tail starts small so deep
// stacks stay near the identity at init
template <class S>
struct ResBlock {
    Conv<S> c1, c2;
    ResBlock() = default;
    ResBlock(ParamStore<S>& ps, const std::string& prefix, int ch, Rng& rng)
        : c1(ps, prefix + "/conv1", ch, ch, 3, rng),
          c2(ps, prefix + "/conv2", ch, ch, 3, rng, 1, true, 0.1) {}
    Var<S> operator()(const Var<S>& x) const {
        return ops::add(x, c2(ops::leaky_relu(c1(x))));
    }
};

// entry conv (possibly widening or narrowing) followed by residual blocks
template <class S>
struct ResStage {
    Conv<S> reduce;
    std::vector<ResBlock<S>> blocks;
    ResStage() = default;
    ResStage(ParamStore<S>& ps, const std::string& prefix, int cin, int cout, int nblocks,
             Rng& rng)
        : reduce(ps, prefix + "/reduce", cin, cout, 3, rng) {
        for (int i = 0; i < nblocks; ++i)
            blocks.emplace_back(ps, prefix + "/block" + std::to_string(i), cout, rng);
    }
    Var<S> operator()(const Var<S>& x) const {
        Var<S> h = ops::leaky_relu(reduce(x));
        for (const auto& b : blocks) h = b(h);
        return h;
    }
};

// ---- attention ----------------------------------------------------------------

// Scaled dot-product attention over already-projected tokens.
// q [Nq,C], k [Nk,C], v [Nk,C]; heads splits the channel dim. When
// record_probs is set the per-head probability matrices are stored (tests
// check row normalization). Without gradients or recording, a fused
// row-blocked path avoids materializing the full [Nq,Nk] map.
template <class S>
inline Var<S> scaled_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, int heads,
                               std::vector<Tensor<S>>* record_probs = nullptr) {
    const int nq = q.value().size(0), c = q.value().size(1), nk = k.value().size(0);
    if (c % heads != 0) throw ShapeError("channels not divisible by heads");
    const int dh = c / heads;
    const S att_scale = (S)(1.0 / std::sqrt((double)dh));

    bool need_graph = grad_enabled() && (q.requires_grad() || k.requires_grad() ||
                                         v.requires_grad());
    if (!need_graph && !record_probs) {
        using CStride = Eigen::Map<const EMat<S>, 0, Eigen::OuterStride<>>;
        using MStride = Eigen::Map<EMat<S>, 0, Eigen::OuterStride<>>;
        Tensor<S> out({nq, c});
        const int blk = 256;
        for (int hd = 0; hd < heads; ++hd) {
            const int c0 = hd * dh;
            CStride qh(q.value().data() + c0, nq, dh, Eigen::OuterStride<>(c));
            CStride kh(k.value().data() + c0, nk, dh, Eigen::OuterStride<>(c));
            CStride vh(v.value().data() + c0, nk, dh, Eigen::OuterStride<>(c));
            MStride oh(out.data() + c0, nq, dh, Eigen::OuterStride<>(c));
            const int nblocks = (nq + blk - 1) / blk;
#pragma omp parallel for schedule(static)
            for (int bi = 0; bi < nblocks; ++bi) {
                int r0 = bi * blk;
                int rn = std::min(blk, nq - r0);
                EMat<S> scores = qh.middleRows(r0, rn) * kh.transpose() * att_scale;
                Eigen::Array<S, Eigen::Dynamic, 1> mx = scores.rowwise().maxCoeff();
                scores.colwise() -= mx.matrix();
                scores = scores.array().exp().matrix();
                Eigen::Array<S, Eigen::Dynamic, 1> sums = scores.rowwise().sum();
                scores.array().colwise() /= sums;
                oh.middleRows(r0, rn) = scores * vh;
            }
        }
        return Var<S>::leaf(std::move(out), false);
    }

    std::vector<Var<S>> head_outs;
    for (int hd = 0; hd < heads; ++hd) {
        Var<S> qh = ops::col_slice(q, hd * dh, (hd + 1) * dh);
        Var<S> kh = ops::col_slice(k, hd * dh, (hd + 1) * dh);
        Var<S> vh = ops::col_slice(v, hd * dh, (hd + 1) * dh);
        Var<S> scores = ops::scale(ops::matmul(qh, ops::transpose2d(kh)), att_scale);
        Var<S> probs = ops::softmax_rows(scores);
        if (record_probs) record_probs->push_back(probs.value());
        head_outs.push_back(ops::matmul(probs, vh));
    }
    return ops::concat_cols(head_outs);
}

// ---- spectral normalization ------------------------------------------------------

// Conv whose weight is divided by its leading singular value, estimated by
// power iteration. The u/v buffers are persistent state (serialized with the
// checkpoint, not trained); they advance only when `training` is true so
// evaluation stays a fixed function.
template <class S>
struct SpectralConv {
    Var<S> w, b;
    Var<S> u;  // [cout], non-trainable buffer
    int stride = 1, pad = 1;

    SpectralConv() = default;
    SpectralConv(ParamStore<S>& ps, const std::string& prefix, int cin, int cout, int k,
                 Rng& rng, int stride_ = 1)
        : stride(stride_), pad(k / 2) {
        w = ps.add(prefix + "/w", he_normal<S>({cout, cin, k, k}, (long long)cin * k * k, rng));
        b = ps.add(prefix + "/b", Tensor<S>({cout}));
        Tensor<S> u0({cout});
        double nrm = 0;
        for (int i = 0; i < cout; ++i) {
            u0[i] = (S)rng.normal();
            nrm += (double)u0[i] * (double)u0[i];
        }
        nrm = std::sqrt(std::max(nrm, 1e-12));
        for (int i = 0; i < cout; ++i) u0[i] = (S)((double)u0[i] / nrm);
        u = ps.add(prefix + "/sn_u", std::move(u0), /*trainable=*/false);
    }

    Var<S> operator()(const Var<S>& x, bool training) const {
        touch(w);
        touch(b);
        touch(u);
        const int cout = w.value().size(0);
        const long long K = w.value().numel() / cout;

        // power iteration on the flattened weight (plain tensor math)
        Tensor<S> vvec({(int)K});
        {
            ECMap<S> wm(w.value().data(), cout, (int)K);
            Eigen::Matrix<S, Eigen::Dynamic, 1> uvec((int)cout);
            for (int i = 0; i < cout; ++i) uvec(i) = u.value()[i];
            Eigen::Matrix<S, Eigen::Dynamic, 1> vv = wm.transpose() * uvec;
            S vn = std::max(vv.norm(), (S)1e-12);
            vv /= vn;
            if (training) {
                Eigen::Matrix<S, Eigen::Dynamic, 1> uu = wm * vv;
                S un = std::max(uu.norm(), (S)1e-12);
                uu /= un;
                for (int i = 0; i < cout; ++i) u.value()[i] = uu(i);
            }
            for (long long i = 0; i < K; ++i) vvec[i] = vv((int)i);
        }

        // sigma = u^T W v with u, v treated as constants
        Var<S> wflat = ops::reshape(w, {cout, (int)K});
        Var<S> vc = Var<S>::leaf(vvec.reshaped({(int)K, 1}), false);
        Var<S> wv = ops::matmul(wflat, vc);  // [cout,1]
        Var<S> uc = Var<S>::leaf(u.value().reshaped({cout, 1}), false);
        Var<S> sigma = ops::add_const(ops::dot(uc, wv), (S)1e-12);  // guards W = 0
        Var<S> w_sn = ops::scale_by(w, ops::reciprocal(sigma));
        return ops::conv2d(x, w_sn, b, stride, pad);
    }
};

}  // namespace tovsr
