#pragma once

#include <optional>

#include "textovsr/degrade.hpp"
#include "textovsr/drf.hpp"
#include "textovsr/flow.hpp"
#include "textovsr/nn.hpp"
#include "textovsr/prompts.hpp"

namespace tovsr {

// Dual-branch recurrent x4 super-resolution network. Both branches share the
// propagation trunk by default and differ in their DRF instance and where it
// applies: the positive branch fuses content text before deep propagation,
// the negative branch fuses degradation text after it (configurable).
//
// Per frame: a residual module extracts shallow features; DRF fuses text;
// backward-pass features are computed first and concatenated into the forward
// pass together with the fused feature and the flow-warped previous hidden
// state; the reconstruction head (two pixel-shuffle x2 stages plus a bicubic
// skip) emits the frame.

template <class S>
struct BranchOutput {
    std::vector<Var<S>> sr;         // per frame (3, 4h, 4w), unclamped
    std::vector<Tensor<S>> hidden;  // per-frame forward features when traced
};

template <class S>
class Generator {
public:
    struct Trunk {
        Conv<S> conv_in;
        std::vector<ResBlock<S>> shallow_blocks;
        ResStage<S> prop_b;  // 2C -> C
        ResStage<S> prop_f;  // 3C -> C
        Conv<S> up1, up2, hr_conv, out_conv;
        int channels = 0;

        Trunk(ParamStore<S>& ps, const std::string& p, const GeneratorConfig& cfg, Rng& rng)
            : conv_in(ps, p + "/shallow/conv_in", 3, cfg.channels, 3, rng),
              prop_b(ps, p + "/prop_b", 2 * cfg.channels, cfg.channels, cfg.num_blocks, rng),
              prop_f(ps, p + "/prop_f", 3 * cfg.channels, cfg.channels, cfg.num_blocks, rng),
              up1(ps, p + "/head/up1", cfg.channels, 4 * cfg.channels, 3, rng),
              up2(ps, p + "/head/up2", cfg.channels, 4 * cfg.channels, 3, rng),
              hr_conv(ps, p + "/head/hr", cfg.channels, hr_ch(cfg), 3, rng),
              // near-zero projection: the network starts close to the bicubic skip
              out_conv(ps, p + "/head/out", hr_ch(cfg), 3, 3, rng, 1, true, 0.01),
              channels(cfg.channels) {
            for (int i = 0; i < cfg.num_blocks; ++i)
                shallow_blocks.emplace_back(ps, p + "/shallow/block" + std::to_string(i),
                                            cfg.channels, rng);
        }
        static int hr_ch(const GeneratorConfig& cfg) { return std::max(8, cfg.channels / 2); }

        Var<S> shallow(const Var<S>& frame) const {
            Var<S> h = ops::leaky_relu(conv_in(frame));
            for (const auto& b : shallow_blocks) h = b(h);
            return h;
        }
        // pixel-shuffle x2 twice, then the 3-channel projection + bicubic skip
        Var<S> head(const Var<S>& feat, const Var<S>& frame) const {
            Var<S> u = ops::leaky_relu(ops::pixel_shuffle(up1(feat), 2));
            u = ops::leaky_relu(ops::pixel_shuffle(up2(u), 2));
            u = ops::leaky_relu(hr_conv(u));
            Var<S> out = out_conv(u);
            Var<S> skip = ops::resize_bicubic_var(frame, out.value().size(1),
                                                  out.value().size(2), false);
            return ops::add(out, skip);
        }
    };

    Generator(ParamStore<S>& ps, const GeneratorConfig& cfg, Rng& rng,
              const std::string& prefix = "gen")
        : cfg_(cfg), flow_(cfg.flow_backend) {
        cfg_.validate();
        trunk_pos_.emplace(ps, prefix + "/trunk", cfg_, rng);
        if (!cfg_.share_trunk) trunk_neg_.emplace(ps, prefix + "/neg_trunk", cfg_, rng);
        if (cfg_.drf_pos_mode != DrfMode::none)
            drf_pos_.emplace(ps, prefix + "/drf_pos", cfg_.drf(), cfg_.drf_pos_mode, rng);
        if (cfg_.drf_neg_mode != DrfMode::none)
            drf_neg_.emplace(ps, prefix + "/drf_neg", cfg_.drf(), cfg_.drf_neg_mode, rng);
    }

    const GeneratorConfig& config() const { return cfg_; }
    const Drf<S>* drf_pos() const { return drf_pos_ ? &*drf_pos_ : nullptr; }
    const Drf<S>* drf_neg() const { return drf_neg_ ? &*drf_neg_ : nullptr; }
    const Trunk& trunk(bool negative = false) const {
        return negative && trunk_neg_ ? *trunk_neg_ : *trunk_pos_;
    }

    void set_flow_source(FlowSource<S> src) { flow_ = std::move(src); }
    const FlowSource<S>& flow_source() const { return flow_; }

    // (c,h,w) in [0,1] -> (channels,h,w)
    Var<S> shallow_features(const Var<S>& frame) const { return trunk_pos_->shallow(frame); }

    // One recurrence step: fused ++ warp(prev, flow) -> residual stage. prev
    // may be undefined (zero hidden state at sequence ends).
    Var<S> propagate_step(bool forward_pass, const Var<S>& prev, const Tensor<S>& flow,
                          const Var<S>& fused, bool negative = false) const {
        const ResStage<S>& stage = forward_pass ? trunk(negative).prop_f
                                                : trunk(negative).prop_b;
        const int h = fused.value().size(1), w = fused.value().size(2);
        Var<S> warped = prev.defined()
                            ? ops::warp_bilinear(prev, flow)
                            : Var<S>::leaf(Tensor<S>({cfg_.channels, h, w}));
        return stage(ops::concat0(std::vector<Var<S>>{fused, warped}));
    }

    // Recurrences over per-frame conditioning stacks, exposed for the
    // causality probe. Forward conditioning is 2C wide (fused ++ backward
    // feature), backward conditioning is C wide.
    std::vector<Var<S>> forward_recurrence(const std::vector<Var<S>>& cond,
                                           const std::vector<Tensor<S>>& flow_from_prev,
                                           bool negative = false) const {
        return recurrence_(cond, flow_from_prev, /*forward=*/true, negative);
    }
    std::vector<Var<S>> backward_recurrence(const std::vector<Var<S>>& cond,
                                            const std::vector<Tensor<S>>& flow_from_next,
                                            bool negative = false) const {
        return recurrence_(cond, flow_from_next, /*forward=*/false, negative);
    }

    BranchOutput<S> forward_positive(const Tensor<S>& clip,
                                     const std::vector<Var<S>>& content_embs,
                                     bool trace = false) const {
        if (cfg_.drf_pos_mode == DrfMode::full && (int)content_embs.size() != clip.size(0))
            throw ConfigError("positive branch needs one content embedding per frame");
        return run_branch_(clip, content_embs, drf_pos(), DrfPosition::before_deep,
                           /*negative=*/false, trace);
    }

    BranchOutput<S> forward_negative(const Tensor<S>& clip, const Var<S>& degradation_emb,
                                     bool trace = false) const {
        if (cfg_.drf_neg_mode == DrfMode::full && !degradation_emb.defined())
            throw ConfigError("negative branch needs the degradation embedding");
        std::vector<Var<S>> embs((size_t)clip.size(0), degradation_emb);
        return run_branch_(clip, embs, drf_neg(), cfg_.drf_negative_position,
                           /*negative=*/true, trace);
    }

    // Inference: positive branch only, evaluation mode, chunked propagation
    // state, output clamped to [0,1] at emission.
    VideoClip infer(const VideoClip& lr, const prompts::PromptPack& pack) const {
        static_assert(std::is_same_v<S, float>, "inference runs on the float model");
        NoGradGuard eval;
        const int n = lr.n(), h = lr.h(), w = lr.w();
        if (cfg_.drf_pos_mode == DrfMode::full &&
            (int)pack.content_embeddings.size() != n)
            throw ConfigError("prompt pack frame count mismatch");

        std::vector<Tensor<S>> flows_fwd((size_t)n), flows_bwd((size_t)n);
        std::vector<Tensor<S>> frames((size_t)n);
        for (int t = 0; t < n; ++t) frames[(size_t)t] = lr.frame(t);
        for (int t = 1; t < n; ++t)
            flows_fwd[(size_t)t] =
                flow_.estimate(frames[(size_t)t], frames[(size_t)t - 1], t, t - 1);
        for (int t = 0; t + 1 < n; ++t)
            flows_bwd[(size_t)t] =
                flow_.estimate(frames[(size_t)t], frames[(size_t)t + 1], t, t + 1);

        auto fused_at = [&](int t) {
            Var<S> f = trunk_pos_->shallow(Var<S>::leaf(frames[(size_t)t]));
            if (drf_pos()) {
                Var<S> emb;
                if (drf_pos()->mode() == DrfMode::full) {
                    Tensor<S> e({cfg_.d_text});
                    for (int i = 0; i < cfg_.d_text; ++i)
                        e[i] = pack.content_embeddings[(size_t)t][(size_t)i];
                    emb = Var<S>::leaf(std::move(e));
                }
                f = drf_pos()->forward(f, emb);
            }
            return f;
        };
        auto step_b = [&](const Var<S>& prev, int t, const Var<S>& fused) {
            return propagate_step(false, prev, prev.defined() ? flows_bwd[(size_t)t]
                                                              : Tensor<S>{},
                                  fused);
        };

        const int K = std::max(1, cfg_.chunk_size);
        const int nchunks = (n + K - 1) / K;
        // pass 1: reverse scan keeping only chunk-boundary backward states
        std::vector<Tensor<S>> boundary((size_t)nchunks);
        if (nchunks > 1) {
            Var<S> hb;
            for (int t = n - 1; t >= 0; --t) {
                hb = step_b(hb, t, fused_at(t));
                if (t % K == 0) boundary[(size_t)(t / K)] = hb.value();
            }
        }

        VideoClip out;
        out.frames = Tensorf({n, 3, cfg_.scale * h, cfg_.scale * w});
        out.id = lr.id;
        out.fps = lr.fps;

        Var<S> hf;
        for (int ck = 0; ck < nchunks; ++ck) {
            const int t0 = ck * K, t1 = std::min(n, t0 + K);
            std::vector<Var<S>> fused((size_t)(t1 - t0));
            for (int t = t0; t < t1; ++t) fused[(size_t)(t - t0)] = fused_at(t);
            // backward states inside the chunk, seeded from the next boundary
            std::vector<Var<S>> hb((size_t)(t1 - t0));
            Var<S> seed;
            if (ck + 1 < nchunks)
                seed = Var<S>::leaf(boundary[(size_t)(ck + 1)]);
            for (int t = t1 - 1; t >= t0; --t) {
                seed = step_b(seed, t, fused[(size_t)(t - t0)]);
                hb[(size_t)(t - t0)] = seed;
            }
            for (int t = t0; t < t1; ++t) {
                Var<S> cond = ops::concat0(std::vector<Var<S>>{fused[(size_t)(t - t0)], hb[(size_t)(t - t0)]});
                hf = propagate_step(true, hf, hf.defined() ? flows_fwd[(size_t)t] : Tensor<S>{},
                                    cond);
                Var<S> sr = trunk_pos_->head(hf, Var<S>::leaf(frames[(size_t)t]));
                Tensor<S> img = sr.value();
                clamp01_inplace(img);
                out.set_frame(t, img);
            }
        }
        return out;
    }

private:
    std::vector<Var<S>> recurrence_(const std::vector<Var<S>>& cond,
                                    const std::vector<Tensor<S>>& flow_from_prev, bool forward,
                                    bool negative) const {
        const int n = (int)cond.size();
        std::vector<Var<S>> out((size_t)n);
        Var<S> prev;
        for (int i = 0; i < n; ++i) {
            int t = forward ? i : n - 1 - i;
            out[(size_t)t] = propagate_step(forward, prev,
                                            prev.defined() ? flow_from_prev[(size_t)t]
                                                           : Tensor<S>{},
                                            cond[(size_t)t], negative);
            prev = out[(size_t)t];
        }
        return out;
    }

    BranchOutput<S> run_branch_(const Tensor<S>& clip, const std::vector<Var<S>>& embs,
                                const Drf<S>* drf, DrfPosition pos, bool negative,
                                bool trace) const {
        if (clip.rank() != 4) throw ShapeError("clip must be (n,c,h,w)");
        const int n = clip.size(0), c = clip.size(1), h = clip.size(2), w = clip.size(3);
        const Trunk& tr = trunk(negative);

        std::vector<Var<S>> frames((size_t)n);
        for (int t = 0; t < n; ++t) {
            Tensor<S> f({c, h, w});
            long long stride = f.numel();
            for (long long i = 0; i < stride; ++i) f[i] = clip[(long long)t * stride + i];
            frames[(size_t)t] = Var<S>::leaf(std::move(f));
        }

        std::vector<Tensor<S>> flows_fwd((size_t)n), flows_bwd((size_t)n);
        for (int t = 1; t < n; ++t)
            flows_fwd[(size_t)t] = flow_.estimate(frames[(size_t)t].value(),
                                                  frames[(size_t)t - 1].value(), t, t - 1);
        for (int t = 0; t + 1 < n; ++t)
            flows_bwd[(size_t)t] = flow_.estimate(frames[(size_t)t].value(),
                                                  frames[(size_t)t + 1].value(), t, t + 1);

        std::vector<Var<S>> fused((size_t)n);
        for (int t = 0; t < n; ++t) {
            Var<S> f = tr.shallow(frames[(size_t)t]);
            if (drf && pos == DrfPosition::before_deep)
                f = drf->forward(f, embs.empty() ? Var<S>{} : embs[(size_t)t]);
            fused[(size_t)t] = f;
        }

        std::vector<Var<S>> hb = recurrence_(fused, flows_bwd, /*forward=*/false, negative);
        std::vector<Var<S>> cond((size_t)n);
        for (int t = 0; t < n; ++t)
            cond[(size_t)t] = ops::concat0(std::vector<Var<S>>{fused[(size_t)t], hb[(size_t)t]});
        std::vector<Var<S>> hf = recurrence_(cond, flows_fwd, /*forward=*/true, negative);

        BranchOutput<S> out;
        for (int t = 0; t < n; ++t) {
            Var<S> feat = hf[(size_t)t];
            if (drf && pos == DrfPosition::after_deep)
                feat = drf->forward(feat, embs.empty() ? Var<S>{} : embs[(size_t)t]);
            if (trace) out.hidden.push_back(feat.value());
            out.sr.push_back(tr.head(feat, frames[(size_t)t]));
        }
        return out;
    }

    GeneratorConfig cfg_;
    FlowSource<S> flow_;
    std::optional<Trunk> trunk_pos_, trunk_neg_;
    std::optional<Drf<S>> drf_pos_, drf_neg_;
};

}  // namespace tovsr
