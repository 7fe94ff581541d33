#pragma once

#include <optional>

#include "textovsr/config.hpp"
#include "textovsr/nn.hpp"

namespace tovsr {

// Degradation-Robust Feature Fusion. The image feature is filtered by
// multi-head self-attention over the flattened spatial grid, the text vector
// by a linear map onto key/value tokens, and a multi-head cross-attention
// (Query from image, Key/Value from text) produces the fused map. Residual
// connections wrap both attention blocks. image_only mode keeps just the
// self-attention half (the "w/o T" ablation rows).
template <class S>
class Drf {
public:
    struct AttnRecord {
        std::vector<Tensor<S>> self_probs;   // one [N,N] per head
        std::vector<Tensor<S>> cross_probs;  // one [N,T] per head
    };

    Drf() = default;
    Drf(ParamStore<S>& ps, const std::string& prefix, const DrfConfig& cfg, DrfMode mode,
        Rng& rng)
        : cfg_(cfg), mode_(mode) {
        cfg_.validate();
        if (mode == DrfMode::none) throw ConfigError("DRF constructed with mode none");
        const int c = cfg.channels;
        self_q_ = Linear<S>(ps, prefix + "/self/q", c, c, rng);
        self_k_ = Linear<S>(ps, prefix + "/self/k", c, c, rng);
        self_v_ = Linear<S>(ps, prefix + "/self/v", c, c, rng);
        self_o_ = Linear<S>(ps, prefix + "/self/o", c, c, rng, true, 0.1);
        if (mode == DrfMode::full) {
            text_filter_ =
                Linear<S>(ps, prefix + "/text/filter", cfg.d_text, cfg.tokens_per_text * c, rng);
            cross_q_ = Linear<S>(ps, prefix + "/cross/q", c, c, rng);
            cross_k_ = Linear<S>(ps, prefix + "/cross/k", c, c, rng);
            cross_v_ = Linear<S>(ps, prefix + "/cross/v", c, c, rng);
            cross_o_ = Linear<S>(ps, prefix + "/cross/o", c, c, rng, true, 0.1);
        }
    }

    const DrfConfig& config() const { return cfg_; }
    DrfMode mode() const { return mode_; }

    // (C,h,w) -> (C,h,w): f + MHSA(tokens(f))
    Var<S> filter_image(const Var<S>& f, AttnRecord* rec = nullptr) const {
        check_map(f);
        if (!f.value().all_finite()) throw NumericError("non-finite DRF input feature");
        const int h = f.value().size(1), w = f.value().size(2);
        Var<S> x = ops::tokens_from_map(f);
        Var<S> att = scaled_attention(self_q_(x), self_k_(x), self_v_(x), cfg_.heads,
                                      rec ? &rec->self_probs : nullptr);
        return ops::add(f, ops::map_from_tokens(self_o_(att), h, w));
    }

    // [d_text] -> [tokens_per_text, C]
    Var<S> filter_text(const Var<S>& t) const {
        if (mode_ != DrfMode::full) throw ConfigError("text filter unavailable in this mode");
        if ((int)t.value().numel() != cfg_.d_text)
            throw ShapeError("text vector dim " + std::to_string(t.value().numel()) +
                             " != d_text " + std::to_string(cfg_.d_text));
        Var<S> row = ops::reshape(t, {1, cfg_.d_text});
        Var<S> tok = text_filter_(row);  // [1, tokens*C]
        return ops::reshape(tok, {cfg_.tokens_per_text, cfg_.channels});
    }

    // Query from the (filtered) image feature, Key/Value from text tokens;
    // residual back onto the image feature.
    Var<S> cross_fuse(const Var<S>& f_img, const Var<S>& text_tokens,
                      AttnRecord* rec = nullptr) const {
        if (mode_ != DrfMode::full) throw ConfigError("cross fusion unavailable in this mode");
        check_map(f_img);
        if (text_tokens.value().size(1) != cfg_.channels)
            throw ShapeError("text token width != channels");
        const int h = f_img.value().size(1), w = f_img.value().size(2);
        Var<S> x = ops::tokens_from_map(f_img);
        Var<S> att =
            scaled_attention(cross_q_(x), cross_k_(text_tokens), cross_v_(text_tokens),
                             cfg_.heads, rec ? &rec->cross_probs : nullptr);
        return ops::add(f_img, ops::map_from_tokens(cross_o_(att), h, w));
    }

    // full: cross_fuse(filter_image(f), filter_text(t)); image_only: filter_image(f)
    Var<S> forward(const Var<S>& f, const Var<S>& text, AttnRecord* rec = nullptr) const {
        Var<S> filtered = filter_image(f, rec);
        if (mode_ == DrfMode::image_only) return filtered;
        return cross_fuse(filtered, filter_text(text), rec);
    }

private:
    void check_map(const Var<S>& f) const {
        if (f.value().rank() != 3 || f.value().size(0) != cfg_.channels)
            throw ShapeError("DRF expects (" + std::to_string(cfg_.channels) + ",h,w), got " +
                             shape_str(f.value()));
    }

    DrfConfig cfg_;
    DrfMode mode_ = DrfMode::full;
    Linear<S> self_q_, self_k_, self_v_, self_o_;
    Linear<S> text_filter_;
    Linear<S> cross_q_, cross_k_, cross_v_, cross_o_;
};

}  // namespace tovsr
