#pragma once

#include <optional>

#include "textovsr/config.hpp"
#include "textovsr/nn.hpp"

namespace tovsr {

// Text-Enhanced Discriminator. A U-shaped extractor with spectral-normalized
// convolutions produces a full-resolution image feature; a sigmoid-gated
// linear filter selects text features, which are broadcast spatially,
// concatenated along channels and reduced to raw realness logits. mode
// selects the ablation variants: plain U-shape (no text), a frozen
// contrastive-pair scorer (direct image/text alignment), or the full TED.
template <class S>
class Ted {
public:
    Ted(ParamStore<S>& ps, const TedConfig& cfg, Rng& rng, const std::string& prefix = "ted")
        : cfg_(cfg) {
        cfg_.validate();
        if (cfg_.mode == TedMode::clip_pair) {
            // frozen image embedder for direct alignment scoring
            img_embed_.push_back(frozen_conv_(ps, prefix + "/clip_img/c0", 3, 16, rng));
            img_embed_.push_back(frozen_conv_(ps, prefix + "/clip_img/c1", 16, 32, rng));
            img_embed_.push_back(
                frozen_conv_(ps, prefix + "/clip_img/c2", 32, cfg_.d_text, rng));
            return;
        }
        const int bc = cfg_.base_channels;
        stem_.emplace(ps, prefix + "/stem", 3, bc, 3, rng);
        for (int i = 0; i < cfg_.depth; ++i)
            enc_.emplace_back(ps, prefix + "/enc" + std::to_string(i), width_(i), width_(i + 1),
                              3, rng, /*stride=*/2);
        for (int i = cfg_.depth - 1; i >= 0; --i)
            dec_.emplace_back(ps, prefix + "/dec" + std::to_string(i),
                              width_(i + 1) + width_(i), width_(i), 3, rng);
        if (cfg_.mode == TedMode::ted) {
            text_value_ = Linear<S>(ps, prefix + "/text/value", cfg_.d_text, bc, rng);
            text_gate_ = Linear<S>(ps, prefix + "/text/gate", cfg_.d_text, bc, rng);
        }
        int head_in = cfg_.mode == TedMode::ted ? 2 * bc : bc;
        head1_.emplace(ps, prefix + "/head1", head_in, bc, 3, rng);
        head2_.emplace(ps, prefix + "/head2", bc, 1, 3, rng);
    }

    const TedConfig& config() const { return cfg_; }

    // sigmoid-gated linear unit on the text embedding -> [base_channels]
    Var<S> text_filter(const Var<S>& text_emb) const {
        if (cfg_.mode != TedMode::ted) throw ConfigError("text filter requires ted mode");
        if ((int)text_emb.value().numel() != cfg_.d_text)
            throw ShapeError("text embedding dim != d_text");
        Var<S> row = ops::reshape(text_emb, {1, cfg_.d_text});
        Var<S> value = text_value_(row);
        Var<S> gate = ops::sigmoid(text_gate_(row));
        return ops::reshape(ops::mul(value, gate), {cfg_.base_channels});
    }

    // frame (3,H,W) with H, W divisible by 2^depth; text_emb may be undefined
    // in unet mode. Returns raw logits: (1,H,W) patch map, or [1] when the
    // configured output is scalar (the exact mean of the map).
    Var<S> discriminate(const Var<S>& frame, const Var<S>& text_emb, bool training) const {
        if (cfg_.mode == TedMode::clip_pair) return clip_pair_score_(frame, text_emb);
        const int h = frame.value().size(1), w = frame.value().size(2);
        int div = 1 << cfg_.depth;
        if (h % div != 0 || w % div != 0)
            throw ShapeError("frame dims must be divisible by 2^depth");

        std::vector<Var<S>> skips;
        Var<S> x = ops::leaky_relu((*stem_)(frame, training), (S)0.2);
        for (int i = 0; i < cfg_.depth; ++i) {
            skips.push_back(x);
            x = ops::leaky_relu(enc_[(size_t)i](x, training), (S)0.2);
        }
        for (int i = 0; i < cfg_.depth; ++i) {
            Var<S> up = ops::upsample_nearest2x(x);
            x = ops::leaky_relu(
                dec_[(size_t)i](ops::concat0(std::vector<Var<S>>{up, skips[(size_t)(cfg_.depth - 1 - i)]}),
                                training),
                (S)0.2);
        }
        if (cfg_.mode == TedMode::ted) {
            if (!text_emb.defined()) throw ConfigError("ted mode needs a text embedding");
            Var<S> filt = text_filter(text_emb);
            Var<S> tmap = ops::broadcast_vec_map(filt, h, w);
            x = ops::concat0(std::vector<Var<S>>{x, tmap});
        }
        Var<S> logits = (*head2_)(ops::leaky_relu((*head1_)(x, training), (S)0.2), training);
        if (cfg_.output == TedOutput::scalar) return ops::mean_all(logits);
        return logits;
    }

private:
    int width_(int level) const {
        return cfg_.base_channels * std::min(1 << level, 4);
    }

    struct FrozenConv {
        Var<S> w, b;
    };
    FrozenConv frozen_conv_(ParamStore<S>& ps, const std::string& prefix, int cin, int cout,
                            Rng& rng) const {
        FrozenConv c;
        c.w = ps.add(prefix + "/w", he_normal<S>({cout, cin, 3, 3}, (long long)cin * 9, rng),
                     /*trainable=*/false);
        c.b = ps.add(prefix + "/b", Tensor<S>({cout}), /*trainable=*/false);
        return c;
    }

    Var<S> clip_pair_score_(const Var<S>& frame, const Var<S>& text_emb) const {
        if (!text_emb.defined()) throw ConfigError("clip_pair mode needs a text embedding");
        Var<S> x = frame;
        for (const auto& c : img_embed_) {
            touch(c.w);
            touch(c.b);
            x = ops::leaky_relu(ops::conv2d(x, c.w, c.b, 2, 1), (S)0.2);
        }
        // global average pool per channel -> [d_text]
        const int ch = x.value().size(0);
        const int hw = x.value().size(1) * x.value().size(2);
        Var<S> pooled = ops::scale(
            ops::matmul(ops::reshape(x, {ch, hw}),
                        Var<S>::leaf(Tensor<S>({hw, 1}, S(1)))),
            S(1) / S(hw));  // [ch,1]
        Var<S> img = ops::reshape(pooled, {ch});
        Var<S> txt = ops::reshape(text_emb, {(int)text_emb.value().numel()});
        if ((int)txt.value().numel() != ch) throw ShapeError("clip_pair dim mismatch");
        Var<S> num = ops::dot(img, txt);
        Var<S> den = ops::sqrt_shift(
            ops::mul(ops::dot(img, img), ops::dot(txt, txt)), (S)1e-12);
        Var<S> cosine = ops::mul(num, ops::reciprocal(den));
        return ops::scale(cosine, (S)5);  // alignment logit
    }

    TedConfig cfg_;
    std::optional<SpectralConv<S>> stem_;
    std::vector<SpectralConv<S>> enc_, dec_;
    Linear<S> text_value_, text_gate_;
    std::optional<SpectralConv<S>> head1_, head2_;
    std::vector<FrozenConv> img_embed_;
};

}  // namespace tovsr
