#pragma once

#include <vector>

#include "textovsr/config.hpp"
#include "textovsr/ops.hpp"
#include "textovsr/ted.hpp"

namespace tovsr::losses {

// All terms return scalar [1] vars; clip-level overloads average per-frame
// values so single-frame and clip calls agree.

// mean sqrt((a-b)^2 + eps^2)
template <class S>
inline Var<S> rec_loss(const Var<S>& sr, const Var<S>& gt, S eps = (S)1e-6) {
    if (!sr.value().same_shape(gt.value())) throw ShapeError("rec_loss shape mismatch");
    return ops::mean_all(ops::sqrt_shift(ops::square(ops::sub(sr, gt)), eps * eps));
}

template <class S>
inline Var<S> mean_of(const std::vector<Var<S>>& scalars) {
    if (scalars.empty()) throw ShapeError("mean_of nothing");
    Var<S> acc = scalars[0];
    for (size_t i = 1; i < scalars.size(); ++i) acc = ops::add(acc, scalars[i]);
    return ops::scale(acc, S(1) / (S)scalars.size());
}

template <class S>
inline Var<S> rec_loss(const std::vector<Var<S>>& sr, const std::vector<Var<S>>& gt,
                       S eps = (S)1e-6) {
    if (sr.size() != gt.size()) throw ShapeError("rec_loss frame count mismatch");
    std::vector<Var<S>> terms;
    for (size_t i = 0; i < sr.size(); ++i) terms.push_back(rec_loss(sr[i], gt[i], eps));
    return mean_of(terms);
}

// mean |neg - pos| with the positive side detached by default
template <class S>
inline Var<S> neg_loss(const Var<S>& sr_pos, const Var<S>& sr_neg,
                       NegDetach detach = NegDetach::positive) {
    if (!sr_pos.value().same_shape(sr_neg.value())) throw ShapeError("neg_loss shape mismatch");
    Var<S> pos = detach == NegDetach::positive ? sr_pos.detach() : sr_pos;
    return ops::mean_all(ops::abs(ops::sub(sr_neg, pos)));
}

template <class S>
inline Var<S> neg_loss(const std::vector<Var<S>>& sr_pos, const std::vector<Var<S>>& sr_neg,
                       NegDetach detach = NegDetach::positive) {
    if (sr_pos.size() != sr_neg.size()) throw ShapeError("neg_loss frame count mismatch");
    std::vector<Var<S>> terms;
    for (size_t i = 0; i < sr_pos.size(); ++i)
        terms.push_back(neg_loss(sr_pos[i], sr_neg[i], detach));
    return mean_of(terms);
}

// ---- quality scorer ------------------------------------------------------------

// Differentiable image-quality score in [0,1], higher is better.
template <class S>
class QualityScorer {
public:
    virtual ~QualityScorer() = default;
    virtual Var<S> score(const Var<S>& frame) const = 0;
};

template <class S>
class ConstScorer : public QualityScorer<S> {
public:
    explicit ConstScorer(S v) : v_(v) {}
    Var<S> score(const Var<S>& frame) const override {
        Var<S> zero = ops::scale(ops::mean_all(frame), S(0));
        return ops::add_const(zero, v_);  // keeps the graph differentiable
    }

private:
    S v_;
};

// Built-in proxy: 1 - exp(-gain * mean(|dx| + |dy|)). Monotone in local
// contrast, so removing blur raises the score.
template <class S>
class ContrastProxyScorer : public QualityScorer<S> {
public:
    explicit ContrastProxyScorer(S gain = (S)12) : gain_(gain) {}
    Var<S> score(const Var<S>& frame) const override {
        Var<S> gx = ops::mean_all(ops::abs(ops::diff_x(frame)));
        Var<S> gy = ops::mean_all(ops::abs(ops::diff_y(frame)));
        Var<S> g = ops::scale(ops::add(gx, gy), -gain_);
        return ops::sub(ops::add_const(ops::scale(g, S(0)), S(1)), ops::exp(g));
    }

private:
    S gain_;
};

// 1 - mean frame score
template <class S>
inline Var<S> clipiqa_loss(const std::vector<Var<S>>& frames, const QualityScorer<S>& scorer) {
    std::vector<Var<S>> scores;
    for (const auto& f : frames) scores.push_back(scorer.score(f));
    Var<S> mean = mean_of(scores);
    return ops::sub(ops::add_const(ops::scale(mean, S(0)), S(1)), mean);
}

// ---- perceptual loss ---------------------------------------------------------------

// Frozen random-feature extractor: three strided conv layers seeded from a
// fixed value; features from the last two layers.
template <class S>
class PerceptualExtractor {
public:
    explicit PerceptualExtractor(uint64_t seed = 0x5EED) {
        Rng rng(seed);
        w1_ = Var<S>::leaf(he_normal<S>({8, 3, 3, 3}, 27, rng));
        w2_ = Var<S>::leaf(he_normal<S>({16, 8, 3, 3}, 72, rng));
        w3_ = Var<S>::leaf(he_normal<S>({16, 16, 3, 3}, 144, rng));
    }
    std::vector<Var<S>> features(const Var<S>& img) const {
        Var<S> h1 = ops::leaky_relu(ops::conv2d(img, w1_, Var<S>{}, 2, 1), (S)0.2);
        Var<S> h2 = ops::leaky_relu(ops::conv2d(h1, w2_, Var<S>{}, 2, 1), (S)0.2);
        Var<S> h3 = ops::conv2d(h2, w3_, Var<S>{}, 1, 1);
        return {h2, h3};
    }

private:
    Var<S> w1_, w2_, w3_;
};

template <class S>
inline Var<S> perceptual_loss(const Var<S>& sr, const Var<S>& gt,
                              const PerceptualExtractor<S>& extractor) {
    if (!sr.value().same_shape(gt.value()))
        throw ShapeError("perceptual_loss shape mismatch");
    auto fa = extractor.features(sr);
    auto fb = extractor.features(gt);
    std::vector<Var<S>> terms;
    for (size_t i = 0; i < fa.size(); ++i)
        terms.push_back(ops::mean_all(ops::square(ops::sub(fa[i], fb[i]))));
    return mean_of(terms);
}

template <class S>
inline Var<S> perceptual_loss(const std::vector<Var<S>>& sr, const std::vector<Var<S>>& gt,
                              const PerceptualExtractor<S>& extractor) {
    std::vector<Var<S>> terms;
    for (size_t i = 0; i < sr.size(); ++i)
        terms.push_back(perceptual_loss(sr[i], gt[i], extractor));
    return mean_of(terms);
}

// ---- adversarial pair ----------------------------------------------------------------

// generator term: -E[log sigmoid(TED(sr, text))] = E[softplus(-logits)]
template <class S>
inline Var<S> adv_loss_g(const Var<S>& frame, const Var<S>& text_emb, const Ted<S>& ted,
                         bool training = true) {
    return ops::mean_all(ops::softplus(ops::neg(ted.discriminate(frame, text_emb, training))));
}

template <class S>
inline Var<S> adv_loss_g(const std::vector<Var<S>>& frames,
                         const std::vector<Var<S>>& text_embs, const Ted<S>& ted,
                         bool training = true) {
    std::vector<Var<S>> terms;
    for (size_t i = 0; i < frames.size(); ++i)
        terms.push_back(adv_loss_g(frames[i], text_embs[i], ted, training));
    return mean_of(terms);
}

// discriminator term: -E[log s(real)] - E[log(1 - s(fake))]; fakes detached
template <class S>
inline Var<S> adv_loss_d(const Var<S>& real, const Var<S>& fake, const Var<S>& text_emb,
                         const Ted<S>& ted, bool training = true) {
    Var<S> lr_ = ops::mean_all(
        ops::softplus(ops::neg(ted.discriminate(real, text_emb, training))));
    Var<S> lf_ =
        ops::mean_all(ops::softplus(ted.discriminate(fake.detach(), text_emb, training)));
    return ops::add(lr_, lf_);
}

template <class S>
inline Var<S> adv_loss_d(const std::vector<Var<S>>& real, const std::vector<Var<S>>& fake,
                         const std::vector<Var<S>>& text_embs, const Ted<S>& ted,
                         bool training = true) {
    std::vector<Var<S>> terms;
    for (size_t i = 0; i < real.size(); ++i)
        terms.push_back(adv_loss_d(real[i], fake[i], text_embs[i], ted, training));
    return mean_of(terms);
}

// ---- stage totals -----------------------------------------------------------------

template <class S>
inline Var<S> stage1_total(const Var<S>& rec, const Var<S>& neg, S alpha) {
    return ops::add(rec, ops::scale(neg, alpha));
}

template <class S>
inline Var<S> stage2_total(const Var<S>& stage1, const Var<S>& per, const Var<S>& clipiqa,
                           const Var<S>& adv, S beta) {
    return ops::add(ops::add(stage1, per), ops::add(ops::scale(clipiqa, beta), adv));
}

}  // namespace tovsr::losses
