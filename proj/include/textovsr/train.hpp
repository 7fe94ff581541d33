#pragma once

#include <cinttypes>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "textovsr/config.hpp"
#include "textovsr/degrade.hpp"
#include "textovsr/generator.hpp"
#include "textovsr/losses.hpp"
#include "textovsr/prompts.hpp"
#include "textovsr/serialize.hpp"
#include "textovsr/ted.hpp"

namespace tovsr::train {

struct DatasetError : std::runtime_error {
    explicit DatasetError(const std::string& m) : std::runtime_error("dataset error: " + m) {}
};
struct LineageError : std::runtime_error {
    explicit LineageError(const std::string& m) : std::runtime_error("lineage error: " + m) {}
};

// ---- dataset -----------------------------------------------------------------------

struct ClipData {
    std::string id;
    VideoClip hr, lr;
    degrade::DegradationRecord record;
    prompts::PromptPack pack;
};

// Root layout: clips/<id>/{hr/NNNN.png, lr/NNNN.png, degradation.json,
// prompts.json, prompts.embd}, noise_bank/*.png
class Dataset {
public:
    explicit Dataset(const std::string& root) : root_(root) {
        namespace fs = std::filesystem;
        fs::path clips = fs::path(root) / "clips";
        if (!fs::is_directory(clips)) throw DatasetError("no clips/ under " + root);
        std::vector<std::string> ids;
        for (auto& e : fs::directory_iterator(clips))
            if (e.is_directory()) ids.push_back(e.path().filename().string());
        std::sort(ids.begin(), ids.end());
        for (const auto& id : ids) {
            fs::path dir = clips / id;
            ClipData c;
            c.id = id;
            c.hr = read_clip_dir((dir / "hr").string(), id);
            c.lr = read_clip_dir((dir / "lr").string(), id);
            c.record = degrade::read_record((dir / "degradation.json").string());
            c.pack = prompts::read_prompt_pack(dir.string());
            if (c.hr.n() != c.lr.n())
                throw DatasetError("clip " + id + ": hr has " + std::to_string(c.hr.n()) +
                                   " frames, lr has " + std::to_string(c.lr.n()));
            if ((int)c.pack.content_texts.size() != c.hr.n())
                throw DatasetError("clip " + id + ": caption count mismatch");
            clips_.push_back(std::move(c));
        }
        if (clips_.empty()) throw DatasetError("no clips found under " + root);
        bank_ = degrade::NoiseBank((fs::path(root) / "noise_bank").string());
    }

    size_t size() const { return clips_.size(); }
    const ClipData& clip(size_t i) const { return clips_.at(i); }
    const degrade::NoiseBank& noise_bank() const { return bank_; }
    const std::string& root() const { return root_; }

private:
    std::string root_;
    std::vector<ClipData> clips_;
    degrade::NoiseBank bank_;
};

// ---- samples -------------------------------------------------------------------------

struct Sample {
    Tensorf hr;        // (n,3,S,S)
    Tensorf lr;        // (n,3,S/4,S/4)
    Tensorf noisy_lr;  // (n,3,S/4,S/4)
    std::vector<std::vector<float>> content_embs;
    std::vector<float> deg_emb;
    std::vector<degrade::MixInfo> mix;  // per-frame noise patch choice + offset
    bool flipped = false;
    int clip_index = 0, frame_start = 0, crop_x = 0, crop_y = 0;
};

inline Tensorf crop_frames(const VideoClip& clip, int t0, int n, int x, int y, int size,
                           bool flip) {
    Tensorf out({n, clip.c(), size, size});
    for (int t = 0; t < n; ++t)
        for (int c = 0; c < clip.c(); ++c)
            for (int yy = 0; yy < size; ++yy)
                for (int xx = 0; xx < size; ++xx)
                    out.at(t, c, yy, xx) = clip.frames.at(
                        t0 + t, c, y + yy, flip ? x + size - 1 - xx : x + xx);
    return out;
}

// Aligned random crop (HR at (x,y), LR at (x/4,y/4)), identical horizontal
// flip across frames and resolutions, noise mixing for the negative branch.
inline Sample make_sample(const ClipData& clip, const degrade::NoiseBank& bank, int frames,
                          int crop_hr, double lambda_mix, Rng& rng, int clip_index = 0) {
    const int scale = 4;
    if (clip.hr.n() != clip.lr.n()) throw DatasetError("clip frame counts misaligned");
    if (clip.hr.h() < crop_hr || clip.hr.w() < crop_hr)
        throw DatasetError("hr frames smaller than the crop");
    int n = std::min(frames, clip.hr.n());
    Sample s;
    s.clip_index = clip_index;
    s.frame_start = rng.uniform_int(clip.hr.n() - n + 1);
    s.crop_x = scale * rng.uniform_int((clip.hr.w() - crop_hr) / scale + 1);
    s.crop_y = scale * rng.uniform_int((clip.hr.h() - crop_hr) / scale + 1);
    s.flipped = rng.uniform() < 0.5;

    s.hr = crop_frames(clip.hr, s.frame_start, n, s.crop_x, s.crop_y, crop_hr, s.flipped);
    s.lr = crop_frames(clip.lr, s.frame_start, n, s.crop_x / scale, s.crop_y / scale,
                       crop_hr / scale, s.flipped);

    VideoClip lrclip;
    lrclip.frames = s.lr;
    VideoClip noisy = degrade::mix_noise(lrclip, bank, lambda_mix, rng, &s.mix);
    s.noisy_lr = noisy.frames;

    for (int t = 0; t < n; ++t)
        s.content_embs.push_back(clip.pack.content_embeddings.at((size_t)(s.frame_start + t)));
    if (clip.pack.has_degradation) s.deg_emb = clip.pack.degradation_embedding;
    return s;
}

// ---- optimizer -----------------------------------------------------------------------

class Adam {
public:
    explicit Adam(double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {}

    void step(ParamStore<float>& store, const std::string& prefix) {
        ++t_;
        double c1 = 1.0 - std::pow(b1_, (double)t_);
        double c2 = 1.0 - std::pow(b2_, (double)t_);
        for (auto& e : store.entries()) {
            if (!e.trainable || e.name.rfind(prefix, 0) != 0) continue;
            if (!e.var.has_grad()) continue;
            Tensorf& p = e.var.value();
            Tensorf& g = e.var.grad();
            auto [mi, vi] = slot_(e.name, p);
            Tensorf& m = moments_m_[mi].second;
            Tensorf& v = moments_v_[vi].second;
            for (long long i = 0; i < p.numel(); ++i) {
                m[i] = (float)(b1_ * m[i] + (1.0 - b1_) * g[i]);
                v[i] = (float)(b2_ * v[i] + (1.0 - b2_) * (double)g[i] * g[i]);
                double mh = m[i] / c1, vh = v[i] / c2;
                p[i] -= (float)(lr_ * mh / (std::sqrt(vh) + eps_));
            }
        }
    }

    double lr() const { return lr_; }
    long long steps() const { return t_; }

    void append_to(Checkpoint& ckpt, const std::string& tag) const {
        ckpt.meta["optim"][tag]["t"] = t_;
        ckpt.meta["optim"][tag]["lr"] = lr_;
        for (const auto& [name, m] : moments_m_)
            ckpt.tensors.push_back({"optim/" + tag + "/m/" + name, m, false});
        for (const auto& [name, v] : moments_v_)
            ckpt.tensors.push_back({"optim/" + tag + "/v/" + name, v, false});
    }
    void restore_from(const Checkpoint& ckpt, const std::string& tag) {
        if (!ckpt.meta.contains("optim") || !ckpt.meta["optim"].contains(tag)) return;
        t_ = ckpt.meta["optim"][tag]["t"].get<long long>();
        moments_m_.clear();
        moments_v_.clear();
        std::string mp = "optim/" + tag + "/m/", vp = "optim/" + tag + "/v/";
        for (const auto& it : ckpt.tensors) {
            if (it.name.rfind(mp, 0) == 0)
                moments_m_.push_back({it.name.substr(mp.size()), it.tensor});
            else if (it.name.rfind(vp, 0) == 0)
                moments_v_.push_back({it.name.substr(vp.size()), it.tensor});
        }
    }

private:
    std::pair<size_t, size_t> slot_(const std::string& name, const Tensorf& like) {
        for (size_t i = 0; i < moments_m_.size(); ++i)
            if (moments_m_[i].first == name) return {i, i};
        moments_m_.push_back({name, Tensorf(like.dims())});
        moments_v_.push_back({name, Tensorf(like.dims())});
        return {moments_m_.size() - 1, moments_v_.size() - 1};
    }

    double lr_, b1_, b2_, eps_;
    long long t_ = 0;
    std::vector<std::pair<std::string, Tensorf>> moments_m_, moments_v_;
};

// ---- model bundle ----------------------------------------------------------------------

struct Model {
    ParamStore<float> store;
    std::optional<Generator<float>> gen;
    std::optional<Ted<float>> ted;
    Config cfg;

    Model(const Config& config, uint64_t init_seed) : cfg(config) {
        Rng rng(Rng::mix(init_seed, 0x0DE1));
        gen.emplace(store, cfg.generator, rng);
        ted.emplace(store, cfg.ted, rng);
    }
};

// Table-3 rows plus the TED flag. V1 = baseline (dual branch, no DRF, plain
// UNet discriminator); V6 = full method.
inline Config build_ablation(Config cfg, const std::string& variant) {
    auto& g = cfg.generator;
    if (variant == "V1") {
        g.drf_pos_mode = DrfMode::none;
        g.drf_neg_mode = DrfMode::none;
        cfg.ted.mode = TedMode::unet;
    } else if (variant == "V2") {  // w/o T,N: image-filter DRF, negative branch only
        g.drf_pos_mode = DrfMode::none;
        g.drf_neg_mode = DrfMode::image_only;
        cfg.ted.mode = TedMode::unet;
    } else if (variant == "V3") {  // w T_D: degradation text only
        g.drf_pos_mode = DrfMode::none;
        g.drf_neg_mode = DrfMode::full;
        cfg.ted.mode = TedMode::unet;
    } else if (variant == "V4") {  // w/o T: both branches, no text
        g.drf_pos_mode = DrfMode::image_only;
        g.drf_neg_mode = DrfMode::image_only;
        cfg.ted.mode = TedMode::unet;
    } else if (variant == "V5") {  // w T_D & T_C
        g.drf_pos_mode = DrfMode::full;
        g.drf_neg_mode = DrfMode::full;
        cfg.ted.mode = TedMode::unet;
    } else if (variant == "V6") {  // V5 + TED
        g.drf_pos_mode = DrfMode::full;
        g.drf_neg_mode = DrfMode::full;
        cfg.ted.mode = TedMode::ted;
    } else {
        throw ConfigError("unknown ablation variant " + variant +
                          " (expected V1..V6)");
    }
    return cfg;
}

// ---- logging ----------------------------------------------------------------------------

struct LogEntry {
    int iter = 0, stage = 1;
    double rec = 0, neg = 0, per = 0, clipiqa = 0, adv_g = 0, adv_d = 0, total = 0;

    std::string to_jsonl() const {
        char buf[512];
        std::snprintf(buf, sizeof(buf),
                      "{\"iter\":%d,\"stage\":%d,\"rec\":%.17g,\"neg\":%.17g,\"per\":%.17g,"
                      "\"clipiqa\":%.17g,\"adv_g\":%.17g,\"adv_d\":%.17g,\"total\":%.17g}",
                      iter, stage, rec, neg, per, clipiqa, adv_g, adv_d, total);
        return buf;
    }
};

class TrainLogger {
public:
    explicit TrainLogger(const std::string& path = "") {
        if (!path.empty()) {
            std::filesystem::create_directories(
                std::filesystem::path(path).parent_path().empty()
                    ? "."
                    : std::filesystem::path(path).parent_path().string());
            out_.open(path);
            if (!out_) throw IoError("cannot open training log " + path);
        }
    }
    void log(const LogEntry& e) {
        entries_.push_back(e);
        if (out_) out_ << e.to_jsonl() << "\n" << std::flush;
    }
    const std::vector<LogEntry>& entries() const { return entries_; }

private:
    std::ofstream out_;
    std::vector<LogEntry> entries_;
};

// ---- training stages ---------------------------------------------------------------------

struct TrainResult {
    std::string checkpoint_path;
    std::vector<LogEntry> log;
    int iterations = 0;
};

inline json checkpoint_meta(const Model& model, int stage, int iteration, uint64_t rng_state,
                            const json& lineage) {
    json meta;
    meta["format"] = "textovsr-checkpoint";
    meta["stage"] = stage;
    meta["iteration"] = iteration;
    meta["config"] = to_json(model.cfg);
    meta["rng_state"] = rng_state;
    meta["lineage"] = lineage;
    return meta;
}

inline std::string ckpt_name(const std::string& dir, int stage, int iter) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "/stage%d_iter%06d.ckpt", stage, iter);
    return dir + buf;
}

namespace traindetail {

inline std::vector<Varf> frame_vars(const Tensorf& clip) {
    std::vector<Varf> out;
    const int n = clip.size(0);
    long long stride = clip.numel() / n;
    for (int t = 0; t < n; ++t) {
        Tensorf f({clip.size(1), clip.size(2), clip.size(3)});
        for (long long i = 0; i < stride; ++i) f[i] = clip[(long long)t * stride + i];
        out.push_back(Varf::leaf(std::move(f)));
    }
    return out;
}

inline std::vector<Varf> emb_vars(const std::vector<std::vector<float>>& embs) {
    std::vector<Varf> out;
    for (const auto& e : embs) {
        Tensorf t({(int)e.size()});
        for (size_t i = 0; i < e.size(); ++i) t[(long long)i] = e[i];
        out.push_back(Varf::leaf(std::move(t)));
    }
    return out;
}

inline Varf emb_var(const std::vector<float>& e) {
    Tensorf t({(int)e.size()});
    for (size_t i = 0; i < e.size(); ++i) t[(long long)i] = e[i];
    return Varf::leaf(std::move(t));
}

}  // namespace traindetail

// Stage 1: reconstruction + negative constraint, generator parameters only.
inline TrainResult run_stage1(Model& model, const Dataset& dataset, const std::string& out_dir,
                              const std::string& log_path = "",
                              const std::string& resume = "") {
    using namespace traindetail;
    const TrainConfig& tc = model.cfg.train;
    const LossConfig& lc = model.cfg.losses;
    TrainLogger logger(log_path);
    Adam adam(tc.lr_stage1);
    Rng master(Rng::mix(tc.seed, 0x11AA));

    int start_iter = 1;
    if (!resume.empty()) {
        Checkpoint prev = load_checkpoint_file(resume);
        if (prev.meta.value("stage", 0) != 1)
            throw LineageError("stage-1 resume needs a stage-1 checkpoint: " + resume);
        load_into_store(model.store, prev);
        adam.restore_from(prev, "gen");
        master.set_state(prev.meta.value("rng_state", master.state()));
        start_iter = prev.meta.value("iteration", 0) + 1;
    }

    std::string last_ckpt;
    for (int iter = start_iter; iter <= tc.iters; ++iter) {
        std::vector<Varf> totals, recs, negs;
        for (int b = 0; b < tc.batch; ++b) {
            Rng srng = master.fork(((uint64_t)iter << 8) | (uint64_t)b);
            int ci = srng.uniform_int((int)dataset.size());
            Sample s = make_sample(dataset.clip((size_t)ci), dataset.noise_bank(), tc.frames,
                                   tc.crop_hr, lc.lambda_mix, srng, ci);

            auto pos = model.gen->forward_positive(s.lr, emb_vars(s.content_embs));
            auto neg = model.gen->forward_negative(s.noisy_lr, emb_var(s.deg_emb));
            auto gt = frame_vars(s.hr);

            Varf rec = losses::rec_loss(pos.sr, gt, (float)lc.charbonnier_eps);
            Varf ngl = losses::neg_loss(pos.sr, neg.sr, lc.neg_detach);
            recs.push_back(rec);
            negs.push_back(ngl);
            totals.push_back(losses::stage1_total(rec, ngl, (float)lc.alpha));
        }
        Varf total = losses::mean_of(totals);
        if (!std::isfinite((double)total.item()))
            throw NumericError("NaN/Inf stage-1 loss at iteration " + std::to_string(iter));
        backward(total);
        adam.step(model.store, "gen/");
        model.store.zero_grads();

        LogEntry e;
        e.iter = iter;
        e.stage = 1;
        e.rec = losses::mean_of(recs).item();
        e.neg = losses::mean_of(negs).item();
        e.total = total.item();
        logger.log(e);

        if (iter % tc.ckpt_every == 0 || iter == tc.iters) {
            Checkpoint ckpt = checkpoint_from_store(
                model.store,
                checkpoint_meta(model, 1, iter, master.state(), json{{"source", "init"}}));
            adam.append_to(ckpt, "gen");
            last_ckpt = ckpt_name(out_dir, 1, iter);
            save_checkpoint(last_ckpt, ckpt);
        }
    }
    return {last_ckpt, logger.entries(), tc.iters};
}

// Stage 2: GAN fine-tuning from a stage-1 checkpoint; alternating 1:1
// discriminator/generator updates.
inline TrainResult run_stage2(Model& model, const Dataset& dataset,
                              const std::string& stage1_ckpt, const std::string& out_dir,
                              const std::string& log_path = "",
                              const std::string& resume = "") {
    using namespace traindetail;
    const TrainConfig& tc = model.cfg.train;
    const LossConfig& lc = model.cfg.losses;

    Checkpoint parent;
    try {
        parent = load_checkpoint_file(resume.empty() ? stage1_ckpt : resume);
    } catch (const IoError& e) {
        throw LineageError("stage-2 needs a stage-1 checkpoint: " + std::string(e.what()));
    }
    if (!parent.meta.contains("stage"))
        throw LineageError("checkpoint has no stage field: " + stage1_ckpt);
    load_into_store(model.store, parent, "gen/");
    if (parent.meta["stage"].get<int>() >= 2) load_into_store(model.store, parent, "ted/");

    TrainLogger logger(log_path);
    Adam adam_g(tc.lr_stage2), adam_d(tc.lr_stage2);
    Rng master(Rng::mix(tc.seed, 0x22BB));
    losses::PerceptualExtractor<float> perceptual;
    losses::ContrastProxyScorer<float> scorer((float)lc.proxy_gain);

    json lineage = {{"source", stage1_ckpt},
                    {"stage", parent.meta["stage"]},
                    {"iteration", parent.meta.value("iteration", 0)}};

    int start_iter = 1;
    if (!resume.empty()) {
        if (parent.meta.value("stage", 0) != 2)
            throw LineageError("stage-2 resume needs a stage-2 checkpoint: " + resume);
        adam_g.restore_from(parent, "gen");
        adam_d.restore_from(parent, "ted");
        master.set_state(parent.meta.value("rng_state", master.state()));
        start_iter = parent.meta.value("iteration", 0) + 1;
        lineage = parent.meta.value("lineage", lineage);
    }

    std::string last_ckpt;
    for (int iter = start_iter; iter <= tc.iters; ++iter) {
        std::vector<Varf> rec_t, neg_t, per_t, iqa_t, advg_t, advd_t, gtotal_t;
        for (int b = 0; b < tc.batch; ++b) {
            Rng srng = master.fork(((uint64_t)iter << 8) | (uint64_t)b);
            int ci = srng.uniform_int((int)dataset.size());
            Sample s = make_sample(dataset.clip((size_t)ci), dataset.noise_bank(), tc.frames,
                                   tc.crop_hr, lc.lambda_mix, srng, ci);

            auto embs = emb_vars(s.content_embs);
            auto pos = model.gen->forward_positive(s.lr, embs);
            auto negb = model.gen->forward_negative(s.noisy_lr, emb_var(s.deg_emb));
            auto gt = frame_vars(s.hr);

            // discriminator update (fakes detached inside adv_loss_d)
            Varf d_loss = losses::adv_loss_d(gt, pos.sr, embs, *model.ted, true);
            advd_t.push_back(d_loss);
            backward(d_loss);
            adam_d.step(model.store, "ted/");
            model.store.zero_grads();

            // generator update against the refreshed discriminator
            Varf rec = losses::rec_loss(pos.sr, gt, (float)lc.charbonnier_eps);
            Varf ngl = losses::neg_loss(pos.sr, negb.sr, lc.neg_detach);
            Varf stage1 = losses::stage1_total(rec, ngl, (float)lc.alpha);
            Varf per = losses::perceptual_loss(pos.sr, gt, perceptual);
            Varf iqa = losses::clipiqa_loss(pos.sr, scorer);
            Varf advg = losses::adv_loss_g(pos.sr, embs, *model.ted, true);
            Varf total = losses::stage2_total(stage1, per, iqa, advg, (float)lc.beta);
            if (!std::isfinite((double)total.item()))
                throw NumericError("NaN/Inf stage-2 loss at iteration " +
                                   std::to_string(iter));
            backward(total);
            adam_g.step(model.store, "gen/");
            model.store.zero_grads();

            rec_t.push_back(rec);
            neg_t.push_back(ngl);
            per_t.push_back(per);
            iqa_t.push_back(iqa);
            advg_t.push_back(advg);
            gtotal_t.push_back(total);
        }

        LogEntry e;
        e.iter = iter;
        e.stage = 2;
        e.rec = losses::mean_of(rec_t).item();
        e.neg = losses::mean_of(neg_t).item();
        e.per = losses::mean_of(per_t).item();
        e.clipiqa = losses::mean_of(iqa_t).item();
        e.adv_g = losses::mean_of(advg_t).item();
        e.adv_d = losses::mean_of(advd_t).item();
        e.total = losses::mean_of(gtotal_t).item();
        logger.log(e);

        if (iter % tc.ckpt_every == 0 || iter == tc.iters) {
            Checkpoint ckpt = checkpoint_from_store(
                model.store, checkpoint_meta(model, 2, iter, master.state(), lineage));
            adam_g.append_to(ckpt, "gen");
            adam_d.append_to(ckpt, "ted");
            last_ckpt = ckpt_name(out_dir, 2, iter);
            save_checkpoint(last_ckpt, ckpt);
        }
    }
    return {last_ckpt, logger.entries(), tc.iters};
}

// ---- demo data ------------------------------------------------------------------------

// Procedural textured frame used by the demo-dataset tool and the scaled
// training experiment: multiscale bands plus a moving block.
inline Tensorf demo_frame(int h, int w, uint64_t seed, int t) {
    Tensorf img({3, h, w});
    Rng rng(seed);
    double ph[4][2];
    for (auto& row : ph) {
        row[0] = rng.uniform(0.0, 6.28318);
        row[1] = rng.uniform(0.0, 6.28318);
    }
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
    int bx = (int)((seed + 5 * (uint64_t)t) % (uint64_t)std::max(1, w - 12));
    int by = (int)((seed / 7 + 3 * (uint64_t)t) % (uint64_t)std::max(1, h - 12));
    for (int y = by; y < by + 10 && y < h; ++y)
        for (int x = bx; x < bx + 10 && x < w; ++x) {
            img.at(0, y, x) = 0.9f;
            img.at(1, y, x) = 0.2f;
            img.at(2, y, x) = 0.25f;
        }
    return img;
}

// Synthesizes a complete training root: HR clips, degraded LR (pipeline +
// sidecar), prompt sidecars from the built-in providers, and a noise bank.
inline void make_demo_dataset(const std::string& root, int n_clips, int frames, int hr_size,
                              uint64_t seed, const Config& cfg) {
    namespace fs = std::filesystem;
    prompts::TemplateCaptionProvider provider;
    prompts::HashTextEncoder encoder(cfg.prompts.d_text);
    prompts::EmbeddingCache cache(encoder);

    for (int ci = 0; ci < n_clips; ++ci) {
        std::string id = "clip" + std::to_string(ci);
        std::vector<Tensorf> hr_frames;
        for (int t = 0; t < frames; ++t) {
            Tensorf f = demo_frame(hr_size, hr_size, Rng::mix(seed, (uint64_t)ci), t);
            for (long long i = 0; i < f.numel(); ++i)
                f[i] = std::round(f[i] * 255.0f) / 255.0f;  // quantize like the PNG on disk
            hr_frames.push_back(std::move(f));
        }
        VideoClip hr = VideoClip::from_frames(hr_frames, id);

        auto rec = degrade::sample_pipeline(Rng::mix(seed, 0xC11Full + (uint64_t)ci),
                                            cfg.degrade.order, cfg.degrade);
        VideoClip lr = degrade::degrade_clip(hr, rec, cfg.degrade.downscale);

        fs::path dir = fs::path(root) / "clips" / id;
        write_clip_dir((dir / "hr").string(), hr);
        write_clip_dir((dir / "lr").string(), lr);
        degrade::write_record((dir / "degradation.json").string(), rec);
        auto pack = prompts::build_prompt_pack(hr, &rec, provider, cache, cfg.prompts.batch,
                                               cfg.prompts.granularity);
        prompts::write_prompt_pack(dir.string(), pack);
    }

    // zero-mean-ish noise patches around mid gray
    Rng nrng(Rng::mix(seed, 0xBA11));
    for (int i = 0; i < 4; ++i) {
        Tensorf patch({3, 64, 64});
        for (long long j = 0; j < patch.numel(); ++j)
            patch[j] = (float)std::clamp(0.5 + 0.08 * nrng.normal(), 0.0, 1.0);
        char name[32];
        std::snprintf(name, sizeof(name), "/noise_bank/patch%02d.png", i);
        write_png(root + name, patch);
    }
}

}  // namespace tovsr::train
