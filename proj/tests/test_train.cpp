#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "textovsr/evaltool.hpp"
#include "textovsr/train.hpp"
#include "test_helpers.hpp"

using namespace tovsr;
using namespace tovsr::testing;
namespace tr = tovsr::train;
namespace fs = std::filesystem;

static Config tiny_config() {
    Config cfg;
    cfg.generator.channels = 8;
    cfg.generator.num_blocks = 1;
    cfg.generator.heads = 2;
    cfg.generator.d_text = 16;
    cfg.generator.flow_backend = FlowBackend::zero;
    cfg.ted.base_channels = 8;
    cfg.ted.depth = 2;
    cfg.ted.d_text = 16;
    cfg.prompts.d_text = 16;
    cfg.train.seed = 77;
    cfg.train.iters = 6;
    cfg.train.batch = 1;
    cfg.train.crop_hr = 32;
    cfg.train.frames = 3;
    cfg.train.ckpt_every = 3;
    // gentle degradations keep the tiny dataset learnable
    cfg.degrade.order = 1;
    cfg.degrade.ranges["blur"] = {0.2, 1.2};
    cfg.degrade.ranges["noise"] = {0.002, 0.03};
    cfg.degrade.ranges["jpeg"] = {5.0, 20.0};
    cfg.degrade.ranges["video_compression"] = {1.0, 6.0};
    cfg.degrade.ranges["resize"] = {0.8, 1.25};
    return cfg;
}

struct TempDataset {
    fs::path root;
    Config cfg;
    explicit TempDataset(const Config& c, int clips = 2, int frames = 7, int size = 64)
        : root(fs::temp_directory_path() /
               ("tovsr_train_" + std::to_string(Rng(::time(nullptr)).next_u64() % 100000))),
          cfg(c) {
        tr::make_demo_dataset(root.string(), clips, frames, size, 123, cfg);
    }
    ~TempDataset() { fs::remove_all(root); }
};

TEST_CASE("make_sample: geometry, alignment, flip involution") {
    Config cfg = tiny_config();
    TempDataset tmp(cfg, 1, 7, 96);
    tr::Dataset ds(tmp.root.string());

    Rng rng(5);
    tr::Sample s = tr::make_sample(ds.clip(0), ds.noise_bank(), 7, 64, 0.3, rng);
    CHECK(s.hr.dims() == std::vector<int>({7, 3, 64, 64}));  // 7-frame samples
    CHECK(s.lr.dims() == std::vector<int>({7, 3, 16, 16}));
    CHECK(s.noisy_lr.dims() == s.lr.dims());
    CHECK(s.content_embs.size() == 7);
    CHECK(s.crop_x % 4 == 0);
    CHECK(s.crop_y % 4 == 0);

    SECTION("crop alignment beats shifted alternatives") {
        // the LR crop must match the bicubic downsample of the HR crop better
        // than any 1-2 px shifted LR crop
        const auto& clip = ds.clip(0);
        Tensorf hr_crop({3, 64, 64});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x)
                    hr_crop.at(c, y, x) =
                        clip.hr.frames.at(s.frame_start, c, s.crop_y + y,
                                          s.flipped ? s.crop_x + 63 - x : s.crop_x + x);
        Tensorf down = resize_bicubic(hr_crop, 16, 16);
        auto mse_vs = [&](int dx, int dy) {
            double acc = 0;
            long long cnt = 0;
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < 16; ++y)
                    for (int x = 0; x < 16; ++x) {
                        int sx = s.crop_x / 4 + (s.flipped ? 15 - x : x) + dx;
                        int sy = s.crop_y / 4 + y + dy;
                        if (sx < 0 || sx >= clip.lr.w() || sy < 0 || sy >= clip.lr.h())
                            continue;
                        double d = down.at(c, y, x) -
                                   clip.lr.frames.at(s.frame_start, c, sy, sx);
                        acc += d * d;
                        ++cnt;
                    }
            return acc / (double)cnt;
        };
        double aligned = mse_vs(0, 0);
        for (int dx = -2; dx <= 2; ++dx)
            for (int dy = -2; dy <= 2; ++dy) {
                if (dx == 0 && dy == 0) continue;
                CHECK(aligned < mse_vs(dx, dy));
            }
    }

    SECTION("flipping back reproduces the unflipped sample bit-exactly") {
        Rng r1(42), r2(42);
        tr::Sample a = tr::make_sample(ds.clip(0), ds.noise_bank(), 3, 32, 0.0, r1);
        tr::Sample b = tr::make_sample(ds.clip(0), ds.noise_bank(), 3, 32, 0.0, r2);
        REQUIRE(a.flipped == b.flipped);
        // flip a's tensors back and compare against a crop taken unflipped
        VideoClip wrap;
        wrap.frames = a.hr;
        Tensorf unflipped = tr::crop_frames(ds.clip(0).hr, a.frame_start, 3, a.crop_x,
                                            a.crop_y, 32, false);
        if (a.flipped) {
            for (int t = 0; t < 3; ++t) {
                Tensorf back = flip_horizontal(wrap.frame(t));
                for (long long i = 0; i < back.numel(); ++i)
                    REQUIRE(back[i] == unflipped[(long long)t * back.numel() + i]);
            }
        } else {
            for (long long i = 0; i < a.hr.numel(); ++i) REQUIRE(a.hr[i] == unflipped[i]);
        }
    }
}

TEST_CASE("dataset rejects misaligned clips") {
    Config cfg = tiny_config();
    TempDataset tmp(cfg, 1, 5, 64);
    // drop one lr frame
    fs::remove(tmp.root / "clips" / "clip0" / "lr" / "0004.png");
    CHECK_THROWS_AS(tr::Dataset(tmp.root.string()), tr::DatasetError);
}

TEST_CASE("ablation variants resolve to distinct parameter sets") {
    Config base = tiny_config();
    std::vector<std::set<std::string>> name_sets;
    for (const std::string v : {"V1", "V2", "V3", "V4", "V5", "V6"}) {
        Config cfg = tr::build_ablation(base, v);
        tr::Model model(cfg, 1);
        auto names = model.store.names();
        name_sets.emplace_back(names.begin(), names.end());
        if (v == "V1") {
            for (const auto& n : names) CHECK(n.find("drf") == std::string::npos);
        }
    }
    for (size_t i = 0; i < name_sets.size(); ++i)
        for (size_t j = i + 1; j < name_sets.size(); ++j) CHECK(name_sets[i] != name_sets[j]);

    // V5 and V6 differ only in the TED flag
    Config v5 = tr::build_ablation(base, "V5");
    Config v6 = tr::build_ablation(base, "V6");
    json j5 = to_json(v5), j6 = to_json(v6);
    CHECK(j5["generator"] == j6["generator"]);
    CHECK(j5["ted"]["mode"] == "unet");
    CHECK(j6["ted"]["mode"] == "ted");

    CHECK_THROWS_AS(tr::build_ablation(base, "V7"), ConfigError);
}

TEST_CASE("stage 1 trains the generator only, reproducibly") {
    Config cfg = tiny_config();
    TempDataset tmp(cfg);
    tr::Dataset ds(tmp.root.string());
    fs::path out = tmp.root / "run";

    tr::Model model(cfg, cfg.train.seed);
    std::vector<Tensorf> ted_before;
    for (auto& e : model.store.entries())
        if (e.name.rfind("ted/", 0) == 0) ted_before.push_back(e.var.value());

    tr::TrainResult res = tr::run_stage1(model, ds, out.string());
    REQUIRE((int)res.log.size() == cfg.train.iters);
    for (const auto& e : res.log) {
        CHECK(std::isfinite(e.total));
        CHECK(e.stage == 1);
        // stage-1 identity: total = rec + alpha*neg
        CHECK(std::abs(e.total - (e.rec + cfg.losses.alpha * e.neg)) < 1e-5);
    }

    size_t k = 0;
    for (auto& e : model.store.entries())
        if (e.name.rfind("ted/", 0) == 0) {
            const Tensorf& now = e.var.value();
            const Tensorf& before = ted_before[k++];
            for (long long i = 0; i < now.numel(); ++i) REQUIRE(now[i] == before[i]);
        }

    SECTION("same seed and config give a bitwise-identical loss log") {
        tr::Model m2(cfg, cfg.train.seed);
        tr::TrainResult r2 = tr::run_stage1(m2, ds, (tmp.root / "run2").string());
        REQUIRE(r2.log.size() == res.log.size());
        for (size_t i = 0; i < res.log.size(); ++i)
            REQUIRE(r2.log[i].to_jsonl() == res.log[i].to_jsonl());
    }

    SECTION("checkpoint round-trips to identical forward outputs") {
        tr::Model m2(cfg, 999);  // different init
        Checkpoint ckpt = load_checkpoint_file(res.checkpoint_path);
        load_into_store(m2.store, ckpt, "gen/");
        Rng rng(3);
        tr::Sample s = tr::make_sample(ds.clip(0), ds.noise_bank(), 3, 32,
                                       cfg.losses.lambda_mix, rng);
        NoGradGuard g;
        auto embs = [&](const tr::Model& m) {
            std::vector<Varf> out;
            for (auto& e : s.content_embs) {
                Tensorf t({(int)e.size()});
                for (size_t i = 0; i < e.size(); ++i) t[(long long)i] = e[i];
                out.push_back(Varf::leaf(std::move(t)));
            }
            return out;
        };
        auto o1 = model.gen->forward_positive(s.lr, embs(model));
        auto o2 = m2.gen->forward_positive(s.lr, embs(m2));
        for (size_t t = 0; t < o1.sr.size(); ++t)
            for (long long i = 0; i < o1.sr[t].value().numel(); ++i)
                REQUIRE(o1.sr[t].value()[i] == o2.sr[t].value()[i]);
    }

    SECTION("resume continues exactly where the run left off") {
        // uninterrupted 6-iteration reference is `model`; now run 3 + resume 3
        Config half = cfg;
        half.train.iters = 3;
        tr::Model m3(half, cfg.train.seed);
        tr::TrainResult r3 = tr::run_stage1(m3, ds, (tmp.root / "half").string());
        Config full = cfg;
        tr::Model m4(full, cfg.train.seed);
        tr::TrainResult r4 = tr::run_stage1(m4, ds, (tmp.root / "resumed").string(), "",
                                            r3.checkpoint_path);
        for (auto& e : m4.store.entries()) {
            auto* ref = model.store.find(e.name);
            REQUIRE(ref != nullptr);
            for (long long i = 0; i < e.var.value().numel(); ++i)
                REQUIRE(e.var.value()[i] == ref->var.value()[i]);
        }
    }
}

TEST_CASE("loss curves are bitwise-identical over 100 iterations") {
    Config cfg = tiny_config();
    cfg.train.iters = 100;
    cfg.train.ckpt_every = 1000;
    TempDataset tmp(cfg);
    tr::Dataset ds(tmp.root.string());

    tr::Model a(cfg, cfg.train.seed), b(cfg, cfg.train.seed);
    tr::TrainResult ra = tr::run_stage1(a, ds, (tmp.root / "a").string());
    tr::TrainResult rb = tr::run_stage1(b, ds, (tmp.root / "b").string());
    REQUIRE(ra.log.size() == 100);
    REQUIRE(rb.log.size() == 100);
    for (size_t i = 0; i < ra.log.size(); ++i)
        REQUIRE(ra.log[i].to_jsonl() == rb.log[i].to_jsonl());
}

TEST_CASE("shipped default config matches the in-code defaults") {
    std::ifstream f("data/default_config.json");
    REQUIRE(f.good());
    json shipped = json::parse(f);
    json code = to_json(Config{});
    code["version"] = 1;
    CHECK(shipped == code);
}

TEST_CASE("stage 2 alternates updates and keeps the loss-log identity") {
    Config cfg = tiny_config();
    cfg.train.iters = 4;
    TempDataset tmp(cfg);
    tr::Dataset ds(tmp.root.string());

    tr::Model m1(cfg, cfg.train.seed);
    tr::TrainResult s1 = tr::run_stage1(m1, ds, (tmp.root / "s1").string());

    tr::Model m2(cfg, cfg.train.seed + 1);
    auto snapshot = [&](const std::string& prefix) {
        std::vector<float> v;
        for (auto& e : m2.store.entries())
            if (e.name.rfind(prefix, 0) == 0 && e.trainable)
                for (long long i = 0; i < e.var.value().numel(); ++i)
                    v.push_back(e.var.value()[i]);
        return v;
    };
    tr::run_stage2(m2, ds, s1.checkpoint_path, (tmp.root / "s2").string());
    auto gen_before = snapshot("gen/");  // after load+train; compare with ckpt values

    // both parameter sets changed relative to the stage-1 checkpoint
    Checkpoint parent = load_checkpoint_file(s1.checkpoint_path);
    bool gen_changed = false, ted_changed = false;
    for (auto& e : m2.store.entries()) {
        const Checkpoint::Item* it = parent.find(e.name);
        if (!it || !e.trainable) continue;
        for (long long i = 0; i < e.var.value().numel(); ++i)
            if (e.var.value()[i] != it->tensor[i]) {
                if (e.name.rfind("gen/", 0) == 0) gen_changed = true;
                if (e.name.rfind("ted/", 0) == 0) ted_changed = true;
                break;
            }
    }
    CHECK(gen_changed);
    CHECK(ted_changed);

    // decomposition identity at every logged step
    tr::Model m3(cfg, cfg.train.seed + 2);
    tr::TrainResult s2 = tr::run_stage2(m3, ds, s1.checkpoint_path,
                                        (tmp.root / "s2b").string());
    REQUIRE(!s2.log.empty());
    for (const auto& e : s2.log) {
        CHECK(e.stage == 2);
        double stage1 = e.rec + cfg.losses.alpha * e.neg;
        double expect = stage1 + e.per + cfg.losses.beta * e.clipiqa + e.adv_g;
        CHECK(std::abs(e.total - expect) < 1e-5);
        CHECK(std::isfinite(e.adv_d));
    }

    CHECK_THROWS_AS(
        tr::run_stage2(m3, ds, (tmp.root / "nonexistent.ckpt").string(), "x"),
        tr::LineageError);
}
