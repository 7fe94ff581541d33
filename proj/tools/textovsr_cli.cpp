// textovsr command-line interface: degradation synthesis, captioning,
// two-stage training, inference, evaluation, and ablation configs.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "textovsr/evaltool.hpp"
#include "textovsr/train.hpp"

namespace fs = std::filesystem;
using namespace tovsr;

static Config load_config(const std::string& path, uint64_t seed_override, bool seed_set) {
    Config cfg;
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot read config " + path);
        from_json_into(json::parse(f), cfg);
    }
    if (seed_set) cfg.train.seed = seed_override;
    return cfg;
}

static int cmd_degrade(const std::string& root, const Config& cfg) {
    fs::path clips = fs::path(root) / "clips";
    if (!fs::is_directory(clips)) throw IoError("no clips/ under " + root);
    std::vector<std::string> ids;
    for (auto& e : fs::directory_iterator(clips))
        if (e.is_directory() && fs::is_directory(e.path() / "hr"))
            ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw IoError("no clips/<id>/hr directories under " + root);

    for (size_t i = 0; i < ids.size(); ++i) {
        fs::path dir = clips / ids[i];
        VideoClip hr = read_clip_dir((dir / "hr").string(), ids[i]);
        auto rec = degrade::sample_pipeline(Rng::mix(cfg.train.seed, (uint64_t)i),
                                            cfg.degrade.order, cfg.degrade);
        VideoClip lr = degrade::degrade_clip(hr, rec, cfg.degrade.downscale);
        write_clip_dir((dir / "lr").string(), lr);
        degrade::write_record((dir / "degradation.json").string(), rec);
        std::printf("degraded %s: %dx%d -> %dx%d, \"%s\"\n", ids[i].c_str(), hr.h(), hr.w(),
                    lr.h(), lr.w(), rec.text.c_str());
    }
    return 0;
}

static int cmd_caption(const std::string& root, const Config& cfg,
                       const std::string& provider_kind) {
    std::unique_ptr<prompts::CaptionProvider> provider;
    if (provider_kind == "template") {
        provider = std::make_unique<prompts::TemplateCaptionProvider>();
    } else if (provider_kind == "http") {
        std::string url = prompts::HttpCaptionProvider::url_from_env();
        if (url.empty())
            throw ConfigError(std::string("http provider needs ") +
                              prompts::HttpCaptionProvider::env_url_var());
        provider = std::make_unique<prompts::HttpCaptionProvider>(
            url, cfg.prompts.http_timeout_s, cfg.prompts.http_retries);
    } else {
        throw ConfigError("unknown caption provider " + provider_kind);
    }
    prompts::HashTextEncoder encoder(cfg.prompts.d_text);
    prompts::EmbeddingCache cache(encoder);

    fs::path clips = fs::path(root) / "clips";
    std::vector<std::string> ids;
    for (auto& e : fs::directory_iterator(clips))
        if (e.is_directory()) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());

    for (const auto& id : ids) {
        fs::path dir = clips / id;
        VideoClip hr = read_clip_dir((dir / "hr").string(), id);
        std::optional<degrade::DegradationRecord> rec;
        if (fs::exists(dir / "degradation.json"))
            rec = degrade::read_record((dir / "degradation.json").string());
        auto pack = prompts::build_prompt_pack(hr, rec ? &*rec : nullptr, *provider, cache,
                                               cfg.prompts.batch, cfg.prompts.granularity);
        prompts::write_prompt_pack(dir.string(), pack);
        std::printf("captioned %s (%d frames, %s)\n", id.c_str(), hr.n(),
                    pack.has_degradation ? "train pack" : "inference pack");
    }
    return 0;
}

static int cmd_train(const std::string& root, Config cfg, int stage, const std::string& out,
                     const std::string& stage1_ckpt, const std::string& resume) {
    train::Dataset dataset(root);
    train::Model model(cfg, cfg.train.seed);
    std::string log_path = out + "/train_stage" + std::to_string(stage) + ".jsonl";
    train::TrainResult res;
    if (stage == 1) {
        res = train::run_stage1(model, dataset, out, log_path, resume);
    } else {
        if (stage1_ckpt.empty() && resume.empty())
            throw train::LineageError("stage 2 needs --stage1-ckpt (or --resume)");
        res = train::run_stage2(model, dataset, stage1_ckpt, out, log_path, resume);
    }
    std::printf("stage %d finished at iteration %d; checkpoint %s\n", stage, res.iterations,
                res.checkpoint_path.c_str());
    return 0;
}

static int cmd_infer(const std::string& ckpt_path, const std::string& in,
                     const std::string& out) {
    Checkpoint ckpt = load_checkpoint_file(ckpt_path);
    Config cfg;
    from_json_into(ckpt.meta.at("config"), cfg);
    train::Model model(cfg, 0);
    load_into_store(model.store, ckpt, "gen/");

    std::string frames_dir = fs::is_directory(fs::path(in) / "lr") ? in + "/lr" : in;
    VideoClip lr = read_clip_dir(frames_dir);
    prompts::PromptPack pack = prompts::read_prompt_pack(in);
    VideoClip sr = model.gen->infer(lr, pack);
    write_clip_dir(out, sr);
    std::printf("wrote %d frames at %dx%d to %s\n", sr.n(), sr.h(), sr.w(), out.c_str());
    return 0;
}

static int cmd_eval(const std::string& ckpt, const std::string& root,
                    const std::string& metrics_csv, const std::string& out,
                    const std::string& nss_ref) {
    evaltool::EvalOptions opts;
    opts.metrics.clear();
    std::string cur;
    for (char c : metrics_csv + ",") {
        if (c == ',') {
            if (!cur.empty()) opts.metrics.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    opts.out_dir = out;
    opts.nss_reference_path = nss_ref;
    evaltool::MetricReport report = evaltool::evaluate(ckpt, root, opts);
    for (const auto& [m, v] : report.overall) std::printf("%s: %.4f\n", m.c_str(), v);
    std::printf("report written to %s/report.json\n", out.c_str());
    return 0;
}

static int cmd_ablate(const std::string& variant, const Config& base, const std::string& out) {
    Config resolved = train::build_ablation(base, variant);
    json j = to_json(resolved);
    j["variant"] = variant;
    if (out.empty()) {
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::ofstream f(out);
        if (!f) throw IoError("cannot write " + out);
        f << j.dump(2) << "\n";
        std::printf("wrote resolved %s config to %s\n", variant.c_str(), out.c_str());
    }
    return 0;
}

static int cmd_demo_data(const std::string& root, int clips, int frames, int size,
                         const Config& cfg) {
    train::make_demo_dataset(root, clips, frames, size, cfg.train.seed, cfg);
    std::printf("demo dataset with %d clips of %d %dx%d frames under %s\n", clips, frames,
                size, size, root.c_str());
    return 0;
}

int main(int argc, char** argv) {
    CLI::App app{"textovsr: text-guided dual-branch real-world video super-resolution"};
    app.require_subcommand(1);
    app.fallthrough();  // global options (e.g. --config) may follow the subcommand

    std::string config_path, root, out = "out", ckpt, in_dir, metrics = "psnr,ssim,nr";
    std::string stage1_ckpt, resume, variant, provider = "template";
    std::string nss_ref = "data/nss_ref.json";
    uint64_t seed = 0;
    bool seed_set = false;
    int stage = 1, demo_clips = 2, demo_frames = 7, demo_size = 96;

    app.add_option("--config", config_path, "hierarchical JSON config file")->envname("TEXTOVSR_CONFIG");
    auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, "master RNG seed")->each([&](const std::string&) {
            seed_set = true;
        });
    };

    auto* sub_degrade = app.add_subcommand("degrade", "synthesize LR clips + degradation text");
    sub_degrade->add_option("--root", root, "dataset root")->required();
    add_seed(sub_degrade);

    auto* sub_caption = app.add_subcommand("caption", "generate content text + embeddings");
    sub_caption->add_option("--root", root)->required();
    sub_caption->add_option("--caption-provider", provider, "template|http");
    add_seed(sub_caption);

    auto* sub_train = app.add_subcommand("train", "run a training stage");
    sub_train->add_option("--root", root)->required();
    sub_train->add_option("--stage", stage, "1 or 2")->required();
    sub_train->add_option("--out", out, "checkpoint/log directory");
    sub_train->add_option("--stage1-ckpt", stage1_ckpt, "stage-1 checkpoint for stage 2");
    sub_train->add_option("--resume", resume, "checkpoint to resume from");
    add_seed(sub_train);

    auto* sub_infer = app.add_subcommand("infer", "super-resolve one clip");
    sub_infer->add_option("--ckpt", ckpt)->required();
    sub_infer->add_option("--in", in_dir, "clip directory (lr frames + prompt sidecars)")
        ->required();
    sub_infer->add_option("--out", out)->required();

    auto* sub_eval = app.add_subcommand("eval", "run metrics over a dataset");
    sub_eval->add_option("--ckpt", ckpt)->required();
    sub_eval->add_option("--root", root)->required();
    sub_eval->add_option("--metrics", metrics, "comma list: psnr,ssim,nr");
    sub_eval->add_option("--out", out);
    sub_eval->add_option("--nss-ref", nss_ref, "naturalness reference file");

    auto* sub_ablate = app.add_subcommand("ablate", "emit a resolved ablation config");
    sub_ablate->add_option("--variant", variant, "V1..V6")->required();
    sub_ablate->add_option("--out", out, "output path (stdout if omitted)")->default_val("");

    auto* sub_demo = app.add_subcommand("demo-data", "synthesize a small demo dataset");
    sub_demo->add_option("--root", root)->required();
    sub_demo->add_option("--clips", demo_clips);
    sub_demo->add_option("--frames", demo_frames);
    sub_demo->add_option("--size", demo_size);
    add_seed(sub_demo);

    CLI11_PARSE(app, argc, argv);

    try {
        Config cfg = load_config(config_path, seed, seed_set);
        if (sub_degrade->parsed()) return cmd_degrade(root, cfg);
        if (sub_caption->parsed()) return cmd_caption(root, cfg, provider);
        if (sub_train->parsed()) return cmd_train(root, cfg, stage, out, stage1_ckpt, resume);
        if (sub_infer->parsed()) return cmd_infer(ckpt, in_dir, out);
        if (sub_eval->parsed()) return cmd_eval(ckpt, root, metrics, out, nss_ref);
        if (sub_ablate->parsed()) return cmd_ablate(variant, cfg, out);
        if (sub_demo->parsed()) return cmd_demo_data(root, demo_clips, demo_frames, demo_size, cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
