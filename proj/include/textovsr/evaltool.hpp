#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "textovsr/config.hpp"
#include "textovsr/generator.hpp"
#include "textovsr/image.hpp"
#include "textovsr/train.hpp"

namespace tovsr::evaltool {

// ---- full-reference metrics -----------------------------------------------------

// 10 log10(1/mse) on [0,1] images; identical inputs report the 100 dB sentinel
inline double psnr(const Tensorf& a, const Tensorf& b) {
    if (!a.same_shape(b)) throw ShapeError("psnr shape mismatch");
    double mse = 0;
    for (long long i = 0; i < a.numel(); ++i) {
        double d = (double)a[i] - b[i];
        mse += d * d;
    }
    mse /= (double)a.numel();
    if (mse <= 0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

// Gaussian-window SSIM (11x11, sigma 1.5, k1=0.01, k2=0.03), mean over channels
inline double ssim(const Tensorf& a, const Tensorf& b) {
    if (!a.same_shape(b)) throw ShapeError("ssim shape mismatch");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int radius = 5;
    Tensorf mu_a = gaussian_blur_iso(a, 1.5, radius);
    Tensorf mu_b = gaussian_blur_iso(b, 1.5, radius);
    Tensorf aa({a.size(0), a.size(1), a.size(2)}), bb = aa, ab = aa;
    for (long long i = 0; i < a.numel(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    Tensorf saa = gaussian_blur_iso(aa, 1.5, radius);
    Tensorf sbb = gaussian_blur_iso(bb, 1.5, radius);
    Tensorf sab = gaussian_blur_iso(ab, 1.5, radius);
    double acc = 0;
    for (long long i = 0; i < a.numel(); ++i) {
        double ma = mu_a[i], mb = mu_b[i];
        double va = saa[i] - ma * ma, vb = sbb[i] - mb * mb, cov = sab[i] - ma * mb;
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return acc / (double)a.numel();
}

// ---- natural-scene-statistics metric ------------------------------------------------

namespace nss {

inline double gamma_fn(double x) { return std::tgamma(x); }

// generalized-Gaussian shape from the moment ratio (grid inversion)
inline double ggd_shape(double r) {
    double best_a = 0.2, best_d = 1e18;
    for (double a = 0.2; a <= 10.0; a += 0.001) {
        double rho = gamma_fn(2.0 / a) * gamma_fn(2.0 / a) /
                     (gamma_fn(1.0 / a) * gamma_fn(3.0 / a));
        double d = std::abs(rho - r);
        if (d < best_d) {
            best_d = d;
            best_a = a;
        }
    }
    return best_a;
}

// 18 features: GGD(shape, var) of the MSCN field plus AGGD(shape, mean, lvar,
// rvar) of four orientation products.
inline std::vector<double> mscn_features(const Tensorf& frame) {
    if (frame.size(1) < 96 || frame.size(2) < 96)
        throw ShapeError("naturalness metric needs frames of at least 96x96");
    Tensorf gray = to_gray(frame);
    const int h = gray.size(1), w = gray.size(2);
    Tensorf mu = gaussian_blur_iso(gray, 7.0 / 6.0, 3);
    Tensorf sq({1, h, w});
    for (long long i = 0; i < gray.numel(); ++i) {
        double d = gray[i] - mu[i];
        sq[i] = (float)(d * d);
    }
    Tensorf var = gaussian_blur_iso(sq, 7.0 / 6.0, 3);
    Tensorf mscn({1, h, w});
    for (long long i = 0; i < gray.numel(); ++i)
        mscn[i] = (float)((gray[i] - mu[i]) / (std::sqrt(std::max((double)var[i], 0.0)) + 1.0));

    std::vector<double> feats;
    {  // GGD of the field
        double e_abs = 0, e_sq = 0;
        for (long long i = 0; i < mscn.numel(); ++i) {
            e_abs += std::abs(mscn[i]);
            e_sq += (double)mscn[i] * mscn[i];
        }
        e_abs /= (double)mscn.numel();
        e_sq /= (double)mscn.numel();
        double r = e_abs * e_abs / std::max(e_sq, 1e-12);
        feats.push_back(ggd_shape(r));
        feats.push_back(e_sq);
    }
    const int off[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};  // H, V, D1, D2
    for (auto& o : off) {
        double nl = 0, nr = 0, cl = 0, cr = 0, e_abs = 0, e_sq = 0;
        long long cnt = 0;
        for (int y = 0; y + o[0] < h; ++y)
            for (int x = std::max(0, -o[1]); x + o[1] < w && x < w; ++x) {
                double p = (double)mscn.at(0, y, x) * mscn.at(0, y + o[0], x + o[1]);
                e_abs += std::abs(p);
                e_sq += p * p;
                if (p < 0) {
                    nl += p * p;
                    ++cl;
                } else {
                    nr += p * p;
                    ++cr;
                }
                ++cnt;
            }
        e_abs /= (double)cnt;
        e_sq /= (double)cnt;
        double bl = std::sqrt(cl > 0 ? nl / cl : 0.0), br = std::sqrt(cr > 0 ? nr / cr : 0.0);
        double gam = bl / std::max(br, 1e-12);
        double rhat = e_abs * e_abs / std::max(e_sq, 1e-12);
        double Rhat = rhat * (gam * gam * gam + 1.0) * (gam + 1.0) /
                      std::pow(gam * gam + 1.0, 2.0);
        double alpha = ggd_shape(Rhat);
        double mean = (br - bl) * gamma_fn(2.0 / alpha) / gamma_fn(1.0 / alpha);
        feats.push_back(alpha);
        feats.push_back(mean);
        feats.push_back(bl * bl);
        feats.push_back(br * br);
    }
    return feats;
}

}  // namespace nss

// Reference statistics fit on pristine frames; shipped as a hashed JSON file.
struct NssReference {
    int dim = 0;
    std::vector<double> mean;
    std::vector<std::vector<double>> cov;

    json payload() const {
        return json{{"dim", dim}, {"mean", mean}, {"cov", cov}};
    }
    std::string payload_hash() const {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(payload().dump()));
        return buf;
    }
};

inline NssReference fit_nss_reference(const std::vector<Tensorf>& frames) {
    if (frames.empty()) throw ConfigError("empty reference corpus");
    std::vector<std::vector<double>> feats;
    for (const auto& f : frames) feats.push_back(nss::mscn_features(f));
    NssReference ref;
    ref.dim = (int)feats[0].size();
    ref.mean.assign((size_t)ref.dim, 0.0);
    for (const auto& f : feats)
        for (int i = 0; i < ref.dim; ++i) ref.mean[(size_t)i] += f[(size_t)i];
    for (auto& m : ref.mean) m /= (double)feats.size();
    ref.cov.assign((size_t)ref.dim, std::vector<double>((size_t)ref.dim, 0.0));
    for (const auto& f : feats)
        for (int i = 0; i < ref.dim; ++i)
            for (int j = 0; j < ref.dim; ++j)
                ref.cov[(size_t)i][(size_t)j] +=
                    (f[(size_t)i] - ref.mean[(size_t)i]) * (f[(size_t)j] - ref.mean[(size_t)j]);
    for (auto& row : ref.cov)
        for (auto& v : row) v /= (double)feats.size();
    return ref;
}

inline void write_nss_reference(const std::string& path, const NssReference& ref) {
    json j = ref.payload();
    j["version"] = 1;
    j["payload_fnv"] = ref.payload_hash();
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(1) << "\n";
}

inline NssReference load_nss_reference(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("missing naturalness reference file: " + path);
    json j = json::parse(f);
    if (j.value("version", 0) != 1)
        throw IoError("unsupported naturalness reference version in " + path);
    NssReference ref;
    ref.dim = j.at("dim").get<int>();
    ref.mean = j.at("mean").get<std::vector<double>>();
    ref.cov = j.at("cov").get<std::vector<std::vector<double>>>();
    if (j.at("payload_fnv").get<std::string>() != ref.payload_hash())
        throw IoError("naturalness reference hash mismatch in " + path +
                      " (file corrupted or stale)");
    return ref;
}

// Mahalanobis distance of the frame's features to the reference; lower is
// more natural.
inline double nr_naturalness(const Tensorf& frame, const NssReference& ref) {
    std::vector<double> f = nss::mscn_features(frame);
    if ((int)f.size() != ref.dim) throw ShapeError("feature dim mismatch");
    Eigen::MatrixXd cov(ref.dim, ref.dim);
    Eigen::VectorXd d(ref.dim);
    for (int i = 0; i < ref.dim; ++i) {
        d(i) = f[(size_t)i] - ref.mean[(size_t)i];
        for (int j = 0; j < ref.dim; ++j) cov(i, j) = ref.cov[(size_t)i][(size_t)j];
    }
    cov += 1e-6 * Eigen::MatrixXd::Identity(ref.dim, ref.dim);
    Eigen::VectorXd sol = cov.ldlt().solve(d);
    return std::sqrt(std::max(d.dot(sol), 0.0));
}

// ---- evaluation driver -----------------------------------------------------------------

struct MetricReport {
    int version = 1;
    std::string checkpoint;
    std::string config_hash;
    // per clip: metric -> per-frame values and the per-video mean
    std::map<std::string, std::map<std::string, std::vector<double>>> per_frame;
    std::map<std::string, std::map<std::string, double>> per_video;
    std::map<std::string, double> overall;

    json to_json() const {
        json j;
        j["version"] = version;
        j["checkpoint"] = checkpoint;
        j["config_hash"] = config_hash;
        for (const auto& [clip, metrics] : per_frame)
            for (const auto& [m, v] : metrics) j["clips"][clip]["per_frame"][m] = v;
        for (const auto& [clip, metrics] : per_video)
            for (const auto& [m, v] : metrics) j["clips"][clip]["per_video"][m] = v;
        j["overall"] = overall;
        return j;
    }
    static MetricReport from_json(const json& j) {
        if (j.value("version", 0) != 1)
            throw IoError("unsupported report version " + std::to_string(j.value("version", 0)));
        MetricReport r;
        r.checkpoint = j.value("checkpoint", "");
        r.config_hash = j.value("config_hash", "");
        if (j.contains("clips"))
            for (const auto& [clip, body] : j.at("clips").items()) {
                if (body.contains("per_frame"))
                    for (const auto& [m, v] : body.at("per_frame").items())
                        r.per_frame[clip][m] = v.get<std::vector<double>>();
                if (body.contains("per_video"))
                    for (const auto& [m, v] : body.at("per_video").items())
                        r.per_video[clip][m] = v.get<double>();
            }
        if (j.contains("overall"))
            for (const auto& [m, v] : j.at("overall").items()) r.overall[m] = v.get<double>();
        return r;
    }
};

inline VideoClip bicubic_upscale_clip(const VideoClip& lr, int scale) {
    std::vector<Tensorf> frames;
    for (int t = 0; t < lr.n(); ++t) {
        Tensorf up = resize_bicubic(lr.frame(t), lr.h() * scale, lr.w() * scale, false);
        clamp01_inplace(up);
        frames.push_back(std::move(up));
    }
    return VideoClip::from_frames(frames, lr.id, lr.fps);
}

inline double clip_psnr_mean(const VideoClip& a, const VideoClip& b) {
    double acc = 0;
    for (int t = 0; t < a.n(); ++t) acc += psnr(a.frame(t), b.frame(t));
    return acc / a.n();
}

// LR (bicubic x4) | SR | HR side-by-side comparison strip
inline Tensorf comparison_strip(const VideoClip& lr, const VideoClip& sr, const VideoClip* hr,
                                int frame) {
    Tensorf lrs = resize_bicubic(lr.frame(frame), sr.h(), sr.w(), false);
    clamp01_inplace(lrs);
    int panels = hr ? 3 : 2;
    Tensorf strip({3, sr.h(), panels * sr.w()});
    auto blit = [&](const Tensorf& img, int panel) {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < sr.h(); ++y)
                for (int x = 0; x < sr.w(); ++x)
                    strip.at(c, y, panel * sr.w() + x) = img.at(c, y, x);
    };
    blit(lrs, 0);
    blit(sr.frame(frame), 1);
    if (hr) blit(hr->frame(frame), 2);
    return strip;
}

struct EvalOptions {
    std::vector<std::string> metrics = {"psnr", "ssim", "nr"};
    std::string out_dir;
    std::string nss_reference_path;
    bool write_strips = true;
};

// Runs inference per clip, computes the selected metrics, writes report.json
// and comparison strips. Fails cleanly (no partial report) on a missing
// checkpoint.
inline MetricReport evaluate(const std::string& ckpt_path, const std::string& dataset_root,
                             const EvalOptions& opts) {
    namespace fs = std::filesystem;
    Checkpoint ckpt = load_checkpoint_file(ckpt_path);  // throws before any output
    Config cfg;
    from_json_into(ckpt.meta.at("config"), cfg);
    train::Model model(cfg, 0);
    load_into_store(model.store, ckpt, "gen/");

    bool want_nr = false, want_psnr = false, want_ssim = false;
    for (const auto& m : opts.metrics) {
        if (m == "nr") want_nr = true;
        else if (m == "psnr") want_psnr = true;
        else if (m == "ssim") want_ssim = true;
        else throw ConfigError("unknown metric " + m);
    }
    NssReference ref;
    if (want_nr) ref = load_nss_reference(opts.nss_reference_path);

    MetricReport report;
    report.checkpoint = ckpt_path;
    {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(to_json(cfg).dump()));
        report.config_hash = buf;
    }

    fs::path clips = fs::path(dataset_root) / "clips";
    if (!fs::is_directory(clips)) throw train::DatasetError("no clips/ under " + dataset_root);
    std::vector<std::string> ids;
    for (auto& e : fs::directory_iterator(clips))
        if (e.is_directory()) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());

    for (const auto& id : ids) {
        fs::path dir = clips / id;
        VideoClip lr = read_clip_dir((dir / "lr").string(), id);
        prompts::PromptPack pack = prompts::read_prompt_pack(dir.string());
        VideoClip sr = model.gen->infer(lr, pack);
        std::optional<VideoClip> hr;
        if (fs::is_directory(dir / "hr")) hr = read_clip_dir((dir / "hr").string(), id);

        for (int t = 0; t < sr.n(); ++t) {
            if (want_psnr && hr)
                report.per_frame[id]["psnr"].push_back(psnr(sr.frame(t), hr->frame(t)));
            if (want_ssim && hr)
                report.per_frame[id]["ssim"].push_back(ssim(sr.frame(t), hr->frame(t)));
            if (want_nr) report.per_frame[id]["nr"].push_back(nr_naturalness(sr.frame(t), ref));
        }
        for (const auto& [m, vals] : report.per_frame[id]) {
            double acc = 0;
            for (double v : vals) acc += v;
            report.per_video[id][m] = acc / (double)vals.size();
        }
        if (!opts.out_dir.empty() && opts.write_strips) {
            Tensorf strip = comparison_strip(lr, sr, hr ? &*hr : nullptr, sr.n() / 2);
            write_png(opts.out_dir + "/strips/" + id + ".png", strip);
        }
    }

    // overall = mean of per-video means
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& [clip, metrics] : report.per_video)
        for (const auto& [m, v] : metrics) {
            acc[m].first += v;
            acc[m].second += 1;
        }
    for (const auto& [m, p] : acc) report.overall[m] = p.first / p.second;

    if (!opts.out_dir.empty()) {
        fs::create_directories(opts.out_dir);
        std::ofstream f(opts.out_dir + "/report.json");
        if (!f) throw IoError("cannot write report.json");
        f << report.to_json().dump(1) << "\n";
    }
    return report;
}

}  // namespace tovsr::evaltool
