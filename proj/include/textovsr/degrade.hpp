#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "textovsr/config.hpp"
#include "textovsr/image.hpp"
#include "textovsr/png_io.hpp"
#include "textovsr/rng.hpp"

namespace tovsr {

struct Fps {
    int num = 25, den = 1;
};

// Ordered frame stack (n,c,h,w), values in [0,1].
struct VideoClip {
    Tensorf frames;
    std::string id;
    Fps fps;

    int n() const { return frames.size(0); }
    int c() const { return frames.size(1); }
    int h() const { return frames.size(2); }
    int w() const { return frames.size(3); }

    Tensorf frame(int t) const {
        Tensorf f({c(), h(), w()});
        long long stride = f.numel();
        for (long long i = 0; i < stride; ++i) f[i] = frames[(long long)t * stride + i];
        return f;
    }
    void set_frame(int t, const Tensorf& f) {
        long long stride = (long long)c() * h() * w();
        if (f.numel() != stride) throw ShapeError("set_frame size mismatch");
        for (long long i = 0; i < stride; ++i) frames[(long long)t * stride + i] = f[i];
    }
    static VideoClip from_frames(const std::vector<Tensorf>& fs, std::string id = "",
                                 Fps fps = {}) {
        if (fs.empty()) throw ShapeError("empty clip");
        VideoClip clip;
        clip.frames = Tensorf({(int)fs.size(), fs[0].size(0), fs[0].size(1), fs[0].size(2)});
        clip.id = std::move(id);
        clip.fps = fps;
        for (int t = 0; t < (int)fs.size(); ++t) clip.set_frame(t, fs[t]);
        return clip;
    }
};

inline VideoClip read_clip_dir(const std::string& dir, const std::string& id = "") {
    namespace fs = std::filesystem;
    std::vector<std::string> paths;
    if (!fs::is_directory(dir)) throw IoError("not a clip directory: " + dir);
    for (auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") paths.push_back(e.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw IoError("no frames in " + dir);
    std::vector<Tensorf> frames;
    for (auto& p : paths) frames.push_back(read_png(p));
    return VideoClip::from_frames(frames, id.empty() ? fs::path(dir).parent_path().filename().string() : id);
}

inline void write_clip_dir(const std::string& dir, const VideoClip& clip) {
    for (int t = 0; t < clip.n(); ++t) {
        char name[16];
        std::snprintf(name, sizeof(name), "%04d.png", t);
        write_png(dir + "/" + name, clip.frame(t));
    }
}

namespace degrade {

struct DegradationStage {
    Kind kind = Kind::blur;
    std::map<std::string, double> params;
    Severity severity = Severity::light;
    int order_index = 0;

    double primary() const {
        switch (kind) {
            case Kind::blur: return params.at("sigma");
            case Kind::resize: return params.at("shrink");
            case Kind::noise: return params.at("sigma");
            case Kind::jpeg: return params.at("strength");
            case Kind::video_compression: return params.at("quant");
        }
        throw ConfigError("bad kind");
    }
};

struct DegradationRecord {
    std::vector<DegradationStage> stages;
    uint64_t seed = 0;
    int order = 1;
    int downscale = 4;
    std::string text;
};

// Boundary values belong to the lower bin.
inline Severity severity_bin(Kind kind, double value, const std::array<double, 2>& edges,
                             const ParamRange& range) {
    if (value < range.lo || value > range.hi)
        throw RangeError(std::string(kind_name(kind)) + " value " + std::to_string(value) +
                         " outside [" + std::to_string(range.lo) + "," +
                         std::to_string(range.hi) + "]");
    if (value <= edges[0]) return Severity::light;
    if (value <= edges[1]) return Severity::medium;
    return Severity::heavy;
}
inline Severity severity_bin(Kind kind, double value, const DegradeConfig& cfg) {
    return severity_bin(kind, value, cfg.edges_for(kind), cfg.range_for(kind));
}

// "<severity> <kind>" tokens joined in application order.
inline std::string render_degradation_text(const DegradationRecord& record) {
    std::string out;
    for (const auto& s : record.stages) {
        if (!out.empty()) out += ", ";
        out += std::string(severity_name(s.severity)) + " " + kind_phrase(s.kind);
    }
    return out;
}

inline std::vector<std::pair<Severity, Kind>> parse_degradation_text(const std::string& text) {
    std::vector<std::pair<Severity, Kind>> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find(", ", pos);
        std::string tok = text.substr(pos, end == std::string::npos ? end : end - pos);
        size_t sp = tok.find(' ');
        if (sp == std::string::npos) throw ConfigError("bad degradation token: " + tok);
        Severity sev = severity_from_name(tok.substr(0, sp));
        std::string phrase = tok.substr(sp + 1);
        std::optional<Kind> kind;
        for (Kind k :
             {Kind::blur, Kind::resize, Kind::noise, Kind::jpeg, Kind::video_compression})
            if (phrase == kind_phrase(k)) kind = k;
        if (!kind) throw ConfigError("bad degradation kind phrase: " + phrase);
        out.push_back({sev, *kind});
        if (end == std::string::npos) break;
        pos = end + 2;
    }
    return out;
}

// Per-order stage template blur -> resize -> noise -> jpeg, then one trailing
// video_compression for the clip. Parameters are uniform in their configured
// ranges; severities are binned on the primary parameter.
inline DegradationRecord sample_pipeline(uint64_t rng_seed, int order,
                                         const DegradeConfig& cfg) {
    if (order != 1 && order != 2) throw ConfigError("pipeline order must be 1 or 2");
    DegradationRecord rec;
    rec.seed = rng_seed;
    rec.order = order;
    rec.downscale = cfg.downscale;
    Rng rng(Rng::mix(rng_seed, 0x9eed));

    auto push = [&](Kind kind, int oi) {
        DegradationStage st;
        st.kind = kind;
        st.order_index = oi;
        ParamRange r = cfg.range_for(kind);
        double v = rng.uniform(r.lo, r.hi);
        switch (kind) {
            case Kind::blur:
                st.params["sigma"] = v;
                st.params["aspect"] = rng.uniform(cfg.blur_aspect_min, 1.0);
                st.params["theta"] = rng.uniform(0.0, 3.14159265358979);
                break;
            case Kind::resize:
                st.params["shrink"] = v;
                st.params["scale"] = 1.0 / v;
                break;
            case Kind::noise:
                st.params["sigma"] = v;
                st.params["poisson"] = rng.uniform() < cfg.poisson_prob ? 1.0 : 0.0;
                break;
            case Kind::jpeg:
                st.params["strength"] = v;
                st.params["quality"] =
                    std::min(100.0, std::max(1.0, std::round(100.0 - v)));
                break;
            case Kind::video_compression:
                st.params["quant"] = v;
                break;
        }
        st.severity = severity_bin(kind, v, cfg);
        rec.stages.push_back(std::move(st));
    };

    for (int o = 0; o < order; ++o)
        for (Kind k : {Kind::blur, Kind::resize, Kind::noise, Kind::jpeg}) push(k, o);
    push(Kind::video_compression, order);

    rec.text = render_degradation_text(rec);
    return rec;
}

// One stage over every frame. Output shape equals input shape except resize;
// values are clamped to [0,1] after the stage.
inline VideoClip apply_stage(const VideoClip& clip, const DegradationStage& stage, Rng& rng) {
    std::vector<Tensorf> out;
    out.reserve((size_t)clip.n());
    const int h = clip.h(), w = clip.w();

    switch (stage.kind) {
        case Kind::blur: {
            double sigma = stage.params.at("sigma");
            double aspect = stage.params.count("aspect") ? stage.params.at("aspect") : 1.0;
            double theta = stage.params.count("theta") ? stage.params.at("theta") : 0.0;
            Tensorf kernel = gaussian_kernel2d<float>(sigma, sigma * aspect, theta);
            for (int t = 0; t < clip.n(); ++t)
                out.push_back(convolve_replicate(clip.frame(t), kernel));
            break;
        }
        case Kind::resize: {
            double scale = stage.params.count("scale") ? stage.params.at("scale")
                                                       : 1.0 / stage.params.at("shrink");
            int oh = (int)std::lround(h * scale), ow = (int)std::lround(w * scale);
            if (oh < 8 || ow < 8)
                throw ShapeError("resize stage produced degenerate size " +
                                 std::to_string(oh) + "x" + std::to_string(ow));
            for (int t = 0; t < clip.n(); ++t)
                out.push_back(resize_bicubic(clip.frame(t), oh, ow));
            break;
        }
        case Kind::noise: {
            double sigma = stage.params.at("sigma");
            bool poisson = stage.params.count("poisson") && stage.params.at("poisson") > 0.5;
            for (int t = 0; t < clip.n(); ++t) {
                Tensorf f = clip.frame(t);
                for (long long i = 0; i < f.numel(); ++i) {
                    double s = poisson
                                   ? sigma * std::sqrt(std::max((double)f[i], 1e-3) / 0.5)
                                   : sigma;
                    f[i] += (float)(s * rng.normal());
                }
                out.push_back(std::move(f));
            }
            break;
        }
        case Kind::jpeg: {
            int quality = (int)std::lround(stage.params.count("quality")
                                               ? stage.params.at("quality")
                                               : 100.0 - stage.params.at("strength"));
            for (int t = 0; t < clip.n(); ++t)
                out.push_back(jpeg_quantize(clip.frame(t), quality));
            break;
        }
        case Kind::video_compression: {
            double quant = stage.params.at("quant");
            for (int t = 0; t < clip.n(); ++t)
                out.push_back(block_requantize(clip.frame(t), quant));
            break;
        }
    }
    for (auto& f : out) clamp01_inplace(f);
    VideoClip res = VideoClip::from_frames(out, clip.id, clip.fps);
    return res;
}

// All recorded stages, then bicubic downsampling to (h/downscale, w/downscale)
// of the original geometry. Replay of (hr, record) is bit-identical.
inline VideoClip degrade_clip(const VideoClip& hr, const DegradationRecord& record,
                              int downscale) {
    if (hr.h() % downscale != 0 || hr.w() % downscale != 0)
        throw ShapeError("clip dims not divisible by downscale factor");
    const int th = hr.h() / downscale, tw = hr.w() / downscale;
    VideoClip cur = hr;
    for (size_t i = 0; i < record.stages.size(); ++i) {
        Rng rng(Rng::mix(record.seed, 0x57A6E000ull + i));
        cur = apply_stage(cur, record.stages[i], rng);
    }
    std::vector<Tensorf> frames;
    for (int t = 0; t < cur.n(); ++t) {
        Tensorf f = resize_bicubic(cur.frame(t), th, tw);
        clamp01_inplace(f);
        frames.push_back(std::move(f));
    }
    return VideoClip::from_frames(frames, hr.id, hr.fps);
}

// ---- noise mixing (negative branch input) -------------------------------------

struct MixInfo {
    int patch_index = 0;
    int off_x = 0, off_y = 0;
};

class NoiseBank {
public:
    NoiseBank() = default;
    explicit NoiseBank(const std::string& dir) {
        namespace fs = std::filesystem;
        if (fs::is_directory(dir)) {
            std::vector<std::string> paths;
            for (auto& e : fs::directory_iterator(dir))
                if (e.path().extension() == ".png") paths.push_back(e.path().string());
            std::sort(paths.begin(), paths.end());
            for (auto& p : paths) patches_.push_back(read_png(p));
        }
    }
    explicit NoiseBank(std::vector<Tensorf> patches) : patches_(std::move(patches)) {}

    bool empty() const { return patches_.empty(); }
    size_t size() const { return patches_.size(); }
    const Tensorf& patch(size_t i) const { return patches_.at(i); }

    // patch tiled to (c,h,w), cropped at an rng-driven offset
    Tensorf sample_tile(int c, int h, int w, Rng& rng, MixInfo* info = nullptr) const {
        if (patches_.empty()) throw ConfigError("noise bank is empty");
        int idx = rng.uniform_int((int)patches_.size());
        const Tensorf& p = patches_[(size_t)idx];
        int ox = rng.uniform_int(p.size(2));
        int oy = rng.uniform_int(p.size(1));
        if (info) *info = {idx, ox, oy};
        Tensorf out({c, h, w});
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    out.at(ch, y, x) =
                        p.at(ch % p.size(0), (y + oy) % p.size(1), (x + ox) % p.size(2));
        return out;
    }

private:
    std::vector<Tensorf> patches_;
};

// v = clamp(lr + lambda * (patch - mean(patch)), 0, 1)
inline VideoClip mix_noise(const VideoClip& lr, const NoiseBank& bank, double lambda, Rng& rng,
                           std::vector<MixInfo>* infos = nullptr) {
    if (lambda < 0.0 || lambda > 1.0) throw RangeError("lambda outside [0,1]");
    if (bank.empty()) throw ConfigError("noise bank is empty");
    std::vector<Tensorf> frames;
    for (int t = 0; t < lr.n(); ++t) {
        MixInfo info;
        Tensorf patch = bank.sample_tile(lr.c(), lr.h(), lr.w(), rng, &info);
        if (infos) infos->push_back(info);
        double mean = 0.0;
        for (long long i = 0; i < patch.numel(); ++i) mean += patch[i];
        mean /= (double)patch.numel();
        Tensorf f = lr.frame(t);
        for (long long i = 0; i < f.numel(); ++i)
            f[i] = (float)(f[i] + lambda * ((double)patch[i] - mean));
        clamp01_inplace(f);
        frames.push_back(std::move(f));
    }
    return VideoClip::from_frames(frames, lr.id, lr.fps);
}

// ---- sidecar json --------------------------------------------------------------

inline json record_to_json(const DegradationRecord& rec) {
    json stages = json::array();
    for (const auto& s : rec.stages) {
        json st;
        st["kind"] = kind_name(s.kind);
        st["severity"] = severity_name(s.severity);
        st["order_index"] = s.order_index;
        st["params"] = s.params;
        stages.push_back(std::move(st));
    }
    json r;
    r["version"] = 1;
    r["seed"] = rec.seed;
    r["order"] = rec.order;
    r["downscale"] = rec.downscale;
    r["text"] = rec.text;
    r["stages"] = std::move(stages);
    return r;
}

inline DegradationRecord record_from_json(const json& j) {
    DegradationRecord rec;
    rec.seed = j.at("seed").get<uint64_t>();
    rec.order = j.at("order").get<int>();
    rec.downscale = j.value("downscale", 4);
    rec.text = j.at("text").get<std::string>();
    for (const auto& st : j.at("stages")) {
        DegradationStage s;
        s.kind = kind_from_name(st.at("kind").get<std::string>());
        s.severity = severity_from_name(st.at("severity").get<std::string>());
        s.order_index = st.value("order_index", 0);
        s.params = st.at("params").get<std::map<std::string, double>>();
        rec.stages.push_back(std::move(s));
    }
    return rec;
}

inline void write_record(const std::string& path, const DegradationRecord& rec) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << record_to_json(rec).dump(2) << "\n";
}
inline DegradationRecord read_record(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    json j = json::parse(f);
    return record_from_json(j);
}

}  // namespace degrade
}  // namespace tovsr
