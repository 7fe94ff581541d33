#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "textovsr/tensor.hpp"

namespace tovsr {

using json = nlohmann::json;

// ---- degradation -------------------------------------------------------------

enum class Kind { blur, resize, noise, jpeg, video_compression };
enum class Severity { light, medium, heavy };

inline const char* kind_name(Kind k) {
    switch (k) {
        case Kind::blur: return "blur";
        case Kind::resize: return "resize";
        case Kind::noise: return "noise";
        case Kind::jpeg: return "jpeg";
        case Kind::video_compression: return "video_compression";
    }
    return "?";
}
// human form used in degradation-descriptive text
inline const char* kind_phrase(Kind k) {
    switch (k) {
        case Kind::blur: return "blur";
        case Kind::resize: return "resize";
        case Kind::noise: return "noise";
        case Kind::jpeg: return "jpeg compression";
        case Kind::video_compression: return "video compression";
    }
    return "?";
}
inline Kind kind_from_name(const std::string& s) {
    for (Kind k : {Kind::blur, Kind::resize, Kind::noise, Kind::jpeg, Kind::video_compression})
        if (s == kind_name(k)) return k;
    throw ConfigError("unknown degradation kind: " + s);
}
inline const char* severity_name(Severity s) {
    switch (s) {
        case Severity::light: return "light";
        case Severity::medium: return "medium";
        case Severity::heavy: return "heavy";
    }
    return "?";
}
inline Severity severity_from_name(const std::string& s) {
    for (Severity v : {Severity::light, Severity::medium, Severity::heavy})
        if (s == severity_name(v)) return v;
    throw ConfigError("unknown severity: " + s);
}

struct ParamRange {
    double lo = 0, hi = 0;
};

// Primary-parameter ranges. Primary parameters are oriented so that larger
// always means more severe (resize uses shrink = 1/scale, jpeg uses
// strength = 100 - quality).
struct DegradeConfig {
    int version = 1;
    int order = 2;
    int downscale = 4;
    std::map<std::string, ParamRange> ranges = {
        {"blur", {0.2, 3.0}},  {"resize", {0.5, 2.0}},          {"noise", {0.002, 0.12}},
        {"jpeg", {5.0, 70.0}}, {"video_compression", {1.0, 24.0}},
    };
    // explicit [light|medium, medium|heavy] edges; absent kinds use terciles
    std::map<std::string, std::array<double, 2>> bin_edges;
    double blur_aspect_min = 0.5;
    double poisson_prob = 0.3;

    ParamRange range_for(Kind k) const {
        auto it = ranges.find(kind_name(k));
        if (it == ranges.end()) throw ConfigError(std::string("no range for ") + kind_name(k));
        if (!(it->second.lo < it->second.hi))
            throw ConfigError(std::string("empty range for ") + kind_name(k));
        return it->second;
    }
    std::array<double, 2> edges_for(Kind k) const {
        auto it = bin_edges.find(kind_name(k));
        if (it != bin_edges.end()) return it->second;
        ParamRange r = range_for(k);
        double third = (r.hi - r.lo) / 3.0;
        return {r.lo + third, r.lo + 2.0 * third};
    }
};

// ---- model -----------------------------------------------------------------

enum class DrfMode { none, image_only, full };
enum class DrfPosition { before_deep, after_deep };
enum class FlowBackend { zero, pyramid_lk, external };
enum class TedMode { unet, clip_pair, ted };
enum class TedOutput { patch_map, scalar };
enum class NegDetach { positive, none };
enum class Granularity { coarse, fine };

struct DrfConfig {
    int channels = 64;
    int d_text = 64;
    int heads = 4;
    int tokens_per_text = 1;
    void validate() const {
        if (channels % heads != 0) throw ConfigError("drf channels not divisible by heads");
        if (d_text <= 0 || tokens_per_text <= 0) throw ConfigError("drf text dims");
    }
};

struct GeneratorConfig {
    int channels = 64;
    int num_blocks = 2;
    int scale = 4;
    int heads = 4;
    int d_text = 64;
    int tokens_per_text = 1;
    DrfMode drf_pos_mode = DrfMode::full;
    DrfMode drf_neg_mode = DrfMode::full;
    DrfPosition drf_positive_position = DrfPosition::before_deep;
    DrfPosition drf_negative_position = DrfPosition::after_deep;
    FlowBackend flow_backend = FlowBackend::pyramid_lk;
    bool share_trunk = true;
    int chunk_size = 16;

    DrfConfig drf() const { return {channels, d_text, heads, tokens_per_text}; }
    void validate() const {
        if (scale != 4) throw ConfigError("generator scale must be 4");
        if (drf_positive_position != DrfPosition::before_deep)
            throw ConfigError("positive DRF position must be before_deep");
        drf().validate();
    }
};

struct TedConfig {
    int base_channels = 64;
    int depth = 3;
    int d_text = 64;
    TedMode mode = TedMode::ted;
    TedOutput output = TedOutput::patch_map;
    void validate() const {
        if (depth < 2) throw ConfigError("ted depth must be >= 2");
    }
};

struct LossConfig {
    double alpha = 0.5;
    double beta = 0.5;
    double lambda_mix = 0.5;
    double charbonnier_eps = 1e-6;
    NegDetach neg_detach = NegDetach::positive;
    double proxy_gain = 12.0;  // built-in quality-scorer contrast gain
};

struct TrainConfig {
    uint64_t seed = 0;
    int iters = 2000;
    int batch = 2;
    double lr_stage1 = 1e-4;
    double lr_stage2 = 5e-5;
    int crop_hr = 256;
    int frames = 7;
    int ckpt_every = 500;
};

struct PromptConfig {
    std::string provider = "template";  // template | http
    Granularity granularity = Granularity::fine;
    int d_text = 64;
    int batch = 7;
    double http_timeout_s = 10.0;
    int http_retries = 2;
};

struct Config {
    DegradeConfig degrade;
    GeneratorConfig generator;
    TedConfig ted;
    LossConfig losses;
    TrainConfig train;
    PromptConfig prompts;
};

// ---- json ------------------------------------------------------------------

namespace cfgdetail {
template <class E>
inline E enum_from(const json& j, std::initializer_list<std::pair<const char*, E>> table,
                   const char* what) {
    std::string s = j.get<std::string>();
    for (auto& [n, v] : table)
        if (s == n) return v;
    throw ConfigError(std::string("bad ") + what + ": " + s);
}
template <class E>
inline const char* enum_to(E e, std::initializer_list<std::pair<const char*, E>> table) {
    for (auto& [n, v] : table)
        if (v == e) return n;
    return "?";
}
#define TOVSR_ENUM_TABLE(E, ...)                                     \
    inline std::initializer_list<std::pair<const char*, E>> table_of(E*) { \
        static std::initializer_list<std::pair<const char*, E>> t = {__VA_ARGS__}; \
        return t;                                                    \
    }
TOVSR_ENUM_TABLE(DrfMode, {"none", DrfMode::none}, {"image_only", DrfMode::image_only},
                 {"full", DrfMode::full})
TOVSR_ENUM_TABLE(DrfPosition, {"before_deep", DrfPosition::before_deep},
                 {"after_deep", DrfPosition::after_deep})
TOVSR_ENUM_TABLE(FlowBackend, {"zero", FlowBackend::zero},
                 {"pyramid_lk", FlowBackend::pyramid_lk}, {"external", FlowBackend::external})
TOVSR_ENUM_TABLE(TedMode, {"unet", TedMode::unet}, {"clip_pair", TedMode::clip_pair},
                 {"ted", TedMode::ted})
TOVSR_ENUM_TABLE(TedOutput, {"patch_map", TedOutput::patch_map}, {"scalar", TedOutput::scalar})
TOVSR_ENUM_TABLE(NegDetach, {"positive", NegDetach::positive}, {"none", NegDetach::none})
TOVSR_ENUM_TABLE(Granularity, {"coarse", Granularity::coarse}, {"fine", Granularity::fine})
#undef TOVSR_ENUM_TABLE

template <class E>
inline void get_enum(const json& j, const char* key, E& out) {
    if (j.contains(key)) out = enum_from<E>(j.at(key), table_of((E*)nullptr), key);
}
template <class E>
inline json put_enum(E e) {
    return enum_to(e, table_of((E*)nullptr));
}
template <class T>
inline void get_to_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}
}  // namespace cfgdetail

inline json to_json(const DegradeConfig& c) {
    json r;
    r["version"] = c.version;
    r["order"] = c.order;
    r["downscale"] = c.downscale;
    for (auto& [k, v] : c.ranges) r["ranges"][k] = {v.lo, v.hi};
    for (auto& [k, v] : c.bin_edges) r["bin_edges"][k] = {v[0], v[1]};
    r["blur_aspect_min"] = c.blur_aspect_min;
    r["poisson_prob"] = c.poisson_prob;
    return r;
}
inline void from_json_into(const json& j, DegradeConfig& c) {
    using namespace cfgdetail;
    get_to_if(j, "version", c.version);
    get_to_if(j, "order", c.order);
    get_to_if(j, "downscale", c.downscale);
    if (j.contains("ranges")) {
        c.ranges.clear();
        for (auto& [k, v] : j.at("ranges").items())
            c.ranges[k] = {v.at(0).get<double>(), v.at(1).get<double>()};
    }
    if (j.contains("bin_edges")) {
        c.bin_edges.clear();
        for (auto& [k, v] : j.at("bin_edges").items())
            c.bin_edges[k] = {v.at(0).get<double>(), v.at(1).get<double>()};
    }
    get_to_if(j, "blur_aspect_min", c.blur_aspect_min);
    get_to_if(j, "poisson_prob", c.poisson_prob);
}

inline json to_json(const GeneratorConfig& c) {
    using namespace cfgdetail;
    json r;
    r["channels"] = c.channels;
    r["num_blocks"] = c.num_blocks;
    r["scale"] = c.scale;
    r["heads"] = c.heads;
    r["d_text"] = c.d_text;
    r["tokens_per_text"] = c.tokens_per_text;
    r["drf_pos_mode"] = put_enum(c.drf_pos_mode);
    r["drf_neg_mode"] = put_enum(c.drf_neg_mode);
    r["drf_positive_position"] = put_enum(c.drf_positive_position);
    r["drf_negative_position"] = put_enum(c.drf_negative_position);
    r["flow_backend"] = put_enum(c.flow_backend);
    r["share_trunk"] = c.share_trunk;
    r["chunk_size"] = c.chunk_size;
    return r;
}
inline void from_json_into(const json& j, GeneratorConfig& c) {
    using namespace cfgdetail;
    get_to_if(j, "channels", c.channels);
    get_to_if(j, "num_blocks", c.num_blocks);
    get_to_if(j, "scale", c.scale);
    get_to_if(j, "heads", c.heads);
    get_to_if(j, "d_text", c.d_text);
    get_to_if(j, "tokens_per_text", c.tokens_per_text);
    get_enum(j, "drf_pos_mode", c.drf_pos_mode);
    get_enum(j, "drf_neg_mode", c.drf_neg_mode);
    get_enum(j, "drf_positive_position", c.drf_positive_position);
    get_enum(j, "drf_negative_position", c.drf_negative_position);
    get_enum(j, "flow_backend", c.flow_backend);
    get_to_if(j, "share_trunk", c.share_trunk);
    get_to_if(j, "chunk_size", c.chunk_size);
}

inline json to_json(const TedConfig& c) {
    using namespace cfgdetail;
    json r;
    r["base_channels"] = c.base_channels;
    r["depth"] = c.depth;
    r["d_text"] = c.d_text;
    r["mode"] = put_enum(c.mode);
    r["output"] = put_enum(c.output);
    return r;
}
inline void from_json_into(const json& j, TedConfig& c) {
    using namespace cfgdetail;
    get_to_if(j, "base_channels", c.base_channels);
    get_to_if(j, "depth", c.depth);
    get_to_if(j, "d_text", c.d_text);
    get_enum(j, "mode", c.mode);
    get_enum(j, "output", c.output);
}

inline json to_json(const LossConfig& c) {
    using namespace cfgdetail;
    json r;
    r["alpha"] = c.alpha;
    r["beta"] = c.beta;
    r["lambda_mix"] = c.lambda_mix;
    r["charbonnier_eps"] = c.charbonnier_eps;
    r["neg_detach"] = put_enum(c.neg_detach);
    r["proxy_gain"] = c.proxy_gain;
    return r;
}
inline void from_json_into(const json& j, LossConfig& c) {
    using namespace cfgdetail;
    get_to_if(j, "alpha", c.alpha);
    get_to_if(j, "beta", c.beta);
    get_to_if(j, "lambda_mix", c.lambda_mix);
    get_to_if(j, "charbonnier_eps", c.charbonnier_eps);
    get_enum(j, "neg_detach", c.neg_detach);
    get_to_if(j, "proxy_gain", c.proxy_gain);
}

inline json to_json(const TrainConfig& c) {
    json r;
    r["seed"] = c.seed;
    r["iters"] = c.iters;
    r["batch"] = c.batch;
    r["lr_stage1"] = c.lr_stage1;
    r["lr_stage2"] = c.lr_stage2;
    r["crop_hr"] = c.crop_hr;
    r["frames"] = c.frames;
    r["ckpt_every"] = c.ckpt_every;
    return r;
}
inline void from_json_into(const json& j, TrainConfig& c) {
    using namespace cfgdetail;
    get_to_if(j, "seed", c.seed);
    get_to_if(j, "iters", c.iters);
    get_to_if(j, "batch", c.batch);
    get_to_if(j, "lr_stage1", c.lr_stage1);
    get_to_if(j, "lr_stage2", c.lr_stage2);
    get_to_if(j, "crop_hr", c.crop_hr);
    get_to_if(j, "frames", c.frames);
    get_to_if(j, "ckpt_every", c.ckpt_every);
}

inline json to_json(const PromptConfig& c) {
    using namespace cfgdetail;
    json r;
    r["provider"] = c.provider;
    r["granularity"] = put_enum(c.granularity);
    r["d_text"] = c.d_text;
    r["batch"] = c.batch;
    r["http_timeout_s"] = c.http_timeout_s;
    r["http_retries"] = c.http_retries;
    return r;
}
inline void from_json_into(const json& j, PromptConfig& c) {
    using namespace cfgdetail;
    get_to_if(j, "provider", c.provider);
    get_enum(j, "granularity", c.granularity);
    get_to_if(j, "d_text", c.d_text);
    get_to_if(j, "batch", c.batch);
    get_to_if(j, "http_timeout_s", c.http_timeout_s);
    get_to_if(j, "http_retries", c.http_retries);
}

inline json to_json(const Config& c) {
    json r;
    r["degrade"] = to_json(c.degrade);
    r["generator"] = to_json(c.generator);
    r["ted"] = to_json(c.ted);
    r["losses"] = to_json(c.losses);
    r["train"] = to_json(c.train);
    r["prompts"] = to_json(c.prompts);
    return r;
}
inline void from_json_into(const json& j, Config& c) {
    if (j.contains("degrade")) from_json_into(j.at("degrade"), c.degrade);
    if (j.contains("generator")) from_json_into(j.at("generator"), c.generator);
    if (j.contains("ted")) from_json_into(j.at("ted"), c.ted);
    if (j.contains("losses")) from_json_into(j.at("losses"), c.losses);
    if (j.contains("train")) from_json_into(j.at("train"), c.train);
    if (j.contains("prompts")) from_json_into(j.at("prompts"), c.prompts);
}

inline Config config_from_json_text(const std::string& text) {
    Config c;
    from_json_into(json::parse(text), c);
    return c;
}

}  // namespace tovsr
