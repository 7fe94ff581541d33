#pragma once

#include <cstdio>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "textovsr/config.hpp"
#include "textovsr/degrade.hpp"
#include "textovsr/serialize.hpp"

namespace tovsr::prompts {

struct CaptionError : std::runtime_error {
    int frame_index;
    CaptionError(int frame, const std::string& m)
        : std::runtime_error("caption error at frame " + std::to_string(frame) + ": " + m),
          frame_index(frame) {}
};

// hookable log sink; encoder null-prompt events and provider retries go here
inline std::function<void(const std::string&)>& log_sink() {
    static std::function<void(const std::string&)> sink = [](const std::string& m) {
        std::fprintf(stderr, "[textovsr] %s\n", m.c_str());
    };
    return sink;
}

// ---- caption providers -----------------------------------------------------------

class CaptionProvider {
public:
    virtual ~CaptionProvider() = default;
    virtual std::string id() const = 0;

    std::string caption(const Tensorf& frame, Granularity g) {
        ++calls_;
        return do_caption(frame, g);
    }
    uint64_t call_count() const { return calls_; }
    void reset_calls() { calls_ = 0; }

protected:
    virtual std::string do_caption(const Tensorf& frame, Granularity g) = 0;

private:
    uint64_t calls_ = 0;
};

// Deterministic captioner from coarse image statistics. Keeps CI independent
// of any external captioning model while exercising both granularities.
class TemplateCaptionProvider : public CaptionProvider {
public:
    std::string id() const override { return "template"; }

protected:
    std::string do_caption(const Tensorf& frame, Granularity g) override {
        const int c = frame.size(0), h = frame.size(1), w = frame.size(2);
        double mean[3] = {0, 0, 0};
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) mean[ch] += frame.at(ch, y, x);
        for (int ch = 0; ch < c; ++ch) mean[ch] /= (double)(h * w);
        double luma = c >= 3 ? 0.299 * mean[0] + 0.587 * mean[1] + 0.114 * mean[2] : mean[0];

        const char* color = "gray";
        if (c >= 3) {
            double mx = std::max({mean[0], mean[1], mean[2]});
            double mn = std::min({mean[0], mean[1], mean[2]});
            if (mx - mn > 0.03)
                color = mx == mean[0] ? "red" : (mx == mean[1] ? "green" : "blue");
        }
        const char* tone = luma > 0.6 ? "bright" : (luma > 0.3 ? "dim" : "dark");

        char buf[160];
        if (g == Granularity::coarse) {
            std::snprintf(buf, sizeof(buf), "a %s scene with dominant %s tones", tone, color);
            return buf;
        }
        // fine granularity adds quantized contrast and edge statistics
        double var = 0, edges = 0;
        Tensorf gray = to_gray(frame);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double d = gray.at(0, y, x) - luma;
                var += d * d;
                if (x + 1 < w) edges += std::abs(gray.at(0, y, x + 1) - gray.at(0, y, x));
                if (y + 1 < h) edges += std::abs(gray.at(0, y + 1, x) - gray.at(0, y, x));
            }
        var = std::sqrt(var / (double)(h * w));
        edges /= (double)(2 * h * w);
        std::snprintf(buf, sizeof(buf),
                      "a %s scene with dominant %s tones, contrast %.2f, texture %.2f, "
                      "luminance %.2f",
                      tone, color, var, edges * 10.0, luma);
        return buf;
    }
};

// Adapter for an external captioning endpoint. POSTs the frame as PNG with
// the prompt in a header; expects the caption as a plain-text body.
class HttpCaptionProvider : public CaptionProvider {
public:
    explicit HttpCaptionProvider(std::string url, double timeout_s = 10.0, int retries = 2)
        : url_(std::move(url)), timeout_s_(timeout_s), retries_(retries) {}

    static const char* env_url_var() { return "TEXTOVSR_CAPTION_URL"; }
    static std::string url_from_env() {
        const char* v = std::getenv(env_url_var());
        return v ? v : "";
    }

    std::string id() const override { return "http:" + url_; }

protected:
    std::string do_caption(const Tensorf& frame, Granularity g) override;

private:
    std::string url_;
    double timeout_s_;
    int retries_;
};

// ---- text encoders ----------------------------------------------------------------

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual int d_text() const = 0;
    virtual std::string id() const = 0;

    // empty string encodes to the null prompt (all zeros)
    std::vector<float> encode_one(const std::string& text) {
        ++calls_;
        if (text.empty()) {
            log_sink()("null prompt encoded as zero vector");
            return std::vector<float>((size_t)d_text(), 0.0f);
        }
        return do_encode(text);
    }
    uint64_t call_count() const { return calls_; }
    void reset_calls() { calls_ = 0; }

protected:
    virtual std::vector<float> do_encode(const std::string& text) = 0;

private:
    uint64_t calls_ = 0;
};

// Token-hash bag-of-words embedder. Each token hashes to a fixed pseudo-random
// direction; the sum is L2-normalized. Deterministic, no weights to download,
// frozen by construction.
class HashTextEncoder : public TextEncoder {
public:
    explicit HashTextEncoder(int d_text = 64) : d_(d_text) {}
    int d_text() const override { return d_; }
    std::string id() const override { return "hash" + std::to_string(d_); }

protected:
    std::vector<float> do_encode(const std::string& text) override {
        std::vector<float> acc((size_t)d_, 0.0f);
        std::string tok;
        auto flush = [&]() {
            if (tok.empty()) return;
            Rng rng(fnv1a64(tok));
            for (int i = 0; i < d_; ++i) acc[(size_t)i] += (float)rng.normal();
            tok.clear();
        };
        for (char ch : text) {
            if (std::isalnum((unsigned char)ch))
                tok += (char)std::tolower((unsigned char)ch);
            else
                flush();
        }
        flush();
        double norm = 0;
        for (float v : acc) norm += (double)v * v;
        norm = std::sqrt(norm);
        if (norm > 1e-12)
            for (auto& v : acc) v = (float)(v / norm);
        return acc;
    }

private:
    int d_;
};

// Duplicate strings are served from the cache: one encoder invocation per
// unique string. Safe under concurrent readers, single writer.
class EmbeddingCache {
public:
    explicit EmbeddingCache(TextEncoder& enc) : enc_(enc) {}

    std::vector<float> encode_one(const std::string& text) {
        {
            std::shared_lock lock(mu_);
            auto it = cache_.find(text);
            if (it != cache_.end()) return it->second;
        }
        std::vector<float> v = enc_.encode_one(text);
        {
            std::unique_lock lock(mu_);
            cache_.emplace(text, v);
        }
        return v;
    }

    std::vector<std::vector<float>> encode(const std::vector<std::string>& texts) {
        std::vector<std::vector<float>> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(encode_one(t));
        return out;
    }

    TextEncoder& encoder() { return enc_; }

private:
    TextEncoder& enc_;
    std::shared_mutex mu_;
    std::unordered_map<std::string, std::vector<float>> cache_;
};

inline std::vector<std::vector<float>> encode(const std::vector<std::string>& texts,
                                              TextEncoder& enc) {
    EmbeddingCache cache(enc);
    return cache.encode(texts);
}

// ---- caption batching ----------------------------------------------------------------

// One provider call per batch, on the batch's first frame; the caption is
// shared across the batch. A remainder batch captions independently.
inline std::vector<std::string> caption_clip(const VideoClip& hr, CaptionProvider& provider,
                                             int batch, Granularity g = Granularity::fine) {
    if (batch < 1) throw ConfigError("caption batch must be >= 1");
    std::vector<std::string> out((size_t)hr.n());
    for (int start = 0; start < hr.n(); start += batch) {
        std::string text;
        try {
            text = provider.caption(hr.frame(start), g);
        } catch (const CaptionError&) {
            throw;
        } catch (const std::exception& e) {
            throw CaptionError(start, e.what());
        }
        if (text.empty()) throw CaptionError(start, "provider returned empty caption");
        for (int i = start; i < std::min(start + batch, hr.n()); ++i) out[(size_t)i] = text;
    }
    return out;
}

// ---- prompt packs ------------------------------------------------------------------

struct PromptPack {
    std::vector<std::string> content_texts;
    std::string degradation_text;
    bool has_degradation = false;
    std::vector<std::vector<float>> content_embeddings;
    std::vector<float> degradation_embedding;
    int d_text = 0;
    std::string provider_id, encoder_id;

    void validate() const {
        if (content_texts.size() != content_embeddings.size())
            throw ShapeError("prompt pack text/embedding count mismatch");
        for (const auto& e : content_embeddings)
            if ((int)e.size() != d_text) throw ShapeError("content embedding width");
        if (has_degradation && (int)degradation_embedding.size() != d_text)
            throw ShapeError("degradation embedding width");
    }
};

// record == nullptr builds an inference-time pack (no degradation fields).
inline PromptPack build_prompt_pack(const VideoClip& hr,
                                    const degrade::DegradationRecord* record,
                                    CaptionProvider& provider, EmbeddingCache& cache, int batch,
                                    Granularity g = Granularity::fine) {
    PromptPack pack;
    pack.content_texts = caption_clip(hr, provider, batch, g);
    pack.content_embeddings = cache.encode(pack.content_texts);
    pack.d_text = cache.encoder().d_text();
    pack.provider_id = provider.id();
    pack.encoder_id = cache.encoder().id();
    if (record) {
        pack.has_degradation = true;
        pack.degradation_text = record->text;
        pack.degradation_embedding = cache.encode_one(record->text);
    }
    pack.validate();
    return pack;
}

// prompts.json + prompts.embd sidecars. The binary file holds content rows in
// frame order, with the degradation row appended last when present.
inline void write_prompt_pack(const std::string& dir, const PromptPack& pack) {
    json j;
    j["version"] = 1;
    j["content_texts"] = pack.content_texts;
    j["degradation_text"] = pack.degradation_text;
    j["has_degradation"] = pack.has_degradation;
    j["provider_id"] = pack.provider_id;
    j["encoder_id"] = pack.encoder_id;
    j["d_text"] = pack.d_text;
    j["rows"] = {{"content", pack.content_texts.size()},
                 {"degradation", pack.has_degradation ? 1 : 0}};
    std::filesystem::create_directories(dir);
    std::ofstream f(dir + "/prompts.json");
    if (!f) throw IoError("cannot write prompts.json in " + dir);
    f << j.dump(2) << "\n";

    std::vector<std::vector<float>> rows = pack.content_embeddings;
    if (pack.has_degradation) rows.push_back(pack.degradation_embedding);
    write_embeddings(dir + "/prompts.embd", rows, pack.d_text);
}

inline PromptPack read_prompt_pack(const std::string& dir) {
    std::ifstream f(dir + "/prompts.json");
    if (!f) throw IoError("cannot read prompts.json in " + dir);
    json j = json::parse(f);
    PromptPack pack;
    pack.content_texts = j.at("content_texts").get<std::vector<std::string>>();
    pack.degradation_text = j.value("degradation_text", std::string{});
    pack.has_degradation = j.value("has_degradation", false);
    pack.provider_id = j.value("provider_id", std::string{});
    pack.encoder_id = j.value("encoder_id", std::string{});
    pack.d_text = j.at("d_text").get<int>();

    int d = 0;
    auto rows = read_embeddings(dir + "/prompts.embd", &d);
    if (d != pack.d_text) throw IoError("prompts.embd width disagrees with prompts.json");
    size_t expect = pack.content_texts.size() + (pack.has_degradation ? 1 : 0);
    if (rows.size() != expect) throw IoError("prompts.embd row count mismatch in " + dir);
    if (pack.has_degradation) {
        pack.degradation_embedding = rows.back();
        rows.pop_back();
    }
    pack.content_embeddings = std::move(rows);
    pack.validate();
    return pack;
}

}  // namespace tovsr::prompts

// ---- http provider implementation (header-only; httplib included once here) ----

#ifndef TOVSR_NO_HTTP
#define CPPHTTPLIB_OPENSSL_SUPPORT_DISABLED
#include <httplib.h>

namespace tovsr::prompts {

inline std::string HttpCaptionProvider::do_caption(const Tensorf& frame, Granularity g) {
    std::vector<unsigned char> png = encode_png(frame);
    const char* prompt = g == Granularity::coarse
                             ? "Give a one-sentence caption of this frame."
                             : "Describe this frame in detail, including textures.";

    // split url into host part and path
    std::string url = url_;
    std::string path = "/caption";
    auto scheme_end = url.find("://");
    auto path_pos = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_pos != std::string::npos) {
        path = url.substr(path_pos);
        url = url.substr(0, path_pos);
    }

    std::string last_error;
    for (int attempt = 0; attempt <= retries_; ++attempt) {
        httplib::Client cli(url);
        cli.set_connection_timeout((time_t)timeout_s_,
                                   (time_t)((timeout_s_ - (time_t)timeout_s_) * 1e6));
        cli.set_read_timeout((time_t)timeout_s_, 0);
        httplib::Headers headers = {{"X-Caption-Prompt", prompt}};
        auto res = cli.Post(path, headers, (const char*)png.data(), png.size(), "image/png");
        if (res && res->status == 200 && !res->body.empty()) return res->body;
        last_error = res ? ("status " + std::to_string(res->status))
                         : ("transport error " + httplib::to_string(res.error()));
        if (attempt < retries_)
            log_sink()("caption request failed (" + last_error + "), retrying");
    }
    throw std::runtime_error("caption endpoint failed: " + last_error);
}

}  // namespace tovsr::prompts
#endif
