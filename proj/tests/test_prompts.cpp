#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <thread>

#include "textovsr/prompts.hpp"
#include "test_helpers.hpp"

using namespace tovsr;
using namespace tovsr::testing;
namespace pr = tovsr::prompts;
namespace fs = std::filesystem;

static VideoClip make_clip(int n, int h = 32, int w = 32, uint64_t seed = 4) {
    VideoClip clip;
    clip.frames = Tensorf({n, 3, h, w});
    for (int t = 0; t < n; ++t) clip.set_frame(t, synth_frame(h, w, seed, t));
    clip.id = "clip";
    return clip;
}

TEST_CASE("caption batching shares text and counts provider calls") {
    pr::TemplateCaptionProvider provider;

    SECTION("14 frames, batch 7: exactly 2 provider calls") {
        auto texts = pr::caption_clip(make_clip(14), provider, 7);
        CHECK(provider.call_count() == 2);
        REQUIRE(texts.size() == 14);
        for (int i = 0; i < 7; ++i) CHECK(texts[(size_t)i] == texts[0]);
        for (int i = 7; i < 14; ++i) CHECK(texts[(size_t)i] == texts[7]);
    }
    SECTION("7-frame clip: all strings identical") {
        auto texts = pr::caption_clip(make_clip(7), provider, 7);
        for (const auto& t : texts) CHECK(t == texts[0]);
        CHECK(provider.call_count() == 1);
    }
    SECTION("8 frames, batch 7: remainder batch captions independently") {
        auto texts = pr::caption_clip(make_clip(8), provider, 7);
        CHECK(provider.call_count() == 2);
        // batch-sharing invariant: texts[i] == texts[b*floor(i/b)]
        for (int i = 0; i < 8; ++i) CHECK(texts[(size_t)i] == texts[(size_t)(7 * (i / 7))]);
    }
    SECTION("failing provider aborts with the frame index") {
        struct Failing : pr::CaptionProvider {
            std::string id() const override { return "failing"; }
            std::string do_caption(const Tensorf&, Granularity) override {
                if (call_count() >= 2) throw std::runtime_error("backend down");
                return "ok";
            }
        } bad;
        try {
            pr::caption_clip(make_clip(14), bad, 7);
            FAIL("expected CaptionError");
        } catch (const pr::CaptionError& e) {
            CHECK(e.frame_index == 7);
        }
    }
    SECTION("coarse and fine granularities differ") {
        auto f = make_clip(1);
        std::string coarse = provider.caption(f.frame(0), Granularity::coarse);
        std::string fine = provider.caption(f.frame(0), Granularity::fine);
        CHECK(coarse != fine);
        CHECK(fine.rfind(coarse, 0) == 0);  // fine extends the coarse stem
    }
}

TEST_CASE("hash encoder and cache") {
    pr::HashTextEncoder enc(64);

    SECTION("duplicates hit the cache: one invocation, identical vectors") {
        pr::EmbeddingCache cache(enc);
        auto vecs = cache.encode({"same text", "same text", "same text"});
        CHECK(enc.call_count() == 1);
        REQUIRE(vecs.size() == 3);
        CHECK(vecs[1] == vecs[0]);
        CHECK(vecs[2] == vecs[0]);
    }
    SECTION("empty string is the zero vector") {
        auto v = enc.encode_one("");
        REQUIRE(v.size() == 64);
        for (float x : v) CHECK(x == 0.0f);
    }
    SECTION("nearby prompts stay distinct") {
        auto a = enc.encode_one("light blur");
        auto b = enc.encode_one("heavy blur");
        double dot = 0, na = 0, nb = 0;
        for (int i = 0; i < 64; ++i) {
            dot += a[(size_t)i] * b[(size_t)i];
            na += a[(size_t)i] * a[(size_t)i];
            nb += b[(size_t)i] * b[(size_t)i];
        }
        CHECK(dot / std::sqrt(na * nb) < 0.999);
    }
    SECTION("cache soundness: cached equals uncached") {
        pr::HashTextEncoder enc2(32);
        std::vector<std::string> texts = {"a", "b", "a", "c", "b"};
        auto with_cache = pr::encode(texts, enc2);
        for (size_t i = 0; i < texts.size(); ++i)
            CHECK(with_cache[i] == enc2.encode_one(texts[i]));
    }
    SECTION("determinism across instances") {
        pr::HashTextEncoder e1(48), e2(48);
        CHECK(e1.encode_one("dim scene") == e2.encode_one("dim scene"));
    }
}

TEST_CASE("embedding cache is safe under concurrent readers") {
    pr::HashTextEncoder enc(32);
    pr::EmbeddingCache cache(enc);
    std::vector<std::string> words;
    for (int i = 0; i < 64; ++i) words.push_back("word" + std::to_string(i % 16));
    auto expected = enc.encode_one("word0");

    std::vector<std::thread> threads;
    std::atomic<bool> ok{true};
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&, t] {
            for (int r = 0; r < 50; ++r)
                for (size_t i = (size_t)t; i < words.size(); i += 4) {
                    auto v = cache.encode_one(words[i]);
                    if ((int)v.size() != 32) ok = false;
                }
        });
    for (auto& th : threads) th.join();
    CHECK(ok);
    CHECK(cache.encode_one("word0") == expected);
}

TEST_CASE("prompt pack build and sidecar round trip") {
    VideoClip hr = make_clip(8);
    DegradeConfig cfg;
    auto rec = degrade::sample_pipeline(3, 2, cfg);

    pr::TemplateCaptionProvider provider;
    pr::HashTextEncoder enc(32);
    pr::EmbeddingCache cache(enc);

    pr::PromptPack pack = pr::build_prompt_pack(hr, &rec, provider, cache, 7);
    CHECK(pack.has_degradation);
    CHECK(pack.degradation_text == rec.text);
    CHECK(pack.d_text == 32);
    REQUIRE(pack.content_texts.size() == 8);
    REQUIRE(pack.content_embeddings.size() == 8);

    // inference pack omits degradation fields
    pr::PromptPack ipack = pr::build_prompt_pack(hr, nullptr, provider, cache, 7);
    CHECK_FALSE(ipack.has_degradation);
    CHECK(ipack.degradation_text.empty());
    CHECK(ipack.degradation_embedding.empty());
    CHECK_FALSE(ipack.content_texts[0].empty());

    fs::path tmp = fs::temp_directory_path() / "tovsr_prompts_test";
    fs::create_directories(tmp);
    pr::write_prompt_pack(tmp.string(), pack);
    pr::PromptPack back = pr::read_prompt_pack(tmp.string());
    CHECK(back.content_texts == pack.content_texts);
    CHECK(back.degradation_text == pack.degradation_text);
    CHECK(back.content_embeddings == pack.content_embeddings);
    CHECK(back.degradation_embedding == pack.degradation_embedding);
    CHECK(back.provider_id == "template");
    fs::remove_all(tmp);
}

TEST_CASE("http caption provider round trip with retry") {
    httplib::Server server;
    int hits = 0;
    server.Post("/caption", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        if (hits == 1) {  // first attempt fails; the provider must retry
            res.status = 500;
            return;
        }
        REQUIRE(req.get_header_value("Content-Type") == "image/png");
        REQUIRE_FALSE(req.get_header_value("X-Caption-Prompt").empty());
        Tensorf img = decode_png((const unsigned char*)req.body.data(), req.body.size());
        res.set_content("a stage performance of size " + std::to_string(img.size(2)), "text/plain");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    pr::HttpCaptionProvider provider("http://127.0.0.1:" + std::to_string(port), 5.0, 2);
    VideoClip clip = make_clip(1, 24, 24);
    std::string text = provider.caption(clip.frame(0), Granularity::fine);
    CHECK(text == "a stage performance of size 24");
    CHECK(hits == 2);

    server.stop();
    th.join();
}
