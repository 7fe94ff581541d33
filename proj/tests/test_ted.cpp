#include <catch2/catch_amalgamated.hpp>

#include "textovsr/ted.hpp"
#include "textovsr/losses.hpp"
#include "test_helpers.hpp"

using namespace tovsr;
using namespace tovsr::testing;
namespace op = tovsr::ops;

static TedConfig tiny_ted(TedMode mode = TedMode::ted, TedOutput out = TedOutput::patch_map) {
    TedConfig cfg;
    cfg.base_channels = 8;
    cfg.depth = 3;
    cfg.d_text = 16;
    cfg.mode = mode;
    cfg.output = out;
    return cfg;
}

TEST_CASE("ted produces a full-resolution patch map") {
    ParamStore<float> ps;
    Rng rng(8);
    Ted<float> ted(ps, tiny_ted(), rng);
    Rng dr(1);
    Varf frame = Varf::leaf(random_tensorf({3, 64, 64}, dr));
    Varf text = Varf::leaf(random_tensorf({16}, dr, -1, 1));
    Varf out = ted.discriminate(frame, text, false);
    CHECK(out.value().dims() == std::vector<int>({1, 64, 64}));
    CHECK(out.value().all_finite());

    // zero text embedding stays well-defined
    Varf out0 = ted.discriminate(frame, Varf::leaf(Tensorf({16})), false);
    CHECK(out0.value().all_finite());

    // mismatched caption changes the map
    Varf text2 = Varf::leaf(random_tensorf({16}, dr, -1, 1));
    Varf out2 = ted.discriminate(frame, text2, false);
    double delta = 0;
    for (long long i = 0; i < out.value().numel(); ++i)
        delta = std::max(delta, (double)std::abs(out.value()[i] - out2.value()[i]));
    CHECK(delta > 1e-7);

    CHECK_THROWS_AS(ted.discriminate(Varf::leaf(random_tensorf({3, 60, 64}, dr)), text, false),
                    ShapeError);
}

TEST_CASE("scalar output equals the exact mean of the patch map") {
    Rng dr(5);
    Tensorf framev = random_tensorf({3, 32, 32}, dr);
    Tensorf textv = random_tensorf({16}, dr, -1, 1);

    ParamStore<float> ps1, ps2;
    Rng r1(33), r2(33);  // identical init
    Ted<float> map_ted(ps1, tiny_ted(TedMode::ted, TedOutput::patch_map), r1);
    Ted<float> scalar_ted(ps2, tiny_ted(TedMode::ted, TedOutput::scalar), r2);

    Varf map = map_ted.discriminate(Varf::leaf(framev), Varf::leaf(textv), false);
    Varf scalar = scalar_ted.discriminate(Varf::leaf(framev), Varf::leaf(textv), false);
    double mean = 0;
    for (long long i = 0; i < map.value().numel(); ++i) mean += map.value()[i];
    mean /= (double)map.value().numel();
    CHECK(std::abs(mean - scalar.value()[0]) < 1e-6);
}

TEST_CASE("text filter gates linearly") {
    ParamStore<double> ps;
    Rng rng(4);
    TedConfig cfg = tiny_ted();
    Ted<double> ted(ps, cfg, rng);

    Vard zero = ted.text_filter(Vard::leaf(Tensord({16})));
    REQUIRE(zero.value().numel() == 8);  // configured filtered width
    for (long long i = 0; i < 8; ++i) CHECK(zero.value()[i] == 0.0);

    CHECK_THROWS_AS(ted.text_filter(Vard::leaf(Tensord({5}))), ShapeError);
}

TEST_CASE("gradients reach the frame and the text embedding") {
    ParamStore<double> ps;
    Rng rng(14);
    Ted<double> ted(ps, tiny_ted(), rng);
    Rng dr(2);
    Tensord framev = random_tensor({3, 8, 8}, dr, 0, 1);
    Tensord textv = random_tensor({16}, dr, -0.5, 0.5);

    // warm the spectral-norm power iteration, then freeze (training=false)
    for (int i = 0; i < 3; ++i)
        ted.discriminate(Vard::leaf(framev), Vard::leaf(textv), true);

    Vard frame = Vard::leaf(framev, true);
    Vard text = Vard::leaf(textv, true);
    Vard loss = losses::adv_loss_g(frame, text, ted, false);
    backward(loss);
    REQUIRE(frame.has_grad());
    REQUIRE(text.has_grad());

    auto eval = [&]() {
        NoGradGuard g;
        return losses::adv_loss_g(Vard::leaf(framev), Vard::leaf(textv), ted, false).item();
    };
    CHECK(fd_check(framev, eval, frame.grad()) < 1e-3);
    CHECK(fd_check(textv, eval, text.grad()) < 1e-3);
}

TEST_CASE("spectral norm buffers advance only in training mode") {
    ParamStore<float> ps;
    Rng rng(21);
    Ted<float> ted(ps, tiny_ted(), rng);
    Rng dr(3);
    Varf frame = Varf::leaf(random_tensorf({3, 16, 16}, dr));
    Varf text = Varf::leaf(random_tensorf({16}, dr, -1, 1));

    auto snapshot = [&]() {
        std::vector<float> u;
        for (auto& e : ps.entries())
            if (e.name.find("sn_u") != std::string::npos)
                for (long long i = 0; i < e.var.value().numel(); ++i)
                    u.push_back(e.var.value()[i]);
        return u;
    };
    auto before = snapshot();
    ted.discriminate(frame, text, false);
    CHECK(snapshot() == before);  // eval is a fixed function
    ted.discriminate(frame, text, true);
    CHECK(snapshot() != before);  // power iteration advanced
}

TEST_CASE("discriminator variants build from config with distinct parameters") {
    Rng dr(9);
    Tensorf framev = random_tensorf({3, 32, 32}, dr);
    Tensorf textv = random_tensorf({16}, dr, -1, 1);

    ParamStore<float> ps_unet, ps_clip, ps_ted;
    Rng r1(5), r2(5), r3(5);
    Ted<float> unet(ps_unet, tiny_ted(TedMode::unet), r1);
    Ted<float> clip_pair(ps_clip, tiny_ted(TedMode::clip_pair), r2);
    Ted<float> ted(ps_ted, tiny_ted(TedMode::ted), r3);

    CHECK(ps_unet.names("ted/text").empty());
    CHECK_FALSE(ps_ted.names("ted/text").empty());
    CHECK_FALSE(ps_clip.names("ted/clip_img").empty());
    // the clip_pair image encoder is frozen
    for (auto& e : ps_clip.entries()) CHECK_FALSE(e.trainable);

    Varf u_out = unet.discriminate(Varf::leaf(framev), Varf{}, false);
    CHECK(u_out.value().dims() == std::vector<int>({1, 32, 32}));
    Varf c_out = clip_pair.discriminate(Varf::leaf(framev), Varf::leaf(textv), false);
    CHECK(c_out.value().numel() == 1);
    CHECK(std::abs(c_out.value()[0]) <= 5.0f);  // bounded alignment logit
    Varf t_out = ted.discriminate(Varf::leaf(framev), Varf::leaf(textv), false);
    CHECK(t_out.value().dims() == std::vector<int>({1, 32, 32}));

    // clip_pair is differentiable w.r.t. the frame (generator update path)
    Varf fvar = Varf::leaf(framev, true);
    Varf loss = op::mean_all(op::softplus(op::neg(
        clip_pair.discriminate(fvar, Varf::leaf(textv), false))));
    backward(loss);
    double g = 0;
    for (long long i = 0; i < fvar.grad().numel(); ++i) g += std::abs(fvar.grad()[i]);
    CHECK(g > 0.0);
}
