#include <catch2/catch_amalgamated.hpp>

#include "textovsr/drf.hpp"
#include "test_helpers.hpp"

using namespace tovsr;
using namespace tovsr::testing;
namespace op = tovsr::ops;

namespace {
struct Fixture {
    ParamStore<double> ps;
    Rng rng{42};
    DrfConfig cfg{8, 16, 2, 1};  // channels 8, d_text 16, heads 2, one token
    Drf<double> drf;
    Fixture() : drf(ps, "drf", cfg, DrfMode::full, rng) {}
};
}  // namespace

TEST_CASE("drf preserves shape and normalizes attention rows") {
    Fixture fx;
    Rng rng(1);
    Tensord fv = random_tensor({8, 4, 4}, rng);
    Tensord tv = random_tensor({16}, rng);

    Drf<double>::AttnRecord rec;
    Vard out = fx.drf.forward(Vard::leaf(fv, true), Vard::leaf(tv, true), &rec);
    CHECK(out.value().dims() == fv.dims());

    REQUIRE(rec.self_probs.size() == 2);  // one per head
    for (const auto& p : rec.self_probs) {
        REQUIRE(p.dims() == std::vector<int>({16, 16}));
        for (int i = 0; i < 16; ++i) {
            double s = 0;
            for (int j = 0; j < 16; ++j) s += p.at(i, j);
            CHECK(std::abs(s - 1.0) < 1e-5);
        }
    }
    // single text token: cross-attention weights are exactly 1
    REQUIRE(rec.cross_probs.size() == 2);
    for (const auto& p : rec.cross_probs) {
        REQUIRE(p.dims() == std::vector<int>({16, 1}));
        for (int i = 0; i < 16; ++i) CHECK(p.at(i, 0) == 1.0);
    }
}

TEST_CASE("constant input feature gives a spatially constant residual") {
    Fixture fx;
    Tensord fv({8, 4, 4});
    for (int c = 0; c < 8; ++c)
        for (int i = 0; i < 16; ++i) fv[(long long)c * 16 + i] = 0.3 + 0.1 * c;
    Vard out = fx.drf.filter_image(Vard::leaf(fv));
    Tensord res = out.value();
    for (int c = 0; c < 8; ++c) {
        double base = res.at(c, 0, 0) - fv.at(c, 0, 0);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x)
                CHECK(std::abs((res.at(c, y, x) - fv.at(c, y, x)) - base) < 1e-5);
    }
}

TEST_CASE("text filter is affine with zero-initialized bias") {
    Fixture fx;
    Vard zero_tokens = fx.drf.filter_text(Vard::leaf(Tensord({16})));
    REQUIRE(zero_tokens.value().dims() == std::vector<int>({1, 8}));
    for (long long i = 0; i < 8; ++i) CHECK(zero_tokens.value()[i] == 0.0);

    Rng rng(3);
    Tensord tv = random_tensor({16}, rng);
    Tensord tv2 = tv;
    for (long long i = 0; i < 16; ++i) tv2[i] *= 2.0;
    Vard a = fx.drf.filter_text(Vard::leaf(tv));
    Vard b = fx.drf.filter_text(Vard::leaf(tv2));
    for (long long i = 0; i < 8; ++i)
        CHECK(std::abs(b.value()[i] - 2.0 * a.value()[i]) < 1e-12);

    CHECK_THROWS_AS(fx.drf.filter_text(Vard::leaf(Tensord({7}))), ShapeError);
}

TEST_CASE("single-token cross fusion adds a broadcast projection") {
    Fixture fx;
    Rng rng(9);
    Tensord fv = random_tensor({8, 4, 4}, rng);
    Tensord tv = random_tensor({16}, rng);
    Vard f = Vard::leaf(fv);
    Vard tokens = fx.drf.filter_text(Vard::leaf(tv));
    Vard out = fx.drf.cross_fuse(f, tokens);
    // out - f_img must be spatially constant (same single V row everywhere)
    Tensord d = out.value();
    for (int c = 0; c < 8; ++c) {
        double base = d.at(c, 0, 0) - fv.at(c, 0, 0);
        for (int i = 0; i < 16; ++i)
            CHECK(std::abs((d[(long long)c * 16 + i] - fv[(long long)c * 16 + i]) - base) <
                  1e-10);
    }
}

TEST_CASE("gradients reach both the image feature and the raw text vector") {
    Fixture fx;
    Rng rng(21);
    Tensord fv = random_tensor({8, 4, 4}, rng);
    Tensord tv = random_tensor({16}, rng);
    Tensord mask = random_tensor({8, 4, 4}, rng);

    Vard f = Vard::leaf(fv, true);
    Vard t = Vard::leaf(tv, true);
    Vard loss = op::sum_all(op::mul(fx.drf.forward(f, t), Vard::leaf(mask)));
    backward(loss);

    REQUIRE(f.has_grad());
    REQUIRE(t.has_grad());
    double fg = 0, tg = 0;
    for (long long i = 0; i < f.grad().numel(); ++i) fg += std::abs(f.grad()[i]);
    for (long long i = 0; i < t.grad().numel(); ++i) tg += std::abs(t.grad()[i]);
    CHECK(fg > 1e-6);
    CHECK(tg > 1e-6);

    auto eval = [&]() {
        NoGradGuard g;
        return op::sum_all(op::mul(fx.drf.forward(Vard::leaf(fv), Vard::leaf(tv)),
                                   Vard::leaf(mask)))
            .item();
    };
    CHECK(fd_check(fv, eval, f.grad()) < 1e-3);
    CHECK(fd_check(tv, eval, t.grad()) < 1e-3);
}

TEST_CASE("null prompt keeps the module finite and image filtering alive") {
    Fixture fx;
    Rng rng(33);
    Tensord fv = random_tensor({8, 4, 4}, rng);
    Vard out = fx.drf.forward(Vard::leaf(fv), Vard::leaf(Tensord({16})));
    CHECK(out.value().all_finite());
    // the self-attention path must still transform the feature
    double delta = 0;
    for (long long i = 0; i < fv.numel(); ++i) delta += std::abs(out.value()[i] - fv[i]);
    CHECK(delta > 1e-6);
}

TEST_CASE("evaluation is deterministic and image_only mode has no text params") {
    Fixture fx;
    Rng rng(7);
    Tensord fv = random_tensor({8, 4, 4}, rng);
    Tensord tv = random_tensor({16}, rng);
    NoGradGuard g;
    Vard a = fx.drf.forward(Vard::leaf(fv), Vard::leaf(tv));
    Vard b = fx.drf.forward(Vard::leaf(fv), Vard::leaf(tv));
    for (long long i = 0; i < a.value().numel(); ++i)
        REQUIRE(a.value()[i] == b.value()[i]);

    ParamStore<double> ps2;
    Rng rng2(42);
    Drf<double> image_only(ps2, "drf", fx.cfg, DrfMode::image_only, rng2);
    CHECK(ps2.names("drf/text").empty());
    CHECK(ps2.names("drf/cross").empty());
    CHECK_FALSE(ps2.names("drf/self").empty());
    Vard out = image_only.forward(Vard::leaf(fv), Vard{});
    CHECK(out.value().dims() == fv.dims());

    // non-finite input is rejected
    Tensord bad = fv;
    bad[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(fx.drf.filter_image(Vard::leaf(bad)), NumericError);
}

TEST_CASE("multi-token text is supported via config") {
    ParamStore<double> ps;
    Rng rng(11);
    DrfConfig cfg{8, 16, 2, 3};
    Drf<double> drf(ps, "drf", cfg, DrfMode::full, rng);
    Rng r2(5);
    Tensord tv = random_tensor({16}, r2);
    Vard tokens = drf.filter_text(Vard::leaf(tv));
    CHECK(tokens.value().dims() == std::vector<int>({3, 8}));
    Tensord fv = random_tensor({8, 4, 4}, r2);
    Drf<double>::AttnRecord rec;
    Vard out = drf.forward(Vard::leaf(fv), Vard::leaf(tv), &rec);
    CHECK(out.value().dims() == fv.dims());
    for (const auto& p : rec.cross_probs) {
        for (int i = 0; i < 16; ++i) {
            double s = 0;
            for (int j = 0; j < 3; ++j) s += p.at(i, j);
            CHECK(std::abs(s - 1.0) < 1e-5);
        }
    }
}
