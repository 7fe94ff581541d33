#include <catch2/catch_amalgamated.hpp>

#include "textovsr/nn.hpp"
#include "textovsr/ops.hpp"
#include "test_helpers.hpp"

using namespace tovsr;
using namespace tovsr::testing;
namespace op = tovsr::ops;

TEST_CASE("elementwise ops match finite differences") {
    Rng rng(11);
    Tensord xv = random_tensor({3, 4}, rng, 0.2, 1.5);
    auto make_loss = [&](auto f) {
        return [&, f]() {
            Vard x = Vard::leaf(xv, true);
            return f(x).item();
        };
    };

    struct Case {
        const char* name;
        std::function<Vard(Vard)> fn;
    };
    std::vector<Case> cases = {
        {"square", [](Vard x) { return op::mean_all(op::square(x)); }},
        {"abs", [](Vard x) { return op::mean_all(op::abs(x)); }},
        {"sigmoid", [](Vard x) { return op::mean_all(op::sigmoid(x)); }},
        {"softplus", [](Vard x) { return op::mean_all(op::softplus(x)); }},
        {"exp", [](Vard x) { return op::mean_all(op::exp(op::scale(x, -0.7))); }},
        {"sqrt", [](Vard x) { return op::mean_all(op::sqrt_shift(op::square(x), 1e-12)); }},
        {"lrelu", [](Vard x) { return op::mean_all(op::leaky_relu(x)); }},
    };
    for (auto& c : cases) {
        CAPTURE(c.name);
        Vard x = Vard::leaf(xv, true);
        Vard loss = c.fn(x);
        backward(loss);
        double err = fd_check(xv, make_loss(c.fn), x.grad());
        CHECK(err < 1e-5);
    }
}

TEST_CASE("matmul and linear gradients") {
    Rng rng(5);
    Tensord av = random_tensor({4, 3}, rng);
    Tensord bv = random_tensor({3, 5}, rng);
    Vard a = Vard::leaf(av, true);
    Vard b = Vard::leaf(bv, true);
    Vard loss = op::mean_all(op::square(op::matmul(a, b)));
    backward(loss);
    auto eval = [&]() {
        Vard a2 = Vard::leaf(av, false), b2 = Vard::leaf(bv, false);
        NoGradGuard g;
        return op::mean_all(op::square(op::matmul(a2, b2))).item();
    };
    CHECK(fd_check(av, eval, a.grad()) < 1e-6);
    CHECK(fd_check(bv, eval, b.grad()) < 1e-6);

    Tensord xv = random_tensor({6, 4}, rng);
    Tensord wv = random_tensor({3, 4}, rng);
    Tensord biasv = random_tensor({3}, rng);
    Vard x = Vard::leaf(xv, true), w = Vard::leaf(wv, true), bias = Vard::leaf(biasv, true);
    Vard l2 = op::mean_all(op::abs(op::linear(x, w, bias)));
    backward(l2);
    auto eval2 = [&]() {
        NoGradGuard g;
        return op::mean_all(op::abs(op::linear(Vard::leaf(xv), Vard::leaf(wv),
                                               Vard::leaf(biasv))))
            .item();
    };
    CHECK(fd_check(xv, eval2, x.grad()) < 1e-5);
    CHECK(fd_check(wv, eval2, w.grad()) < 1e-5);
    CHECK(fd_check(biasv, eval2, bias.grad()) < 1e-5);
}

TEST_CASE("softmax rows normalize and differentiate") {
    Rng rng(7);
    Tensord xv = random_tensor({5, 6}, rng, -2, 2);
    Vard x = Vard::leaf(xv, true);
    Vard y = op::softmax_rows(x);
    for (int i = 0; i < 5; ++i) {
        double s = 0;
        for (int j = 0; j < 6; ++j) s += y.value().at(i, j);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    Tensord mask = random_tensor({5, 6}, rng);
    Vard loss = op::sum_all(op::mul(y, Vard::leaf(mask)));
    backward(loss);
    auto eval = [&]() {
        NoGradGuard g;
        return op::sum_all(op::mul(op::softmax_rows(Vard::leaf(xv)), Vard::leaf(mask))).item();
    };
    CHECK(fd_check(xv, eval, x.grad()) < 1e-6);
}

TEST_CASE("conv2d matches brute force and finite differences") {
    Rng rng(13);
    Tensord xv = random_tensor({2, 5, 6}, rng);
    Tensord wv = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
    Tensord bv = random_tensor({3}, rng);

    Vard x = Vard::leaf(xv, true), w = Vard::leaf(wv, true), b = Vard::leaf(bv, true);
    Vard y = op::conv2d(x, w, b, 1, 1);
    REQUIRE(y.value().dims() == std::vector<int>({3, 5, 6}));

    // brute-force oracle
    for (int co = 0; co < 3; ++co)
        for (int oy = 0; oy < 5; ++oy)
            for (int ox = 0; ox < 6; ++ox) {
                double acc = bv[co];
                for (int ci = 0; ci < 2; ++ci)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            int iy = oy - 1 + ky, ix = ox - 1 + kx;
                            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                            acc += wv.at(co, ci, ky, kx) * xv.at(ci, iy, ix);
                        }
                CHECK(std::abs(acc - y.value().at(co, oy, ox)) < 1e-12);
            }

    Vard loss = op::mean_all(op::square(y));
    backward(loss);
    auto eval = [&]() {
        NoGradGuard g;
        return op::mean_all(
                   op::square(op::conv2d(Vard::leaf(xv), Vard::leaf(wv), Vard::leaf(bv), 1, 1)))
            .item();
    };
    CHECK(fd_check(xv, eval, x.grad()) < 1e-6);
    CHECK(fd_check(wv, eval, w.grad()) < 1e-6);
    CHECK(fd_check(bv, eval, b.grad()) < 1e-6);

    // strided
    Vard ys = op::conv2d(x, w, b, 2, 1);
    CHECK(ys.value().dims() == std::vector<int>({3, 3, 3}));
}

TEST_CASE("pixel shuffle rearranges and round-trips gradient") {
    Rng rng(3);
    Tensord xv = random_tensor({8, 2, 3}, rng);
    Vard x = Vard::leaf(xv, true);
    Vard y = op::pixel_shuffle(x, 2);
    REQUIRE(y.value().dims() == std::vector<int>({2, 4, 6}));
    CHECK(y.value().at(0, 0, 0) == xv.at(0, 0, 0));
    CHECK(y.value().at(0, 0, 1) == xv.at(1, 0, 0));
    CHECK(y.value().at(0, 1, 0) == xv.at(2, 0, 0));
    CHECK(y.value().at(1, 1, 1) == xv.at(7, 0, 0));

    Vard loss = op::mean_all(op::square(y));
    backward(loss);
    auto eval = [&]() {
        NoGradGuard g;
        return op::mean_all(op::square(op::pixel_shuffle(Vard::leaf(xv), 2))).item();
    };
    CHECK(fd_check(xv, eval, x.grad()) < 1e-6);
}

TEST_CASE("warp with zero flow is identity; integer flow shifts") {
    Rng rng(23);
    Tensord xv = random_tensor({2, 6, 7}, rng);
    Tensord zero_flow({2, 6, 7});
    Vard x = Vard::leaf(xv, true);
    Vard y = op::warp_bilinear(x, zero_flow);
    for (long long i = 0; i < xv.numel(); ++i) CHECK(std::abs(y.value()[i] - xv[i]) < 1e-12);

    Tensord flow({2, 6, 7});
    for (int i = 0; i < 6 * 7; ++i) flow[i] = 1.0;  // u = +1
    Vard ys = op::warp_bilinear(x, flow);
    for (int c = 0; c < 2; ++c)
        for (int yy = 0; yy < 6; ++yy)
            for (int xx = 0; xx + 1 < 7; ++xx)
                CHECK(std::abs(ys.value().at(c, yy, xx) - xv.at(c, yy, xx + 1)) < 1e-12);

    // differentiable w.r.t. feature
    Tensord frac_flow({2, 6, 7});
    for (long long i = 0; i < frac_flow.numel(); ++i) frac_flow[i] = rng.uniform(-1.3, 1.3);
    Vard x2 = Vard::leaf(xv, true);
    Vard loss = op::mean_all(op::square(op::warp_bilinear(x2, frac_flow)));
    backward(loss);
    auto eval = [&]() {
        NoGradGuard g;
        return op::mean_all(op::square(op::warp_bilinear(Vard::leaf(xv), frac_flow))).item();
    };
    CHECK(fd_check(xv, eval, x2.grad()) < 1e-5);
}

TEST_CASE("bicubic resize var differentiates") {
    Rng rng(31);
    Tensord xv = random_tensor({1, 8, 8}, rng, 0, 1);
    Vard x = Vard::leaf(xv, true);
    Vard up = op::resize_bicubic_var(x, 16, 16, false);
    REQUIRE(up.value().dims() == std::vector<int>({1, 16, 16}));
    Vard loss = op::mean_all(op::square(up));
    backward(loss);
    auto eval = [&]() {
        NoGradGuard g;
        return op::mean_all(op::square(op::resize_bicubic_var(Vard::leaf(xv), 16, 16, false)))
            .item();
    };
    CHECK(fd_check(xv, eval, x.grad()) < 1e-5);
}

TEST_CASE("detach cuts gradient flow exactly") {
    Rng rng(41);
    Tensord xv = random_tensor({4}, rng);
    Vard x = Vard::leaf(xv, true);
    Vard y = op::mul(x.detach(), x);  // d/dx should be x_detached only
    Vard loss = op::sum_all(y);
    backward(loss);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(x.grad()[i] - xv[i]) < 1e-12);

    Vard x2 = Vard::leaf(xv, true);
    Vard loss2 = op::sum_all(x2.detach());
    backward(loss2);
    CHECK_FALSE(x2.has_grad());
}

TEST_CASE("no-grad mode builds no graph") {
    Rng rng(43);
    Tensord xv = random_tensor({4, 4}, rng);
    NoGradGuard g;
    Vard x = Vard::leaf(xv, true);
    Vard y = op::mean_all(op::square(x));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

TEST_CASE("attention fused path matches graph path") {
    Rng rng(17);
    Tensord qv = random_tensor({10, 8}, rng);
    Tensord kv = random_tensor({6, 8}, rng);
    Tensord vv = random_tensor({6, 8}, rng);
    Vard q = Vard::leaf(qv, true), k = Vard::leaf(kv), v = Vard::leaf(vv);
    Vard out = scaled_attention(q, k, v, 2);
    Tensord graph_out = out.value();
    {
        NoGradGuard g;
        Vard out2 = scaled_attention(Vard::leaf(qv), Vard::leaf(kv), Vard::leaf(vv), 2);
        for (long long i = 0; i < graph_out.numel(); ++i)
            CHECK(std::abs(out2.value()[i] - graph_out[i]) < 1e-12);
    }
    // gradient through attention
    Vard loss = op::mean_all(op::square(out));
    backward(loss);
    auto eval = [&]() {
        NoGradGuard g;
        return op::mean_all(
                   op::square(scaled_attention(Vard::leaf(qv), Vard::leaf(kv), Vard::leaf(vv), 2)))
            .item();
    };
    CHECK(fd_check(qv, eval, q.grad()) < 1e-5);
}

TEST_CASE("allocation stats track live tensors") {
    long long before = AllocStats::live().load();
    {
        Tensorf t({64, 64});
        CHECK(AllocStats::live().load() >= before + (long long)(64 * 64 * sizeof(float)));
    }
    CHECK(AllocStats::live().load() == before);
}

TEST_CASE("backward accumulates through shared subexpressions") {
    Tensord xv({1});
    xv[0] = 3.0;
    Vard x = Vard::leaf(xv, true);
    Vard y = op::mul(x, x);          // x^2
    Vard z = op::add(y, op::mul(y, x));  // x^2 + x^3
    backward(z);
    CHECK(std::abs(x.grad()[0] - (2 * 3.0 + 3 * 9.0)) < 1e-12);
}
