#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mdp/errors.hpp"
#include "mdp/graph.hpp"
#include "mdp/kernels.hpp"
#include "mdp/rng.hpp"
#include "mdp/tensor.hpp"

using namespace mdp;

namespace {
Tensor randt(std::vector<size_t> shape, Rng& rng, double lo = -2.0,
             double hi = 2.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}
} // namespace

TEST_CASE("tensor rejects non-finite values and wrong sizes") {
    CHECK_THROWS_AS(Tensor({2}, {1.0, std::nan("")}), NumericError);
    CHECK_THROWS_AS(Tensor({2}, {1.0, INFINITY}), NumericError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), UsageError);
    Tensor ok({2, 2}, {1, 2, 3, 4});
    CHECK(ok.size() == 4);
    CHECK(ok.dim(1) == 2);
}

TEST_CASE("forward: identity pass-through of an input") {
    Graph g;
    int x = g.input("x", {3});
    g.set_input("x", Tensor({3}, {1, 2, 3}));
    const Tensor& out = g.forward(x);
    CHECK(out[0] == 1.0);
    CHECK(out[1] == 2.0);
    CHECK(out[2] == 3.0);
}

TEST_CASE("forward: relu definition") {
    Graph g;
    int x = g.input("x", {3});
    int r = g.relu(x);
    g.set_input("x", Tensor({3}, {-1, 0, 2}));
    const Tensor& out = g.forward(r);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == 2.0);
}

TEST_CASE("forward: softplus is centered at zero and linear-minus-ln2 for "
          "large inputs") {
    Graph g;
    int x = g.input("x", {4});
    int s = g.softplus(x);
    g.set_input("x", Tensor({4}, {-1.5, 0.0, 1.5, 40.0}));
    const Tensor& out = g.forward(s);
    const double ln2 = std::log(2.0);
    CHECK(out[0] == doctest::Approx(std::log1p(std::exp(-1.5)) - ln2)
                        .epsilon(1e-15));
    CHECK(out[1] == 0.0); // zero stays zero
    // softplus(x) - softplus(-x) = x
    CHECK(out[2] - out[0] == doctest::Approx(1.5).epsilon(1e-14));
    CHECK(out[3] == doctest::Approx(40.0 - ln2).epsilon(1e-15));
}

TEST_CASE("forward: conv3x3 all-ones center output and brute-force oracle") {
    Graph g;
    int x = g.input("x", {3, 3, 1});
    int w = g.param("w", Tensor({3, 3, 1, 1}, std::vector<double>(9, 1.0)));
    int b = g.param("b", Tensor({1}));
    int y = g.conv3x3(x, w, b, 1);
    Tensor ones({3, 3, 1});
    ones.fill(1.0);
    g.set_input("x", ones);
    const Tensor& out = g.forward(y);
    CHECK(out[1 * 3 + 1] == 9.0); // center: full 3x3 support

    // random instance against a direct convolution sum
    Rng rng(11);
    const size_t H = 5, W = 4, Cin = 2, Cout = 3;
    Graph g2;
    int x2 = g2.input("x", {H, W, Cin});
    Tensor wt = randt({3, 3, Cin, Cout}, rng);
    Tensor bt = randt({Cout}, rng);
    int y2 = g2.conv3x3(x2, g2.param("w", wt), g2.param("b", bt), 1);
    Tensor xt = randt({H, W, Cin}, rng);
    g2.set_input("x", xt);
    const Tensor& got = g2.forward(y2);
    for (size_t i = 0; i < H; ++i)
        for (size_t j = 0; j < W; ++j)
            for (size_t co = 0; co < Cout; ++co) {
                double acc = bt[co];
                for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj) {
                        const long si = long(i) + di, sj = long(j) + dj;
                        if (si < 0 || sj < 0 || si >= long(H) || sj >= long(W))
                            continue;
                        for (size_t ci = 0; ci < Cin; ++ci)
                            acc += xt[(si * W + sj) * Cin + ci] *
                                   wt[((di + 1) * 3 + (dj + 1)) * Cin * Cout +
                                      ci * Cout + co];
                    }
                CHECK(got[(i * W + j) * Cout + co] ==
                      doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("backward: y = x^2 at x=3 gives dx=6") {
    Graph g;
    int x = g.param("x", Tensor({1}, {3.0}));
    int y = g.sum(g.mul(x, x));
    g.forward(y);
    g.backward_scalar(y);
    CHECK(g.param_grad("x")[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward: sum(relu(x)) picks active elements") {
    Graph g;
    int x = g.param("x", Tensor({2}, {-1.0, 2.0}));
    int y = g.sum(g.relu(x));
    g.forward(y);
    g.backward_scalar(y);
    CHECK(g.param_grad("x")[0] == 0.0);
    CHECK(g.param_grad("x")[1] == 1.0);
}

TEST_CASE("backward before forward is a usage error") {
    Graph g;
    int x = g.param("x", Tensor({2}, {1.0, 2.0}));
    int y = g.sum(x);
    CHECK_THROWS_AS(g.backward_scalar(y), UsageError);
}

TEST_CASE("random 3-layer graph passes finite differences") {
    for (uint64_t seed : {1, 2, 3, 4, 5}) {
        Rng rng(seed);
        Graph g;
        int x = g.input("x", {4, 3});
        int w1 = g.param("w1", randt({3, 5}, rng));
        int w2 = g.param("w2", randt({5, 4}, rng));
        int w3 = g.param("w3", randt({4, 2}, rng));
        int h = g.matmul(g.softplus(g.matmul(g.softplus(g.matmul(x, w1)), w2)),
                         w3);
        int loss = g.sum(g.mul(h, h));
        g.set_input("x", randt({4, 3}, rng));
        g.forward(loss);
        auto rep = g.grad_check(loss, 1e-3, 1e-4);
        CHECK(rep.pass);
        CHECK(rep.worst() < 1e-4);
    }
}

TEST_CASE("l2_normalize basics") {
    Graph g;
    int x = g.input("x", {1, 2});
    int n = g.l2norm(x);
    g.set_input("x", Tensor({1, 2}, {3.0, 4.0}));
    const Tensor& out = g.forward(n);
    CHECK(out[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(0.8).epsilon(1e-15));

    // idempotence: unit vector unchanged
    g.set_input("x", Tensor({1, 2}, {0.6, 0.8}));
    const Tensor& out2 = g.forward(n);
    CHECK(out2[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(out2[1] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("l2_normalize: random slices have unit norm and pass grad check") {
    Rng rng(77);
    Graph g;
    int x = g.param("x", randt({4, 3}, rng));
    int n = g.l2norm(x);
    const Tensor& out = g.forward(n);
    for (size_t p = 0; p < 4; ++p) {
        double s = 0.0;
        for (size_t j = 0; j < 3; ++j) s += out[p * 3 + j] * out[p * 3 + j];
        CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-12);
    }
    int loss = g.sum(g.mul(n, g.constant(randt({4, 3}, rng))));
    g.forward(loss);
    auto rep = g.grad_check(loss, 1e-3, 1e-4);
    CHECK(rep.pass);
}

TEST_CASE("l2_normalize: degenerate slice aborts") {
    Graph g;
    int x = g.input("x", {1, 3});
    int n = g.l2norm(x);
    g.set_input("x", Tensor({1, 3}));
    CHECK_THROWS_AS(g.forward(n), NumericError);
}

TEST_CASE("grad_check: linear graph is exact, corrupted gradient fails") {
    Graph g;
    int x = g.param("x", Tensor({3}, {1.0, -0.5, 2.0}));
    int y = g.sum(g.scale(x, 3.0));
    g.forward(y);
    auto rep = g.grad_check(y, 1e-3, 1e-4);
    CHECK(rep.pass);
    CHECK(rep.worst() < 1e-10); // exact for linear

    // negative control: deliberately wrong custom gradient
    Graph g2;
    int x2 = g2.param("x", Tensor({3}, {1.0, -0.5, 2.0}));
    int y2 = g2.custom_scalar(
        x2,
        [](const Tensor& t) {
            double s = 0.0;
            for (double v : t.vec()) s += v * v;
            Tensor wrong(t.shape());
            wrong.fill(123.0);
            return std::make_pair(s, std::move(wrong));
        },
        "corrupt");
    g2.forward(y2);
    auto rep2 = g2.grad_check(y2, 1e-3, 1e-4);
    CHECK_FALSE(rep2.pass);
}

TEST_CASE("forward is pure: repeated evaluation is bit-identical") {
    Rng rng(5);
    Graph g;
    int x = g.input("x", {6, 6, 2});
    int w = g.param("w", randt({3, 3, 2, 4}, rng));
    int b = g.param("b", randt({4}, rng));
    int y = g.l2norm(g.softplus(g.conv3x3(x, w, b, 2)));
    Tensor in = randt({6, 6, 2}, rng);
    g.set_input("x", in);
    Tensor first = g.forward(y);
    for (int rep = 0; rep < 3; ++rep) {
        g.set_input("x", in);
        const Tensor& again = g.forward(y);
        for (size_t i = 0; i < first.size(); ++i) CHECK(again[i] == first[i]);
    }
}

TEST_CASE("shape errors name the offending node") {
    Graph g;
    int a = g.input("a", {2, 3});
    int b = g.input("b", {3, 2});
    CHECK_THROWS_AS(g.add(a, b), UsageError);
    CHECK_THROWS_AS(g.set_input("a", Tensor({4})), UsageError);
}

TEST_CASE("every primitive passes finite differences on random inputs") {
    Rng rng(99);
    // add/mul/scale/add_scaled/matmul/bias_add chained into one scalar
    Graph g;
    int p = g.param("p", randt({3, 3}, rng));
    int q = g.param("q", randt({3, 3}, rng));
    int bias = g.param("bias", randt({3}, rng));
    int h = g.add(g.mul(p, q), g.scale(p, 0.5));
    h = g.add_scaled(h, 0.7, g.matmul(p, q), -1.3);
    h = g.bias_add(h, bias);
    int loss = g.sum(g.mul(h, h));
    g.forward(loss);
    auto rep = g.grad_check(loss, 1e-3, 1e-4);
    CHECK(rep.pass);
}
