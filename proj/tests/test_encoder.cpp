#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mdp/encoder.hpp"
#include "mdp/errors.hpp"
#include "mdp/rng.hpp"

using namespace mdp;

namespace {

Tensor random_image(size_t h, size_t w, size_t c, Rng& rng) {
    Tensor x({h, w, c});
    for (auto& v : x.vec()) v = rng.uniform();
    return x;
}

} // namespace

TEST_CASE("init: seeded determinism and key copy semantics") {
    EncoderConfig cfg;
    ParamMap a = init_encoder(cfg, 7);
    ParamMap b = init_encoder(cfg, 7);
    REQUIRE(a.size() == b.size());
    for (const auto& [name, t] : a) {
        REQUIRE(b.count(name));
        for (size_t i = 0; i < t.size(); ++i) CHECK(t[i] == b.at(name)[i]);
    }
    CHECK(param_distance(a, b) == 0.0);

    ParamMap other = init_encoder(cfg, 8);
    CHECK(param_distance(a, other) > 0.0);

    // key starts as an exact copy of query
    ParamMap key = a;
    CHECK(param_distance(key, a) == 0.0);
}

TEST_CASE("init: weight variance approximately 2/fan_in on large layers") {
    EncoderConfig cfg;
    cfg.conv_channels = {32, 64, 64};
    cfg.head_hidden = 64;
    cfg.embed_dim = 64;
    ParamMap p = init_encoder(cfg, 11);
    for (const auto& [name, t] : p) {
        if (name.find(".w") == std::string::npos) continue;
        if (t.size() < 2048) continue; // variance estimate too noisy below
        size_t fan_in = 1;
        const auto& s = t.shape();
        for (size_t i = 0; i + 1 < s.size(); ++i) fan_in *= s[i];
        double mean = 0.0;
        for (size_t i = 0; i < t.size(); ++i) mean += t[i];
        mean /= double(t.size());
        double var = 0.0;
        for (size_t i = 0; i < t.size(); ++i)
            var += (t[i] - mean) * (t[i] - mean);
        var /= double(t.size());
        const double target = 2.0 / double(fan_in);
        CHECK(var > 0.8 * target);
        CHECK(var < 1.2 * target);
    }
}

TEST_CASE("embed: unit pixel norms, output shape, determinism") {
    EncoderConfig cfg;
    cfg.conv_channels = {8, 8, 8};
    cfg.head_hidden = 8;
    cfg.embed_dim = 8;
    EncoderNet net(cfg, 12, 16);
    net.set_params(init_encoder(cfg, 3));
    Rng rng(30);
    Tensor x = random_image(12, 16, 3, rng);
    Tensor f = net.embed(x);
    CHECK(net.out_height() == 6);
    CHECK(net.out_width() == 8);
    REQUIRE(f.shape() == std::vector<size_t>({6, 8, 8}));
    for (size_t p = 0; p < 6 * 8; ++p) {
        double n = 0.0;
        for (size_t c = 0; c < 8; ++c) n += f[p * 8 + c] * f[p * 8 + c];
        CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-12);
    }

    Tensor again = net.embed(x);
    for (size_t i = 0; i < f.size(); ++i) CHECK(again[i] == f[i]);
}

TEST_CASE("embed: zero projection weights reduce to normalize(bias)") {
    EncoderConfig cfg;
    cfg.conv_channels = {4, 4, 4};
    cfg.head_hidden = 4;
    cfg.embed_dim = 3;
    ParamMap p = init_encoder(cfg, 5);
    // zero the final projection weight, set its bias to a fixed vector
    for (auto& [name, t] : p) {
        if (name == "head1.w") t.fill(0.0);
        if (name == "head1.b") t = Tensor({3}, {3.0, 0.0, 4.0});
    }
    EncoderNet net(cfg, 8, 8);
    net.set_params(p);
    Rng rng(31);
    Tensor f = net.embed(random_image(8, 8, 3, rng));
    for (size_t px = 0; px < 16; ++px) {
        CHECK(f[px * 3 + 0] == doctest::Approx(0.6).epsilon(1e-12));
        CHECK(f[px * 3 + 1] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(f[px * 3 + 2] == doctest::Approx(0.8).epsilon(1e-12));
    }
}

TEST_CASE("embed: input size must divide the stride") {
    EncoderConfig cfg;
    CHECK_THROWS_AS(EncoderNet(cfg, 7, 8), ConfigError);
    CHECK_THROWS_AS(EncoderNet(cfg, 8, 9), ConfigError);
}

TEST_CASE("config validation: tiny embedding dim rejected") {
    EncoderConfig cfg;
    cfg.embed_dim = 1;
    CHECK_THROWS_AS(init_encoder(cfg, 0), ConfigError);
}

TEST_CASE("momentum_update: endpoints, fixed point, elementwise oracle") {
    EncoderConfig cfg;
    cfg.conv_channels = {4, 4};
    cfg.head_hidden = 4;
    cfg.embed_dim = 4;
    ParamMap q = init_encoder(cfg, 1);
    ParamMap k = init_encoder(cfg, 2);

    // m = 0: key becomes query exactly
    ParamMap k0 = k;
    momentum_update(k0, q, 0.0);
    CHECK(param_distance(k0, q) == 0.0);

    // key == query: fixed point at any m
    ParamMap kq = q;
    momentum_update(kq, q, 0.999);
    CHECK(param_distance(kq, q) == 0.0);

    // m = 0.999: elementwise oracle within 1e-15
    ParamMap k9 = k;
    momentum_update(k9, q, 0.999);
    for (const auto& [name, t] : k9)
        for (size_t i = 0; i < t.size(); ++i)
            CHECK(std::abs(t[i] -
                           (0.999 * k.at(name)[i] + 0.001 * q.at(name)[i])) <
                  1e-15);

    CHECK_THROWS_AS(momentum_update(k, q, 1.0), ConfigError);
    CHECK_THROWS_AS(momentum_update(k, q, -0.1), ConfigError);

    ParamMap wrong = init_encoder(EncoderConfig{}, 3);
    CHECK_THROWS_AS(momentum_update(wrong, q, 0.5), UsageError);
}

TEST_CASE("momentum_update: key-query distance is non-increasing") {
    EncoderConfig cfg;
    cfg.conv_channels = {4, 4};
    cfg.head_hidden = 4;
    cfg.embed_dim = 4;
    ParamMap q = init_encoder(cfg, 1);
    ParamMap k = init_encoder(cfg, 2);
    const double initial = param_distance(k, q);
    double prev = initial;
    CHECK(prev > 0.0);
    for (int t = 0; t < 50; ++t) {
        momentum_update(k, q, 0.9);
        const double d = param_distance(k, q);
        CHECK(d <= prev);
        prev = d;
    }
    CHECK(prev < 0.01 * initial); // geometric decay toward the frozen query
}
