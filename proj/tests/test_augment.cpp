#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "mdp/augment.hpp"
#include "mdp/errors.hpp"

using namespace mdp;

namespace {
Sample make_sample(size_t hw, uint16_t dataset_id, uint64_t seed) {
    Sample s;
    s.dataset_id = dataset_id;
    s.height = s.width = static_cast<uint32_t>(hw);
    s.channels = 3;
    s.image.resize(hw * hw * 3);
    s.labels.resize(hw * hw);
    Rng rng(seed);
    for (auto& v : s.image) v = static_cast<float>(rng.uniform());
    for (auto& l : s.labels) l = static_cast<LabelId>(rng.uniform_int(5));
    return s;
}
} // namespace

TEST_CASE("make_views: identity config reproduces the source") {
    Sample src = make_sample(16, 0, 1);
    ViewPair vp = make_views(src, AugConfig::identity(), 42);
    CHECK(vp.view_q.image == src.image);
    CHECK(vp.view_q.labels == src.labels);
    CHECK(vp.view_k.image == src.image);
    CHECK(vp.view_k.labels == src.labels);
}

TEST_CASE("make_views: deterministic in the seed") {
    Sample src = make_sample(20, 0, 2);
    AugConfig cfg; // full augmentation
    ViewPair a = make_views(src, cfg, 7);
    ViewPair b = make_views(src, cfg, 7);
    CHECK(a.view_q.image == b.view_q.image);
    CHECK(a.view_q.labels == b.view_q.labels);
    CHECK(a.view_k.image == b.view_k.image);
    ViewPair c = make_views(src, cfg, 8);
    CHECK(a.view_q.image != c.view_q.image);
}

TEST_CASE("make_views: pure flip mirrors labels") {
    Sample src = make_sample(16, 0, 3);
    AugConfig cfg = AugConfig::identity();
    cfg.hflip_prob = 1.0;
    ViewPair vp = make_views(src, cfg, 5);
    const size_t W = src.width;
    for (size_t i = 0; i < src.height; ++i)
        for (size_t j = 0; j < W; ++j)
            CHECK(vp.view_q.label_at(i, j) == src.label_at(i, W - 1 - j));
}

TEST_CASE("make_views: every label traces back through the recorded map") {
    Sample src = make_sample(24, 0, 4);
    AugConfig cfg;
    cfg.jitter = 0.0; // geometry only relevant for labels anyway
    for (uint64_t seed : {1, 2, 3, 4, 5, 6, 7, 8}) {
        ViewPair vp = make_views(src, cfg, seed);
        for (const auto* side : {&vp}) {
            for (size_t i = 0; i < src.height; ++i)
                for (size_t j = 0; j < src.width; ++j) {
                    auto [si, sj] = source_coord(side->rec_q, i, j, src.height,
                                                 src.width);
                    CHECK(side->view_q.label_at(i, j) == src.label_at(si, sj));
                    auto [ki, kj] = source_coord(side->rec_k, i, j, src.height,
                                                 src.width);
                    CHECK(side->view_k.label_at(i, j) == src.label_at(ki, kj));
                }
        }
    }
}

TEST_CASE("cutmix endpoints are exact") {
    Sample a = make_sample(16, 0, 5), b = make_sample(16, 1, 6);
    std::vector<uint8_t> ones(16 * 16, 1), zeros(16 * 16, 0);
    MixedSample mi = cutmix(a, b, ones);
    CHECK(mi.sample.image == a.image);
    CHECK(mi.sample.labels == a.labels);
    MixedSample mj = cutmix(a, b, zeros);
    CHECK(mj.sample.image == b.image);
    CHECK(mj.sample.labels == b.labels);
}

TEST_CASE("cutmix: pixels from sample_i equal sum(M)") {
    Sample a = make_sample(16, 0, 7), b = make_sample(16, 1, 8);
    for (auto& l : a.labels) l = 1;
    for (auto& l : b.labels) l = 2;
    Rng rng(9);
    for (int rep = 0; rep < 10; ++rep) {
        auto mask = random_rect_mask(16, 16, rng);
        size_t mask_sum = 0;
        for (auto m : mask) mask_sum += m;
        MixedSample mixed = cutmix(a, b, mask);
        size_t from_a = 0;
        for (auto l : mixed.sample.labels) from_a += (l == 1);
        CHECK(from_a == mask_sum);
    }
}

TEST_CASE("cutmix: invalid inputs rejected") {
    Sample a = make_sample(16, 0, 10), b = make_sample(8, 1, 11);
    std::vector<uint8_t> mask(16 * 16, 1);
    CHECK_THROWS_AS(cutmix(a, b, mask), DataError); // shape mismatch
    Sample c = make_sample(16, 1, 12);
    mask[3] = 2; // non-binary
    CHECK_THROWS_AS(cutmix(a, c, mask), DataError);
}

TEST_CASE("mixup endpoints, midpoint and envelope") {
    Sample a = make_sample(16, 0, 13), b = make_sample(16, 1, 14);
    MixedSample m1 = mixup(a, b, 1.0);
    CHECK(m1.sample.image == a.image); // bit-exact endpoint
    CHECK(m1.labels_i == a.labels);
    CHECK(m1.labels_j == b.labels);
    CHECK(m1.mode == MixMode::Pixel);
    // pixel mode never exposes a merged label map
    for (auto l : m1.sample.labels) CHECK(l == kIgnoreLabel);

    Sample z = a, o = a;
    std::fill(z.image.begin(), z.image.end(), 0.0f);
    std::fill(o.image.begin(), o.image.end(), 1.0f);
    MixedSample mid = mixup(z, o, 0.5);
    for (float v : mid.sample.image) CHECK(v == 0.5f);

    MixedSample m3 = mixup(a, b, 0.3);
    for (size_t i = 0; i < a.image.size(); ++i) {
        CHECK(m3.sample.image[i] >= std::min(a.image[i], b.image[i]) - 1e-6f);
        CHECK(m3.sample.image[i] <= std::max(a.image[i], b.image[i]) + 1e-6f);
    }

    CHECK_THROWS_AS(mixup(a, b, 1.5), ConfigError);
    CHECK_THROWS_AS(mixup(a, b, -0.1), ConfigError);
}

TEST_CASE("downsample_labels semantics") {
    // factor 1 identity
    std::vector<LabelId> m = {1, 2, 3, 4};
    CHECK(downsample_labels(m, 2, 2, 1) == m);
    // constant map stays constant
    std::vector<LabelId> c(36, 7);
    auto down = downsample_labels(c, 6, 6, 2);
    CHECK(down == std::vector<LabelId>(9, 7));
    // 4x4 checkerboard, factor 2: top-left of each cell
    std::vector<LabelId> cb = {0, 1, 0, 1,
                               1, 0, 1, 0,
                               0, 1, 0, 1,
                               1, 0, 1, 0};
    CHECK(downsample_labels(cb, 4, 4, 2) ==
          std::vector<LabelId>{0, 0, 0, 0});
    // ignore passes through
    std::vector<LabelId> ig(16, kIgnoreLabel);
    CHECK(downsample_labels(ig, 4, 4, 2) ==
          std::vector<LabelId>(4, kIgnoreLabel));
    // non-divisible factor rejected
    CHECK_THROWS_AS(downsample_labels(cb, 4, 4, 3), ConfigError);
}

TEST_CASE("uniform partner draws hit cross-dataset pairs at expected rate") {
    // partners drawn uniformly from the combined pool: with two equal-size
    // datasets the cross-dataset probability is 1/2; check a 3-sigma bound.
    Rng rng(99);
    const size_t pool = 64; // 32 per dataset
    const int draws = 4000;
    int cross = 0;
    for (int t = 0; t < draws; ++t) {
        const size_t i = rng.uniform_int(pool), j = rng.uniform_int(pool);
        if ((i < pool / 2) != (j < pool / 2)) ++cross;
    }
    const double p = 0.5, sigma = std::sqrt(p * (1 - p) * draws);
    CHECK(std::abs(cross - p * draws) < 3 * sigma);
}
