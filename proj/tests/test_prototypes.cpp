#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "mdp/errors.hpp"
#include "mdp/prototypes.hpp"
#include "mdp/rng.hpp"

using namespace mdp;

namespace {

Tensor unit_features(size_t h, size_t w, size_t d, Rng& rng) {
    Tensor f({h, w, d});
    for (size_t p = 0; p < h * w; ++p) {
        double norm = 0.0;
        for (size_t j = 0; j < d; ++j) {
            f.vec()[p * d + j] = rng.normal();
            norm += f[p * d + j] * f[p * d + j];
        }
        norm = std::sqrt(norm);
        for (size_t j = 0; j < d; ++j) f.vec()[p * d + j] /= norm;
    }
    return f;
}

// One random image's per-class list, embeddings unit-normalized.
std::vector<ImageClassEmbedding> random_image(size_t num_classes, size_t d,
                                              Rng& rng) {
    std::vector<ImageClassEmbedding> out;
    for (size_t c = 0; c < num_classes; ++c) {
        if (!rng.bernoulli(0.7)) continue;
        ImageClassEmbedding e;
        e.class_id = static_cast<LabelId>(c);
        e.pixel_count = 1 + rng.uniform_int(20);
        e.embedding.resize(d);
        double norm = 0.0;
        for (auto& v : e.embedding) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : e.embedding) v /= norm;
        out.push_back(std::move(e));
    }
    return out;
}

// Direct two-step average over all images of all batches: per class, the
// plain mean over image votes (each image one vote), independent of the
// bank's sum/count bookkeeping.
std::vector<std::vector<double>> direct_prototypes(
    const std::vector<std::vector<std::vector<ImageClassEmbedding>>>& batches,
    size_t num_classes, size_t d, std::vector<size_t>* counts_out = nullptr) {
    std::vector<std::vector<double>> sums(num_classes,
                                          std::vector<double>(d, 0.0));
    std::vector<size_t> counts(num_classes, 0);
    for (const auto& batch : batches)
        for (const auto& image : batch)
            for (const auto& e : image) {
                for (size_t j = 0; j < d; ++j)
                    sums[e.class_id][j] += e.embedding[j];
                ++counts[e.class_id];
            }
    for (size_t c = 0; c < num_classes; ++c)
        if (counts[c])
            for (auto& v : sums[c]) v /= double(counts[c]);
    if (counts_out) *counts_out = counts;
    return sums;
}

} // namespace

TEST_CASE("image_class_embeddings: means per class") {
    // single class, identical embeddings
    Tensor f({1, 3, 2});
    for (size_t p = 0; p < 3; ++p) {
        f.vec()[p * 2 + 0] = 0.6;
        f.vec()[p * 2 + 1] = 0.8;
    }
    auto one = image_class_embeddings(f, {4, 4, 4});
    REQUIRE(one.size() == 1);
    CHECK(one[0].class_id == 4);
    CHECK(one[0].pixel_count == 3);
    CHECK(one[0].embedding[0] == doctest::Approx(0.6).epsilon(1e-15));

    // two pixels of one class: (1,0) and (0,1) -> (0.5, 0.5)
    Tensor g({1, 2, 2}, {1, 0, 0, 1});
    auto two = image_class_embeddings(g, {2, 2});
    REQUIRE(two.size() == 1);
    CHECK(two[0].embedding[0] == 0.5);
    CHECK(two[0].embedding[1] == 0.5);

    // ignore-only image: empty list
    CHECK(image_class_embeddings(g, {kIgnoreLabel, kIgnoreLabel}).empty());
}

TEST_CASE("image_class_embeddings: random map matches brute force") {
    Rng rng(21);
    const size_t h = 5, w = 4, d = 3;
    Tensor f = unit_features(h, w, d, rng);
    std::vector<LabelId> labels(h * w);
    for (auto& l : labels)
        l = rng.bernoulli(0.2) ? kIgnoreLabel
                               : static_cast<LabelId>(rng.uniform_int(4));
    auto entries = image_class_embeddings(f, labels);
    std::map<LabelId, std::pair<std::vector<double>, size_t>> brute;
    for (size_t p = 0; p < h * w; ++p) {
        if (labels[p] == kIgnoreLabel) continue;
        auto& [sum, n] = brute[labels[p]];
        sum.resize(d, 0.0);
        for (size_t j = 0; j < d; ++j) sum[j] += f[p * d + j];
        ++n;
    }
    REQUIRE(entries.size() == brute.size());
    for (const auto& e : entries) {
        const auto& [sum, n] = brute.at(e.class_id);
        CHECK(e.pixel_count == n);
        for (size_t j = 0; j < d; ++j)
            CHECK(std::abs(e.embedding[j] - sum[j] / double(n)) < 1e-12);
    }
}

TEST_CASE("bank: single batch gives that batch's per-class means") {
    Rng rng(22);
    const size_t nc = 4, d = 3;
    PrototypeBank bank(nc, d, 5);
    std::vector<std::vector<ImageClassEmbedding>> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_image(nc, d, rng));
    bank.update({batch.begin(), batch.end()});
    auto snap = bank.snapshot();
    auto direct = direct_prototypes({batch}, nc, d);
    for (size_t c = 0; c < nc; ++c) {
        if (!snap.valid[c]) continue;
        for (size_t j = 0; j < d; ++j)
            CHECK(std::abs(snap.raw[c * d + j] - direct[c][j]) < 1e-12);
    }
}

TEST_CASE("bank: B identical batches equal one batch") {
    Rng rng(23);
    const size_t nc = 3, d = 2, B = 4;
    auto batch = std::vector<std::vector<ImageClassEmbedding>>{
        random_image(nc, d, rng), random_image(nc, d, rng)};
    PrototypeBank one(nc, d, B), many(nc, d, B);
    one.update(batch);
    for (size_t t = 0; t < B; ++t) many.update(batch);
    auto s1 = one.snapshot(), sB = many.snapshot();
    for (size_t i = 0; i < s1.raw.size(); ++i)
        CHECK(s1.raw[i] == doctest::Approx(sB.raw[i]).epsilon(1e-14));
}

TEST_CASE("bank: eviction keeps exactly the last B batches") {
    Rng rng(24);
    const size_t nc = 5, d = 4, B = 3;
    std::vector<std::vector<std::vector<ImageClassEmbedding>>> batches;
    for (size_t t = 0; t < B + 2; ++t) {
        std::vector<std::vector<ImageClassEmbedding>> batch;
        for (int i = 0; i < 2; ++i) batch.push_back(random_image(nc, d, rng));
        batches.push_back(std::move(batch));
    }
    PrototypeBank rolling(nc, d, B);
    for (const auto& b : batches) rolling.update(b);
    PrototypeBank rebuilt(nc, d, B);
    for (size_t t = batches.size() - B; t < batches.size(); ++t)
        rebuilt.update(batches[t]);
    CHECK(rolling == rebuilt); // bit-identical sums and counts
}

TEST_CASE("bank snapshot: live-window Eq. 3 fidelity and normalization") {
    Rng rng(25);
    const size_t nc = 6, d = 3, B = 4;
    std::vector<std::vector<std::vector<ImageClassEmbedding>>> batches;
    PrototypeBank bank(nc, d, B);
    for (size_t t = 0; t < B; ++t) {
        std::vector<std::vector<ImageClassEmbedding>> batch;
        for (int i = 0; i < 3; ++i) batch.push_back(random_image(nc, d, rng));
        bank.update(batch);
        batches.push_back(std::move(batch));
    }
    auto snap = bank.snapshot();
    std::vector<size_t> counts;
    auto direct = direct_prototypes(batches, nc, d, &counts);
    for (size_t c = 0; c < nc; ++c) {
        CHECK(snap.valid[c] == (counts[c] > 0 ? 1 : 0));
        if (!counts[c]) continue;
        double norm = 0.0;
        for (size_t j = 0; j < d; ++j) {
            CHECK(std::abs(snap.raw[c * d + j] - direct[c][j]) < 1e-12);
            norm += snap.prototypes[c * d + j] * snap.prototypes[c * d + j];
        }
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-12);
    }
}

TEST_CASE("bank snapshot: hand example (0.5,0.5) -> (0.7071,0.7071)") {
    PrototypeBank bank(1, 2, 2);
    ImageClassEmbedding e1{0, {1.0, 0.0}, 5}, e2{0, {0.0, 1.0}, 7};
    bank.update({{e1}, {e2}});
    auto snap = bank.snapshot();
    CHECK(snap.raw[0] == 0.5);
    CHECK(snap.raw[1] == 0.5);
    CHECK(snap.prototypes[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
    CHECK(snap.prototypes[1] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
}

TEST_CASE("bank: one vote per image regardless of pixel count") {
    // a 1000-pixel image and a 1-pixel image contribute equally
    PrototypeBank bank(1, 2, 2);
    ImageClassEmbedding big{0, {1.0, 0.0}, 1000}, tiny{0, {0.0, 1.0}, 1};
    bank.update({{big}, {tiny}});
    auto snap = bank.snapshot();
    CHECK(snap.raw[0] == 0.5);
    CHECK(snap.raw[1] == 0.5);
}

TEST_CASE("bank: memory claim - state size independent of images seen") {
    Rng rng(26);
    const size_t nc = 4, d = 3, B = 2;
    PrototypeBank few(nc, d, B), many(nc, d, B);
    few.update({random_image(nc, d, rng)});
    few.update({random_image(nc, d, rng)});
    for (int t = 0; t < 50; ++t) {
        std::vector<std::vector<ImageClassEmbedding>> batch;
        for (int i = 0; i < 8; ++i) batch.push_back(random_image(nc, d, rng));
        many.update(batch);
    }
    std::ostringstream a, b;
    few.serialize(a);
    many.serialize(b);
    CHECK(a.str().size() == b.str().size());
}

TEST_CASE("bank: invalid classes excluded; serialization round trip") {
    Rng rng(27);
    PrototypeBank bank(4, 3, 2);
    ImageClassEmbedding only2{2, {1, 0, 0}, 3};
    bank.update({{only2}});
    auto snap = bank.snapshot();
    CHECK(snap.valid == std::vector<uint8_t>{0, 0, 1, 0});
    CHECK(snap.num_valid() == 1);

    std::stringstream ss;
    bank.serialize(ss);
    PrototypeBank back = PrototypeBank::deserialize(ss);
    CHECK(back == bank);
}

TEST_CASE("region bank: FIFO semantics and capacity bound") {
    RegionBank rb(2, 2, 2);
    ImageClassEmbedding a{0, {1, 0}, 1}, b{0, {0, 1}, 1}, c{0, {-1, 0}, 1};
    rb.update({{a}});
    rb.update({{b}});
    rb.update({{c}}); // evicts a
    CHECK(rb.size() == 2);
    auto snap = rb.snapshot();
    REQUIRE(snap[0].size() == 2);
    CHECK(snap[0][0] == std::vector<double>{0, 1});  // oldest kept
    CHECK(snap[0][1] == std::vector<double>{-1, 0}); // newest
    CHECK(snap[1].empty());

    std::stringstream ss;
    rb.serialize(ss);
    RegionBank back = RegionBank::deserialize(ss);
    CHECK(back.size() == rb.size());
    CHECK(back.snapshot() == rb.snapshot());
}

TEST_CASE("imbalance: class bank full-weight prototype vs region bank slots") {
    // two classes with 100:1 image frequency
    Rng rng(28);
    const size_t d = 4;
    PrototypeBank bank(2, d, 101);
    RegionBank rb(2, d, 101);
    std::vector<std::vector<std::vector<ImageClassEmbedding>>> batches;
    for (int t = 0; t < 101; ++t) {
        ImageClassEmbedding e;
        e.class_id = (t == 50) ? 1 : 0; // one rare image in a hundred
        e.pixel_count = 1 + rng.uniform_int(5);
        e.embedding.assign(d, 0.0);
        e.embedding[e.class_id] = 1.0;
        bank.update({{e}});
        rb.update({{e}});
        batches.push_back({{e}});
    }
    auto snap = bank.snapshot();
    std::vector<size_t> counts;
    auto direct = direct_prototypes(batches, 2, d, &counts);
    CHECK(counts[1] == 1);
    for (size_t j = 0; j < d; ++j)
        CHECK(snap.raw[1 * d + j] == direct[1][j]); // exact Eq. 3 value
    CHECK(snap.valid[1] == 1);

    auto slots = rb.slots_per_class();
    CHECK(double(slots[1]) / double(rb.capacity()) <= 0.02);
}

TEST_CASE("prototype invariant to duplicating one image's pixels") {
    PrototypeBank a(1, 2, 2), b(1, 2, 2);
    ImageClassEmbedding e1{0, {0.6, 0.8}, 10}, e2{0, {1.0, 0.0}, 3};
    ImageClassEmbedding e1_dup = e1;
    e1_dup.pixel_count = 20; // duplicated pixels, same per-image mean
    a.update({{e1}, {e2}});
    b.update({{e1_dup}, {e2}});
    auto sa = a.snapshot(), sb = b.snapshot();
    for (size_t i = 0; i < sa.raw.size(); ++i) CHECK(sa.raw[i] == sb.raw[i]);
}

TEST_CASE("topk_similar: ties, dominance, oracle") {
    // orthonormal prototypes: symmetric tie broken by lowest id
    PrototypeSnapshot snap;
    snap.prototypes = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    snap.raw = snap.prototypes;
    snap.valid = {1, 1, 1};
    auto t = topk_similar(snap, 1, 1);
    CHECK(t == std::vector<LabelId>{0});

    // dominant similarity wins
    PrototypeSnapshot s2;
    s2.prototypes = Tensor({3, 2}, {1, 0, 0.99, 0.140716870868, 0, 1});
    s2.raw = s2.prototypes;
    s2.valid = {1, 1, 1};
    CHECK(topk_similar(s2, 0, 1) == std::vector<LabelId>{1});

    // short list flagged
    bool short_list = false;
    auto all = topk_similar(s2, 0, 5, &short_list);
    CHECK(all.size() == 2);
    CHECK(short_list);

    // random instance matches a full-sort oracle
    Rng rng(31);
    const size_t nc = 9, d = 4;
    PrototypeSnapshot s3;
    s3.prototypes = Tensor({nc, d});
    s3.valid.assign(nc, 1);
    s3.valid[4] = 0;
    for (size_t c = 0; c < nc; ++c) {
        double norm = 0.0;
        for (size_t j = 0; j < d; ++j) {
            s3.prototypes.vec()[c * d + j] = rng.normal();
            norm += s3.prototypes[c * d + j] * s3.prototypes[c * d + j];
        }
        norm = std::sqrt(norm);
        for (size_t j = 0; j < d; ++j) s3.prototypes.vec()[c * d + j] /= norm;
    }
    s3.raw = s3.prototypes;
    const LabelId j = 2;
    auto got = topk_similar(s3, j, 5);
    std::vector<std::pair<double, LabelId>> scored;
    for (size_t c = 0; c < nc; ++c) {
        if (!s3.valid[c] || c == j) continue;
        double dot = 0.0;
        for (size_t k = 0; k < d; ++k)
            dot += s3.prototypes[j * d + k] * s3.prototypes[c * d + k];
        scored.push_back({-dot, static_cast<LabelId>(c)});
    }
    std::sort(scored.begin(), scored.end());
    for (size_t i = 0; i < got.size(); ++i) CHECK(got[i] == scored[i].second);

    CHECK_THROWS_AS(topk_similar(s3, 4, 2), UsageError); // invalid anchor
}
