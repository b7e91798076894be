#include "mdp/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "mdp/errors.hpp"

namespace mdp {

std::vector<ImageClassEmbedding> image_class_embeddings(
    const Tensor& features, const std::vector<LabelId>& labels) {
    if (features.ndim() != 3)
        throw UsageError("image_class_embeddings: features must be [h,w,d]");
    const size_t P = features.dim(0) * features.dim(1);
    const size_t d = features.dim(2);
    if (labels.size() != P)
        throw UsageError("image_class_embeddings: label map size mismatch");
    std::map<LabelId, std::pair<std::vector<double>, size_t>> acc;
    for (size_t p = 0; p < P; ++p) {
        const LabelId y = labels[p];
        if (y == kIgnoreLabel) continue;
        auto& [sum, n] = acc[y];
        if (sum.empty()) sum.assign(d, 0.0);
        for (size_t c = 0; c < d; ++c) sum[c] += features[p * d + c];
        ++n;
    }
    std::vector<ImageClassEmbedding> out;
    out.reserve(acc.size());
    for (auto& [y, sn] : acc) {
        ImageClassEmbedding e;
        e.class_id = y;
        e.pixel_count = sn.second;
        e.embedding = std::move(sn.first);
        for (double& v : e.embedding) v /= static_cast<double>(sn.second);
        out.push_back(std::move(e));
    }
    return out;
}

PrototypeBank::PrototypeBank(size_t num_classes, size_t dim, size_t slots)
    : num_classes_(num_classes), dim_(dim), slots_(slots) {
    if (num_classes == 0 || dim == 0 || slots == 0)
        throw ConfigError("PrototypeBank: sizes must be positive");
}

void PrototypeBank::update(
    const std::vector<std::vector<ImageClassEmbedding>>& batch) {
    Slot slot;
    slot.sums.assign(num_classes_ * dim_, 0.0);
    slot.counts.assign(num_classes_, 0);
    for (const auto& image : batch) {
        for (const auto& e : image) {
            if (e.embedding.size() != dim_)
                throw UsageError("PrototypeBank: embedding dimension " +
                                 std::to_string(e.embedding.size()) +
                                 " does not match bank dim " +
                                 std::to_string(dim_));
            if (e.class_id >= num_classes_)
                throw UsageError("PrototypeBank: class id out of range");
            for (size_t c = 0; c < dim_; ++c)
                slot.sums[e.class_id * dim_ + c] += e.embedding[c];
            slot.counts[e.class_id] += 1; // one vote per image
        }
    }
    if (live_.size() == slots_) live_.pop_front();
    live_.push_back(std::move(slot));
}

PrototypeSnapshot PrototypeBank::snapshot() const {
    PrototypeSnapshot snap;
    snap.raw = Tensor({num_classes_, dim_});
    snap.prototypes = Tensor({num_classes_, dim_});
    snap.valid.assign(num_classes_, 0);
    std::vector<double> sums(num_classes_ * dim_, 0.0);
    std::vector<uint64_t> counts(num_classes_, 0);
    for (const auto& slot : live_) {
        for (size_t k = 0; k < sums.size(); ++k) sums[k] += slot.sums[k];
        for (size_t y = 0; y < num_classes_; ++y) counts[y] += slot.counts[y];
    }
    for (size_t y = 0; y < num_classes_; ++y) {
        if (counts[y] == 0) continue;
        snap.valid[y] = 1;
        double norm = 0.0;
        for (size_t c = 0; c < dim_; ++c) {
            const double v = sums[y * dim_ + c] / static_cast<double>(counts[y]);
            snap.raw[y * dim_ + c] = v;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm < 1e-12)
            throw NumericError("PrototypeBank: degenerate prototype for class " +
                               std::to_string(y));
        for (size_t c = 0; c < dim_; ++c)
            snap.prototypes[y * dim_ + c] = snap.raw[y * dim_ + c] / norm;
    }
    return snap;
}

std::vector<uint64_t> PrototypeBank::total_counts() const {
    std::vector<uint64_t> counts(num_classes_, 0);
    for (const auto& slot : live_)
        for (size_t y = 0; y < num_classes_; ++y) counts[y] += slot.counts[y];
    return counts;
}

void PrototypeBank::serialize(std::ostream& os) const {
    auto put = [&os](auto v) {
        os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    };
    put(static_cast<uint64_t>(num_classes_));
    put(static_cast<uint64_t>(dim_));
    put(static_cast<uint64_t>(slots_));
    put(static_cast<uint64_t>(live_.size()));
    for (const auto& slot : live_) {
        os.write(reinterpret_cast<const char*>(slot.sums.data()),
                 static_cast<std::streamsize>(slot.sums.size() * sizeof(double)));
        os.write(reinterpret_cast<const char*>(slot.counts.data()),
                 static_cast<std::streamsize>(slot.counts.size() *
                                              sizeof(uint64_t)));
    }
}

PrototypeBank PrototypeBank::deserialize(std::istream& is) {
    auto get = [&is](auto& v) {
        is.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!is) throw DataError("PrototypeBank: truncated state");
    };
    uint64_t nc, d, slots, live;
    get(nc);
    get(d);
    get(slots);
    get(live);
    PrototypeBank bank(nc, d, slots);
    for (uint64_t s = 0; s < live; ++s) {
        Slot slot;
        slot.sums.resize(nc * d);
        slot.counts.resize(nc);
        is.read(reinterpret_cast<char*>(slot.sums.data()),
                static_cast<std::streamsize>(slot.sums.size() * sizeof(double)));
        is.read(reinterpret_cast<char*>(slot.counts.data()),
                static_cast<std::streamsize>(slot.counts.size() *
                                             sizeof(uint64_t)));
        if (!is) throw DataError("PrototypeBank: truncated slot data");
        bank.live_.push_back(std::move(slot));
    }
    return bank;
}

bool PrototypeBank::operator==(const PrototypeBank& o) const {
    if (num_classes_ != o.num_classes_ || dim_ != o.dim_ || slots_ != o.slots_ ||
        live_.size() != o.live_.size())
        return false;
    for (size_t i = 0; i < live_.size(); ++i)
        if (live_[i].sums != o.live_[i].sums ||
            live_[i].counts != o.live_[i].counts)
            return false;
    return true;
}

RegionBank::RegionBank(size_t num_classes, size_t dim, size_t capacity)
    : num_classes_(num_classes), dim_(dim), capacity_(capacity) {
    if (num_classes == 0 || dim == 0 || capacity == 0)
        throw ConfigError("RegionBank: sizes must be positive");
}

void RegionBank::update(
    const std::vector<std::vector<ImageClassEmbedding>>& batch) {
    for (const auto& image : batch) {
        for (const auto& e : image) {
            if (e.embedding.size() != dim_)
                throw UsageError("RegionBank: embedding dimension mismatch");
            if (e.class_id >= num_classes_)
                throw UsageError("RegionBank: class id out of range");
            fifo_.emplace_back(e.class_id, e.embedding);
            if (fifo_.size() > capacity_) fifo_.pop_front();
        }
    }
}

std::vector<std::vector<std::vector<double>>> RegionBank::snapshot() const {
    std::vector<std::vector<std::vector<double>>> out(num_classes_);
    for (const auto& [y, emb] : fifo_) out[y].push_back(emb);
    return out;
}

std::vector<size_t> RegionBank::slots_per_class() const {
    std::vector<size_t> out(num_classes_, 0);
    for (const auto& [y, emb] : fifo_) ++out[y];
    return out;
}

PrototypeSnapshot RegionBank::prototype_snapshot() const {
    PrototypeSnapshot snap;
    snap.raw = Tensor({num_classes_, dim_});
    snap.prototypes = Tensor({num_classes_, dim_});
    snap.valid.assign(num_classes_, 0);
    std::vector<size_t> counts(num_classes_, 0);
    for (const auto& [y, emb] : fifo_) {
        for (size_t c = 0; c < dim_; ++c) snap.raw[y * dim_ + c] += emb[c];
        ++counts[y];
    }
    for (size_t y = 0; y < num_classes_; ++y) {
        if (counts[y] == 0) continue;
        snap.valid[y] = 1;
        double norm = 0.0;
        for (size_t c = 0; c < dim_; ++c) {
            snap.raw[y * dim_ + c] /= static_cast<double>(counts[y]);
            norm += snap.raw[y * dim_ + c] * snap.raw[y * dim_ + c];
        }
        norm = std::sqrt(norm);
        if (norm < 1e-12)
            throw NumericError("RegionBank: degenerate prototype for class " +
                               std::to_string(y));
        for (size_t c = 0; c < dim_; ++c)
            snap.prototypes[y * dim_ + c] = snap.raw[y * dim_ + c] / norm;
    }
    return snap;
}

void RegionBank::serialize(std::ostream& os) const {
    auto put = [&os](auto v) {
        os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    };
    put(static_cast<uint64_t>(num_classes_));
    put(static_cast<uint64_t>(dim_));
    put(static_cast<uint64_t>(capacity_));
    put(static_cast<uint64_t>(fifo_.size()));
    for (const auto& [y, emb] : fifo_) {
        put(static_cast<uint16_t>(y));
        os.write(reinterpret_cast<const char*>(emb.data()),
                 static_cast<std::streamsize>(emb.size() * sizeof(double)));
    }
}

RegionBank RegionBank::deserialize(std::istream& is) {
    auto get = [&is](auto& v) {
        is.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!is) throw DataError("RegionBank: truncated state");
    };
    uint64_t nc, d, cap, n;
    get(nc);
    get(d);
    get(cap);
    get(n);
    RegionBank bank(nc, d, cap);
    for (uint64_t i = 0; i < n; ++i) {
        uint16_t y;
        get(y);
        std::vector<double> emb(d);
        is.read(reinterpret_cast<char*>(emb.data()),
                static_cast<std::streamsize>(emb.size() * sizeof(double)));
        if (!is) throw DataError("RegionBank: truncated embedding");
        bank.fifo_.emplace_back(static_cast<LabelId>(y), std::move(emb));
    }
    return bank;
}

std::vector<LabelId> topk_similar(const PrototypeSnapshot& snap, LabelId j,
                                  size_t k, bool* short_list) {
    const size_t nc = snap.valid.size();
    const size_t d = snap.prototypes.dim(1);
    if (j >= nc || !snap.valid[j])
        throw UsageError("topk_similar: class " + std::to_string(j) +
                         " has no valid prototype");
    std::vector<std::pair<double, LabelId>> sims;
    for (size_t y = 0; y < nc; ++y) {
        if (y == j || !snap.valid[y]) continue;
        double dot = 0.0;
        for (size_t c = 0; c < d; ++c)
            dot += snap.prototypes[j * d + c] * snap.prototypes[y * d + c];
        sims.emplace_back(dot, static_cast<LabelId>(y));
    }
    std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    if (short_list) *short_list = sims.size() < k;
    std::vector<LabelId> out;
    for (size_t i = 0; i < std::min(k, sims.size()); ++i)
        out.push_back(sims[i].second);
    return out;
}

} // namespace mdp
