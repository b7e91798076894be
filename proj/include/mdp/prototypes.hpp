#pragma once
// Class-prototype memory bank: a ring buffer of per-batch (embedding-sum,
// image-count) statistics, one vote per image per class. Also the region
// embedding bank kept as an ablation baseline, and top-K prototype
// similarity for the sparse-coding loss.

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <vector>

#include "mdp/datasets.hpp"
#include "mdp/tensor.hpp"

namespace mdp {

struct ImageClassEmbedding {
    LabelId class_id = 0;
    std::vector<double> embedding; // mean of that class's pixel embeddings
    size_t pixel_count = 0;
};

// One entry per class present in (features, labels); ignore excluded.
// features: [h,w,d] with unit-normalized pixel rows.
std::vector<ImageClassEmbedding> image_class_embeddings(
    const Tensor& features, const std::vector<LabelId>& labels);

struct PrototypeSnapshot {
    Tensor raw;          // [num_classes, d], sum/count before normalization
    Tensor prototypes;   // [num_classes, d], unit rows where valid
    std::vector<uint8_t> valid;
    size_t num_valid() const {
        size_t n = 0;
        for (auto v : valid) n += v;
        return n;
    }
};

class PrototypeBank {
public:
    PrototypeBank(size_t num_classes, size_t dim, size_t slots);

    // One batch: a list of per-image embedding lists. Evicts the oldest slot
    // once `slots` batches are live.
    void update(const std::vector<std::vector<ImageClassEmbedding>>& batch);

    PrototypeSnapshot snapshot() const;

    size_t num_classes() const { return num_classes_; }
    size_t dim() const { return dim_; }
    size_t capacity() const { return slots_; }
    size_t live_slots() const { return live_.size(); }

    // Aggregated per-class image counts over live slots.
    std::vector<uint64_t> total_counts() const;

    void serialize(std::ostream& os) const;
    static PrototypeBank deserialize(std::istream& is);

    bool operator==(const PrototypeBank& o) const;

private:
    struct Slot {
        std::vector<double> sums;    // num_classes * dim
        std::vector<uint64_t> counts; // num_classes
    };
    size_t num_classes_, dim_, slots_;
    std::deque<Slot> live_;
};

// Baseline bank: one global FIFO over individual image embeddings.
class RegionBank {
public:
    RegionBank(size_t num_classes, size_t dim, size_t capacity);

    void update(const std::vector<std::vector<ImageClassEmbedding>>& batch);
    // Stored embeddings per class, oldest first.
    std::vector<std::vector<std::vector<double>>> snapshot() const;
    std::vector<size_t> slots_per_class() const;
    size_t size() const { return fifo_.size(); }
    size_t capacity() const { return capacity_; }
    size_t num_classes() const { return num_classes_; }
    size_t dim() const { return dim_; }

    // Mean-of-stored-embeddings prototypes, for the bank-type ablation.
    PrototypeSnapshot prototype_snapshot() const;

    void serialize(std::ostream& os) const;
    static RegionBank deserialize(std::istream& is);

private:
    size_t num_classes_, dim_, capacity_;
    std::deque<std::pair<LabelId, std::vector<double>>> fifo_;
};

// The K valid classes (excluding j) most cosine-similar to P_j, ties broken
// by lower class id. If fewer than K exist, returns all and sets short_list.
std::vector<LabelId> topk_similar(const PrototypeSnapshot& snap, LabelId j,
                                  size_t k, bool* short_list = nullptr);

} // namespace mdp
