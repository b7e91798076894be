#pragma once
// Embedding-quality evaluation: nearest-prototype segmentation, mIoU,
// compactness/separability, and a linear-probe proxy for downstream
// fine-tuning.

#include <cstdint>
#include <vector>

#include "mdp/datasets.hpp"
#include "mdp/encoder.hpp"
#include "mdp/prototypes.hpp"

namespace mdp {

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(size_t num_classes);
    // Ignore pixels (either side) are not scored.
    void add(LabelId truth, LabelId predicted);
    void add_map(const std::vector<LabelId>& truth,
                 const std::vector<LabelId>& predicted);
    uint64_t at(size_t truth, size_t predicted) const;
    uint64_t& at(size_t truth, size_t predicted);
    size_t num_classes() const { return n_; }
    uint64_t total() const;

private:
    size_t n_;
    std::vector<uint64_t> counts_;
};

struct IouResult {
    std::vector<double> per_class;   // valid where scored[c]
    std::vector<uint8_t> scored;     // zero-union classes excluded
    double mean = 0.0;
    size_t excluded = 0;
};

IouResult miou(const ConfusionMatrix& cm);

// Per-pixel argmax of f . P_c over valid classes; ties to lowest class id.
std::vector<LabelId> nearest_prototype_predict(const Tensor& features,
                                               const PrototypeSnapshot& snap);

struct EmbeddingQuality {
    double compactness = 0.0;  // mean cosine(pixel, own-class prototype)
    double separability = 0.0; // mean pairwise cosine between valid prototypes
};

EmbeddingQuality embedding_quality(
    const std::vector<Tensor>& feature_batches,
    const std::vector<std::vector<LabelId>>& labels,
    const PrototypeSnapshot& snap);

// Per-class mean embeddings of the given maps, normalized: a snapshot built
// directly from data rather than the bank (used for probe-time metrics).
PrototypeSnapshot prototypes_from_features(
    const std::vector<Tensor>& feature_batches,
    const std::vector<std::vector<LabelId>>& labels, size_t num_classes);

struct ProbeConfig {
    size_t epochs = 30;
    double lr = 0.2;
    uint64_t seed = 0;
};

struct LinearHead {
    Tensor w; // [d, C]
    Tensor b; // [C]
};

// 1x1-conv classification head trained with softmax cross entropy on frozen
// features; plain SGD over images in seeded order.
LinearHead train_linear_head(const std::vector<Tensor>& feats,
                             const std::vector<std::vector<LabelId>>& labels,
                             size_t num_classes, const ProbeConfig& cfg);

std::vector<LabelId> head_predict(const LinearHead& head, const Tensor& features,
                                  const std::vector<uint8_t>& class_mask);

struct ProbeResult {
    IouResult iou;
    std::vector<LabelId> excluded_classes; // absent from the probe train split
};

ProbeResult linear_probe(const EncoderConfig& cfg, const ParamMap& params,
                         const std::vector<Sample>& train_split,
                         const std::vector<Sample>& eval_split,
                         size_t num_classes, const ProbeConfig& probe_cfg);

} // namespace mdp
