#include "mdp/eval.hpp"

#include <algorithm>
#include <cmath>

#include "mdp/augment.hpp"
#include "mdp/errors.hpp"
#include "mdp/rng.hpp"

namespace mdp {

ConfusionMatrix::ConfusionMatrix(size_t num_classes)
    : n_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes == 0) throw ConfigError("ConfusionMatrix: need >= 1 class");
}

void ConfusionMatrix::add(LabelId truth, LabelId predicted) {
    if (truth == kIgnoreLabel || predicted == kIgnoreLabel) return;
    if (truth >= n_ || predicted >= n_)
        throw DataError("ConfusionMatrix: label out of range");
    ++counts_[truth * n_ + predicted];
}

void ConfusionMatrix::add_map(const std::vector<LabelId>& truth,
                              const std::vector<LabelId>& predicted) {
    if (truth.size() != predicted.size())
        throw UsageError("ConfusionMatrix: map size mismatch");
    for (size_t i = 0; i < truth.size(); ++i) add(truth[i], predicted[i]);
}

uint64_t ConfusionMatrix::at(size_t truth, size_t predicted) const {
    return counts_[truth * n_ + predicted];
}

uint64_t& ConfusionMatrix::at(size_t truth, size_t predicted) {
    return counts_[truth * n_ + predicted];
}

uint64_t ConfusionMatrix::total() const {
    uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

IouResult miou(const ConfusionMatrix& cm) {
    const size_t n = cm.num_classes();
    IouResult out;
    out.per_class.assign(n, 0.0);
    out.scored.assign(n, 0);
    double sum = 0.0;
    size_t scored = 0;
    for (size_t c = 0; c < n; ++c) {
        const uint64_t tp = cm.at(c, c);
        uint64_t fp = 0, fn = 0;
        for (size_t o = 0; o < n; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const uint64_t uni = tp + fp + fn;
        if (uni == 0) {
            ++out.excluded;
            continue;
        }
        out.per_class[c] = static_cast<double>(tp) / static_cast<double>(uni);
        out.scored[c] = 1;
        sum += out.per_class[c];
        ++scored;
    }
    if (scored == 0)
        throw NumericError("miou: every class has zero union, result undefined");
    out.mean = sum / static_cast<double>(scored);
    return out;
}

std::vector<LabelId> nearest_prototype_predict(const Tensor& features,
                                               const PrototypeSnapshot& snap) {
    const size_t d = snap.prototypes.dim(1);
    const size_t nc = snap.valid.size();
    if (features.shape().back() != d)
        throw UsageError("nearest_prototype_predict: dim mismatch");
    if (snap.num_valid() == 0)
        throw UsageError("nearest_prototype_predict: no valid prototypes");
    const size_t P = features.size() / d;
    std::vector<LabelId> out(P);
    for (size_t p = 0; p < P; ++p) {
        const double* f = features.data() + p * d;
        double best = -1e300;
        LabelId arg = 0;
        for (size_t c = 0; c < nc; ++c) {
            if (!snap.valid[c]) continue;
            const double* proto = snap.prototypes.data() + c * d;
            double s = 0.0;
            for (size_t i = 0; i < d; ++i) s += f[i] * proto[i];
            if (s > best) { // strict: ties keep the lowest class id
                best = s;
                arg = static_cast<LabelId>(c);
            }
        }
        out[p] = arg;
    }
    return out;
}

EmbeddingQuality embedding_quality(
    const std::vector<Tensor>& feature_batches,
    const std::vector<std::vector<LabelId>>& labels,
    const PrototypeSnapshot& snap) {
    if (feature_batches.size() != labels.size())
        throw UsageError("embedding_quality: batch count mismatch");
    const size_t d = snap.prototypes.dim(1);
    const size_t nc = snap.valid.size();
    double comp_sum = 0.0;
    size_t comp_n = 0;
    for (size_t b = 0; b < feature_batches.size(); ++b) {
        const Tensor& F = feature_batches[b];
        const size_t P = F.size() / d;
        if (labels[b].size() != P)
            throw UsageError("embedding_quality: label map mismatch");
        for (size_t p = 0; p < P; ++p) {
            const LabelId y = labels[b][p];
            if (y == kIgnoreLabel || y >= nc || !snap.valid[y]) continue;
            const double* f = F.data() + p * d;
            const double* proto = snap.prototypes.data() + y * d;
            double s = 0.0;
            for (size_t i = 0; i < d; ++i) s += f[i] * proto[i];
            comp_sum += s;
            ++comp_n;
        }
    }
    double sep_sum = 0.0;
    size_t sep_n = 0;
    for (size_t a = 0; a < nc; ++a) {
        if (!snap.valid[a]) continue;
        for (size_t c = a + 1; c < nc; ++c) {
            if (!snap.valid[c]) continue;
            double s = 0.0;
            for (size_t i = 0; i < d; ++i)
                s += snap.prototypes[a * d + i] * snap.prototypes[c * d + i];
            sep_sum += s;
            ++sep_n;
        }
    }
    EmbeddingQuality q;
    q.compactness = comp_n ? comp_sum / static_cast<double>(comp_n) : 0.0;
    q.separability = sep_n ? sep_sum / static_cast<double>(sep_n) : 0.0;
    return q;
}

PrototypeSnapshot prototypes_from_features(
    const std::vector<Tensor>& feature_batches,
    const std::vector<std::vector<LabelId>>& labels, size_t num_classes) {
    PrototypeBank bank(num_classes, feature_batches.empty()
                                        ? 1
                                        : feature_batches[0].shape().back(),
                       1);
    std::vector<std::vector<ImageClassEmbedding>> batch;
    for (size_t b = 0; b < feature_batches.size(); ++b)
        batch.push_back(image_class_embeddings(feature_batches[b], labels[b]));
    bank.update(batch);
    return bank.snapshot();
}

LinearHead train_linear_head(const std::vector<Tensor>& feats,
                             const std::vector<std::vector<LabelId>>& labels,
                             size_t num_classes, const ProbeConfig& cfg) {
    if (feats.empty()) throw UsageError("train_linear_head: no training data");
    const size_t d = feats[0].shape().back();
    LinearHead head;
    head.w = Tensor({d, num_classes});
    head.b = Tensor({num_classes});
    Rng rng(mix_seed(cfg.seed, "probe_init"));
    for (size_t i = 0; i < head.w.size(); ++i)
        head.w[i] = 0.01 * rng.normal();

    std::vector<size_t> order(feats.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(cfg.seed, "probe_order"));
    for (size_t e = 0; e < cfg.epochs; ++e) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
        for (size_t oi : order) {
            const Tensor& F = feats[oi];
            const auto& Y = labels[oi];
            const size_t P = F.size() / d;
            Tensor dw({d, num_classes}), db({num_classes});
            size_t counted = 0;
            for (size_t p = 0; p < P; ++p) {
                const LabelId y = Y[p];
                if (y == kIgnoreLabel || y >= num_classes) continue;
                const double* f = F.data() + p * d;
                std::vector<double> logits(num_classes);
                double mx = -1e300;
                for (size_t c = 0; c < num_classes; ++c) {
                    double s = head.b[c];
                    for (size_t i2 = 0; i2 < d; ++i2)
                        s += f[i2] * head.w[i2 * num_classes + c];
                    logits[c] = s;
                    mx = std::max(mx, s);
                }
                double z = 0.0;
                for (double l : logits) z += std::exp(l - mx);
                for (size_t c = 0; c < num_classes; ++c) {
                    const double s = std::exp(logits[c] - mx) / z;
                    const double g = s - (c == y ? 1.0 : 0.0);
                    db[c] += g;
                    for (size_t i2 = 0; i2 < d; ++i2)
                        dw[i2 * num_classes + c] += f[i2] * g;
                }
                ++counted;
            }
            if (counted == 0) continue;
            const double scale = cfg.lr / static_cast<double>(counted);
            for (size_t i2 = 0; i2 < head.w.size(); ++i2)
                head.w[i2] -= scale * dw[i2];
            for (size_t c = 0; c < num_classes; ++c)
                head.b[c] -= scale * db[c];
        }
    }
    return head;
}

std::vector<LabelId> head_predict(const LinearHead& head, const Tensor& features,
                                  const std::vector<uint8_t>& class_mask) {
    const size_t d = head.w.dim(0), nc = head.w.dim(1);
    const size_t P = features.size() / d;
    std::vector<LabelId> out(P);
    for (size_t p = 0; p < P; ++p) {
        const double* f = features.data() + p * d;
        double best = -1e300;
        LabelId arg = 0;
        for (size_t c = 0; c < nc; ++c) {
            if (!class_mask.empty() && !class_mask[c]) continue;
            double s = head.b[c];
            for (size_t i = 0; i < d; ++i) s += f[i] * head.w[i * nc + c];
            if (s > best) {
                best = s;
                arg = static_cast<LabelId>(c);
            }
        }
        out[p] = arg;
    }
    return out;
}

ProbeResult linear_probe(const EncoderConfig& cfg, const ParamMap& params,
                         const std::vector<Sample>& train_split,
                         const std::vector<Sample>& eval_split,
                         size_t num_classes, const ProbeConfig& probe_cfg) {
    if (train_split.empty() || eval_split.empty())
        throw UsageError("linear_probe: empty split");
    EncoderNet net(cfg, train_split[0].height, train_split[0].width);
    net.set_params(params);
    const size_t factor = cfg.stride();

    std::vector<Tensor> feats;
    std::vector<std::vector<LabelId>> labels;
    std::vector<uint8_t> present(num_classes, 0);
    for (const auto& s : train_split) {
        feats.push_back(net.embed(s.image_tensor()));
        labels.push_back(
            downsample_labels(s.labels, s.height, s.width, factor));
        for (LabelId y : labels.back())
            if (y != kIgnoreLabel && y < num_classes) present[y] = 1;
    }
    LinearHead head = train_linear_head(feats, labels, num_classes, probe_cfg);

    ProbeResult res;
    for (size_t c = 0; c < num_classes; ++c)
        if (!present[c]) res.excluded_classes.push_back(static_cast<LabelId>(c));

    ConfusionMatrix cm(num_classes);
    for (const auto& s : eval_split) {
        const Tensor F = net.embed(s.image_tensor());
        auto truth = downsample_labels(s.labels, s.height, s.width, factor);
        // ground truth of an untrainable class is not scored
        for (auto& y : truth)
            if (y != kIgnoreLabel && (y >= num_classes || !present[y]))
                y = kIgnoreLabel;
        cm.add_map(truth, head_predict(head, F, present));
    }
    res.iou = miou(cm);
    return res;
}

} // namespace mdp
