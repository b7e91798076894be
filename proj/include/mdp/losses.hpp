#pragma once
// The five training losses: InfoNCE, pixel-to-pixel, pixel-to-prototype,
// mixup-weighted, and cross-class sparse coding. Every loss returns its
// value and (optionally) the gradient w.r.t. the query features, so it can
// plug into the graph as a custom scalar node.

#include <map>
#include <string>
#include <vector>

#include "mdp/prototypes.hpp"
#include "mdp/rng.hpp"
#include "mdp/tensor.hpp"

namespace mdp {

struct LossConfig {
    double tau = 0.07;
    double alpha = 0.5;
    size_t topk = 5;
    size_t sample_cap = 512; // pixels per view for the pairwise loss
};

struct LossValue {
    double value = 0.0;
    std::map<std::string, double> components;
    size_t pixels = 0;  // pixels that contributed
    size_t skipped = 0; // pixels excluded (invalid prototype / no positives)
    bool short_topk = false;
};

// Eq. in the NCE family: -log( e^{q.k+ / tau} / (e^{q.k+ / tau} + sum_j e^{q.k-_j / tau}) )
LossValue info_nce(const std::vector<double>& q, const std::vector<double>& k_pos,
                   const std::vector<std::vector<double>>& negatives, double tau,
                   std::vector<double>* grad_q = nullptr);

// Stratified per-class pixel subsample of at most `cap` indices, seeded.
std::vector<size_t> stratified_sample(const std::vector<LabelId>& labels,
                                      size_t cap, Rng& rng);

// Symmetrised pairwise loss between two views. Anchors in one view attract
// all same-class pixels of the other; denominators run over every pixel of
// the other view. Gradients flow into Fq only (Fk is the stop-grad key
// view). sel_* restrict each view to a pixel subset; null = all pixels.
LossValue pixel_to_pixel(const Tensor& Fq, const std::vector<LabelId>& Yq,
                         const Tensor& Fk, const std::vector<LabelId>& Yk,
                         double tau, Tensor* grad_Fq = nullptr,
                         const std::vector<size_t>* sel_q = nullptr,
                         const std::vector<size_t>* sel_k = nullptr);

// Per-pixel cross entropy against the prototype matrix; denominator over all
// valid prototypes. Pixels whose ground-truth prototype is invalid are
// skipped and counted in the report.
LossValue pixel_to_prototype(const Tensor& F, const std::vector<LabelId>& Y,
                             const PrototypeSnapshot& snap, double tau,
                             Tensor* grad_F = nullptr);

// Top-K table per class, built once per snapshot.
std::vector<std::vector<LabelId>> build_topk_table(
    const PrototypeSnapshot& snap, size_t k);

// alpha * (ground-truth term) + (1-alpha)/K * sum over top-K similar classes.
// By default the top-K set is anchored on the ground-truth prototype (the
// table); with anchor_on_pixel the K classes most similar to the pixel's own
// embedding are used instead.
LossValue sparse_coding(const Tensor& F, const std::vector<LabelId>& Y,
                        const PrototypeSnapshot& snap,
                        const std::vector<std::vector<LabelId>>& topk_table,
                        double alpha, size_t k, double tau,
                        Tensor* grad_F = nullptr, bool anchor_on_pixel = false);

// lambda * L(F, y_i) + (1-lambda) * L(F, y_j) with L = pixel_to_prototype or
// sparse_coding (when table non-null).
LossValue mixed_loss(const Tensor& F, double lambda,
                     const std::vector<LabelId>& labels_i,
                     const std::vector<LabelId>& labels_j,
                     const PrototypeSnapshot& snap, double tau,
                     Tensor* grad_F = nullptr,
                     const std::vector<std::vector<LabelId>>* topk_table = nullptr,
                     double alpha = 0.5, size_t k = 5);

} // namespace mdp
