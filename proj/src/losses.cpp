#include "mdp/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mdp/errors.hpp"

namespace mdp {

LossValue info_nce(const std::vector<double>& q, const std::vector<double>& k_pos,
                   const std::vector<std::vector<double>>& negatives, double tau,
                   std::vector<double>* grad_q) {
    if (negatives.empty()) throw UsageError("info_nce: no negatives given");
    if (q.size() != k_pos.size()) throw UsageError("info_nce: dim mismatch");
    const size_t d = q.size();
    auto dot = [&](const std::vector<double>& v) {
        double s = 0.0;
        for (size_t c = 0; c < d; ++c) s += q[c] * v[c];
        return s;
    };
    // logit 0 is the positive
    std::vector<double> logits;
    logits.push_back(dot(k_pos) / tau);
    for (const auto& n : negatives) {
        if (n.size() != d) throw UsageError("info_nce: negative dim mismatch");
        logits.push_back(dot(n) / tau);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    const double lse = mx + std::log(z);
    LossValue out;
    out.value = lse - logits[0];
    out.pixels = 1;
    out.components["nce"] = out.value;
    if (grad_q) {
        grad_q->assign(d, 0.0);
        std::vector<double> s(logits.size());
        for (size_t i = 0; i < logits.size(); ++i) s[i] = std::exp(logits[i] - lse);
        for (size_t c = 0; c < d; ++c) {
            double g = (s[0] - 1.0) * k_pos[c];
            for (size_t i = 0; i < negatives.size(); ++i)
                g += s[i + 1] * negatives[i][c];
            (*grad_q)[c] = g / tau;
        }
    }
    return out;
}

std::vector<size_t> stratified_sample(const std::vector<LabelId>& labels,
                                      size_t cap, Rng& rng) {
    std::map<LabelId, std::vector<size_t>> by_class;
    for (size_t p = 0; p < labels.size(); ++p)
        if (labels[p] != kIgnoreLabel) by_class[labels[p]].push_back(p);
    size_t total = 0;
    for (const auto& [y, v] : by_class) total += v.size();
    if (total <= cap) {
        std::vector<size_t> all;
        for (const auto& [y, v] : by_class)
            all.insert(all.end(), v.begin(), v.end());
        std::sort(all.begin(), all.end());
        return all;
    }
    // proportional allocation, at least one pixel per present class
    std::vector<size_t> out;
    for (auto& [y, v] : by_class) {
        size_t take = std::max<size_t>(1, cap * v.size() / total);
        take = std::min(take, v.size());
        // Fisher-Yates prefix
        for (size_t i = 0; i < take; ++i) {
            const size_t j = i + rng.uniform_int(v.size() - i);
            std::swap(v[i], v[j]);
            out.push_back(v[i]);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

std::vector<size_t> all_indices(size_t n) {
    std::vector<size_t> v(n);
    for (size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

// One direction of the pairwise loss: anchors attract same-class pixels of
// the denominator view. Returns (loss sum over contributing anchors, count).
// Gradients are accumulated unscaled; caller applies the final factor.
struct DirectionOut {
    double loss_sum = 0.0;
    size_t contributing = 0;
    size_t skipped = 0;
};

DirectionOut pairwise_direction(const Tensor& Fa, const std::vector<LabelId>& Ya,
                                const std::vector<size_t>& selA,
                                const Tensor& Fd, const std::vector<LabelId>& Yd,
                                const std::vector<size_t>& selD, double tau,
                                double grad_scale, Tensor* grad_anchor,
                                Tensor* grad_denom) {
    const size_t d = Fa.shape().back();
    const size_t nA = selA.size(), nD = selD.size();
    DirectionOut out;
    if (nA == 0 || nD == 0) return out;

    std::vector<double> loss(nA, 0.0);
    std::vector<uint8_t> has_pos(nA, 0);
    // softmax rows kept only when the denominator view needs gradients
    std::vector<double> smat(grad_denom ? nA * nD : 0);
    std::vector<double> pos_count(nA, 0.0);

    const long nAl = static_cast<long>(nA);
#pragma omp parallel for schedule(static)
    for (long ai = 0; ai < nAl; ++ai) {
        const size_t pa = selA[ai];
        const LabelId y = Ya[pa];
        const double* a = Fa.data() + pa * d;
        std::vector<double> logits(nD);
        double mx = -1e300;
        size_t npos = 0;
        for (size_t di = 0; di < nD; ++di) {
            const double* b = Fd.data() + selD[di] * d;
            double s = 0.0;
            for (size_t c = 0; c < d; ++c) s += a[c] * b[c];
            logits[di] = s / tau;
            mx = std::max(mx, logits[di]);
            if (Yd[selD[di]] == y) ++npos;
        }
        if (npos == 0) continue;
        double z = 0.0;
        for (double l : logits) z += std::exp(l - mx);
        const double lse = mx + std::log(z);
        double acc = 0.0;
        for (size_t di = 0; di < nD; ++di)
            if (Yd[selD[di]] == y) acc += lse - logits[di];
        loss[ai] = acc / static_cast<double>(npos);
        has_pos[ai] = 1;
        pos_count[ai] = static_cast<double>(npos);
        if (grad_denom)
            for (size_t di = 0; di < nD; ++di)
                smat[ai * nD + di] = std::exp(logits[di] - lse);
        if (grad_anchor) {
            // d/da = -(1/(tau*npos)) (sum_pos b - npos * sum_k s_k b_k)
            std::vector<double> s(nD);
            for (size_t di = 0; di < nD; ++di) s[di] = std::exp(logits[di] - lse);
            double* ga = grad_anchor->data() + pa * d;
            for (size_t di = 0; di < nD; ++di) {
                const double* b = Fd.data() + selD[di] * d;
                const double pos = Yd[selD[di]] == y ? 1.0 : 0.0;
                const double coef =
                    grad_scale / tau * (s[di] - pos / static_cast<double>(npos));
                for (size_t c = 0; c < d; ++c) ga[c] += coef * b[c];
            }
        }
    }
    for (size_t ai = 0; ai < nA; ++ai) {
        if (has_pos[ai]) {
            out.loss_sum += loss[ai];
            ++out.contributing;
        } else if (Ya[selA[ai]] != kIgnoreLabel) {
            ++out.skipped;
        }
    }
    if (grad_denom && out.contributing > 0) {
        // gather form: fixed anchor order per denominator pixel
        const long nDl = static_cast<long>(nD);
#pragma omp parallel for schedule(static)
        for (long di = 0; di < nDl; ++di) {
            double* gd = grad_denom->data() + selD[di] * d;
            const LabelId yd = Yd[selD[di]];
            for (size_t ai = 0; ai < nA; ++ai) {
                if (!has_pos[ai]) continue;
                const size_t pa = selA[ai];
                const double pos = Ya[pa] == yd ? 1.0 : 0.0;
                const double coef = grad_scale / tau *
                                    (smat[ai * nD + di] - pos / pos_count[ai]);
                const double* a = Fa.data() + pa * d;
                for (size_t c = 0; c < d; ++c) gd[c] += coef * a[c];
            }
        }
    }
    return out;
}

} // namespace

LossValue pixel_to_pixel(const Tensor& Fq, const std::vector<LabelId>& Yq,
                         const Tensor& Fk, const std::vector<LabelId>& Yk,
                         double tau, Tensor* grad_Fq,
                         const std::vector<size_t>* sel_q,
                         const std::vector<size_t>* sel_k) {
    if (tau <= 0.0) throw ConfigError("pixel_to_pixel: tau must be positive");
    const size_t d = Fq.shape().back();
    if (Fk.shape().back() != d) throw UsageError("pixel_to_pixel: dim mismatch");
    const size_t Pq = Fq.size() / d, Pk = Fk.size() / d;
    if (Yq.size() != Pq || Yk.size() != Pk)
        throw UsageError("pixel_to_pixel: label map size mismatch");
    // ignore-labeled pixels never act as anchors, positives, or denominator
    // entries
    auto drop_ignore = [](std::vector<size_t> v, const std::vector<LabelId>& y) {
        std::erase_if(v, [&](size_t p) { return y[p] == kIgnoreLabel; });
        return v;
    };
    std::vector<size_t> aq =
        drop_ignore(sel_q ? *sel_q : all_indices(Pq), Yq);
    std::vector<size_t> ak =
        drop_ignore(sel_k ? *sel_k : all_indices(Pk), Yk);

    if (grad_Fq) {
        *grad_Fq = Tensor(Fq.shape());
        grad_Fq->fill(0.0);
    }

    // Two passes per direction would be needed to know the contributing count
    // before scaling gradients, so run value-only first, then gradients.
    DirectionOut d1 = pairwise_direction(Fq, Yq, aq, Fk, Yk, ak, tau, 0.0,
                                         nullptr, nullptr);
    DirectionOut d2 = pairwise_direction(Fk, Yk, ak, Fq, Yq, aq, tau, 0.0,
                                         nullptr, nullptr);
    const size_t ndir = (d1.contributing > 0 ? 1 : 0) + (d2.contributing > 0 ? 1 : 0);

    LossValue out;
    out.skipped = d1.skipped + d2.skipped;
    if (ndir == 0) return out;
    double value = 0.0;
    if (d1.contributing)
        value += d1.loss_sum / static_cast<double>(d1.contributing);
    if (d2.contributing)
        value += d2.loss_sum / static_cast<double>(d2.contributing);
    value /= static_cast<double>(ndir);
    out.value = value;
    out.pixels = d1.contributing + d2.contributing;
    out.components["pixel"] = value;

    if (grad_Fq) {
        if (d1.contributing)
            pairwise_direction(Fq, Yq, aq, Fk, Yk, ak, tau,
                               1.0 / (static_cast<double>(d1.contributing) * ndir),
                               grad_Fq, nullptr);
        if (d2.contributing)
            pairwise_direction(Fk, Yk, ak, Fq, Yq, aq, tau,
                               1.0 / (static_cast<double>(d2.contributing) * ndir),
                               nullptr, grad_Fq);
    }
    return out;
}

namespace {

// Shared core for the prototype-softmax losses. target(p) fills the mixing
// weights over classes for pixel p; returns false to skip the pixel.
template <class TargetFn>
LossValue proto_softmax_loss(const Tensor& F, const std::vector<LabelId>& Y,
                             const PrototypeSnapshot& snap, double tau,
                             Tensor* grad_F, const char* component,
                             TargetFn&& target) {
    if (tau <= 0.0) throw ConfigError("prototype loss: tau must be positive");
    const size_t nc = snap.valid.size();
    const size_t d = snap.prototypes.dim(1);
    if (F.shape().back() != d)
        throw UsageError("prototype loss: feature dim mismatch");
    const size_t P = F.size() / d;
    if (Y.size() != P) throw UsageError("prototype loss: label map mismatch");

    std::vector<size_t> valid_classes;
    for (size_t y = 0; y < nc; ++y)
        if (snap.valid[y]) valid_classes.push_back(y);
    if (valid_classes.empty()) throw UsageError("prototype loss: no valid prototypes");

    if (grad_F) {
        *grad_F = Tensor(F.shape());
        grad_F->fill(0.0);
    }

    std::vector<double> loss(P, 0.0);
    std::vector<uint8_t> counted(P, 0), skipped(P, 0), flagged(P, 0);
    const long Pl = static_cast<long>(P);
#pragma omp parallel for schedule(static)
    for (long p = 0; p < Pl; ++p) {
        const LabelId y = Y[p];
        if (y == kIgnoreLabel) continue;
        std::vector<double> w(nc, 0.0); // target weights per class
        bool flag = false;
        if (y >= nc || !snap.valid[y] || !target(static_cast<size_t>(p), y, w, flag)) {
            skipped[p] = 1;
            continue;
        }
        flagged[p] = flag;
        const double* f = F.data() + p * d;
        std::vector<double> logits(valid_classes.size());
        double mx = -1e300;
        for (size_t vi = 0; vi < valid_classes.size(); ++vi) {
            const double* proto = snap.prototypes.data() + valid_classes[vi] * d;
            double s = 0.0;
            for (size_t c = 0; c < d; ++c) s += f[c] * proto[c];
            logits[vi] = s / tau;
            mx = std::max(mx, logits[vi]);
        }
        double z = 0.0;
        for (double l : logits) z += std::exp(l - mx);
        const double lse = mx + std::log(z);
        double acc = 0.0, wtot = 0.0;
        for (size_t vi = 0; vi < valid_classes.size(); ++vi) {
            const double wy = w[valid_classes[vi]];
            if (wy != 0.0) {
                acc += wy * (lse - logits[vi]);
                wtot += wy;
            }
        }
        loss[p] = acc;
        counted[p] = 1;
        if (grad_F) {
            // d/df [ sum_c w_c (lse - l_c) ] = (wtot * sum_k s_k P_k - sum_c w_c P_c)/tau
            double* g = grad_F->data() + p * d;
            for (size_t vi = 0; vi < valid_classes.size(); ++vi) {
                const double s = std::exp(logits[vi] - lse);
                const double coef = (wtot * s - w[valid_classes[vi]]) / tau;
                const double* proto = snap.prototypes.data() + valid_classes[vi] * d;
                for (size_t c = 0; c < d; ++c) g[c] += coef * proto[c];
            }
        }
    }
    LossValue out;
    size_t n = 0;
    double total = 0.0;
    for (size_t p = 0; p < P; ++p) {
        if (counted[p]) {
            total += loss[p];
            ++n;
        }
        out.skipped += skipped[p];
        if (flagged[p]) out.short_topk = true;
    }
    out.pixels = n;
    if (n > 0) {
        out.value = total / static_cast<double>(n);
        if (grad_F) {
            const double scale = 1.0 / static_cast<double>(n);
            for (auto& g : grad_F->vec()) g *= scale;
        }
    } else if (grad_F) {
        grad_F->fill(0.0);
    }
    out.components[component] = out.value;
    return out;
}

} // namespace

LossValue pixel_to_prototype(const Tensor& F, const std::vector<LabelId>& Y,
                             const PrototypeSnapshot& snap, double tau,
                             Tensor* grad_F) {
    return proto_softmax_loss(
        F, Y, snap, tau, grad_F, "proto",
        [](size_t, LabelId y, std::vector<double>& w, bool&) {
            w[y] = 1.0;
            return true;
        });
}

std::vector<std::vector<LabelId>> build_topk_table(const PrototypeSnapshot& snap,
                                                   size_t k) {
    std::vector<std::vector<LabelId>> table(snap.valid.size());
    for (size_t y = 0; y < snap.valid.size(); ++y)
        if (snap.valid[y])
            table[y] = topk_similar(snap, static_cast<LabelId>(y), k);
    return table;
}

LossValue sparse_coding(const Tensor& F, const std::vector<LabelId>& Y,
                        const PrototypeSnapshot& snap,
                        const std::vector<std::vector<LabelId>>& topk_table,
                        double alpha, size_t k, double tau, Tensor* grad_F,
                        bool anchor_on_pixel) {
    if (alpha < 0.0 || alpha > 1.0)
        throw ConfigError("sparse_coding: alpha must be in [0,1]");
    if (k == 0) throw ConfigError("sparse_coding: K must be >= 1");
    if (!anchor_on_pixel && topk_table.size() != snap.valid.size())
        throw UsageError("sparse_coding: top-K table does not match snapshot");
    const size_t d = snap.prototypes.dim(1);
    return proto_softmax_loss(
        F, Y, snap, tau, grad_F, "sparse",
        [&](size_t p, LabelId y, std::vector<double>& w, bool& flag) {
            w[y] += alpha;
            std::vector<LabelId> local_top;
            if (anchor_on_pixel) {
                const double* f = F.data() + p * d;
                std::vector<std::pair<double, LabelId>> sims;
                for (size_t c = 0; c < snap.valid.size(); ++c) {
                    if (c == y || !snap.valid[c]) continue;
                    double dot = 0.0;
                    const double* proto = snap.prototypes.data() + c * d;
                    for (size_t i = 0; i < d; ++i) dot += f[i] * proto[i];
                    sims.emplace_back(dot, static_cast<LabelId>(c));
                }
                std::sort(sims.begin(), sims.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });
                for (size_t i = 0; i < std::min(k, sims.size()); ++i)
                    local_top.push_back(sims[i].second);
            }
            const auto& top = anchor_on_pixel ? local_top : topk_table[y];
            if (top.size() < k) flag = true;
            if (!top.empty()) {
                const double wk = (1.0 - alpha) / static_cast<double>(top.size());
                for (LabelId t : top) w[t] += wk;
            }
            return true;
        });
}

LossValue mixed_loss(const Tensor& F, double lambda,
                     const std::vector<LabelId>& labels_i,
                     const std::vector<LabelId>& labels_j,
                     const PrototypeSnapshot& snap, double tau, Tensor* grad_F,
                     const std::vector<std::vector<LabelId>>* topk_table,
                     double alpha, size_t k) {
    if (lambda < 0.0 || lambda > 1.0)
        throw ConfigError("mixed_loss: lambda must be in [0,1]");
    auto eval = [&](const std::vector<LabelId>& y, Tensor* g) {
        return topk_table
                   ? sparse_coding(F, y, snap, *topk_table, alpha, k, tau, g)
                   : pixel_to_prototype(F, y, snap, tau, g);
    };
    Tensor gi, gj;
    LossValue li = eval(labels_i, grad_F ? &gi : nullptr);
    LossValue lj = eval(labels_j, grad_F ? &gj : nullptr);
    LossValue out;
    out.value = lambda * li.value + (1.0 - lambda) * lj.value;
    out.pixels = std::max(li.pixels, lj.pixels);
    out.skipped = li.skipped + lj.skipped;
    out.short_topk = li.short_topk || lj.short_topk;
    out.components["mixed"] = out.value;
    out.components["mixed_i"] = li.value;
    out.components["mixed_j"] = lj.value;
    if (grad_F) {
        *grad_F = Tensor(F.shape());
        for (size_t c = 0; c < grad_F->size(); ++c)
            (*grad_F)[c] = lambda * gi[c] + (1.0 - lambda) * gj[c];
    }
    return out;
}

} // namespace mdp
