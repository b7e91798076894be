#include "mdp/gradsuite.hpp"

#include <chrono>
#include <cmath>
#include <functional>

#include "mdp/encoder.hpp"
#include "mdp/graph.hpp"
#include "mdp/losses.hpp"
#include "mdp/rng.hpp"

namespace mdp {

double GradSuiteReport::worst() const {
    double w = 0.0;
    for (const auto& c : cases) w = std::max(w, c.max_rel_err);
    return w;
}

namespace {

double rel_err(double numeric, double analytic) {
    return std::abs(numeric - analytic) /
           std::max({std::abs(numeric), std::abs(analytic), 1.0});
}

// Central differences of a scalar-valued function of a flat vector.
double check_vector(std::vector<double>& x,
                    const std::function<double()>& value,
                    const std::vector<double>& analytic, double eps) {
    double worst = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + eps;
        const double up = value();
        x[i] = keep - eps;
        const double down = value();
        x[i] = keep;
        worst = std::max(worst, rel_err((up - down) / (2.0 * eps), analytic[i]));
    }
    return worst;
}

PrototypeSnapshot random_snapshot(size_t num_classes, size_t dim, Rng& rng,
                                  size_t invalid = 0) {
    PrototypeSnapshot snap;
    snap.raw = Tensor({num_classes, dim});
    snap.prototypes = Tensor({num_classes, dim});
    snap.valid.assign(num_classes, 1);
    for (size_t c = 0; c < num_classes; ++c) {
        double norm = 0.0;
        std::vector<double> row(dim);
        for (auto& v : row) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (size_t j = 0; j < dim; ++j) {
            snap.raw.vec()[c * dim + j] = row[j];
            snap.prototypes.vec()[c * dim + j] = row[j] / norm;
        }
    }
    for (size_t k = 0; k < invalid && k < num_classes; ++k)
        snap.valid[rng.uniform_int(num_classes)] = 0;
    return snap;
}

Tensor random_features(size_t h, size_t w, size_t d, Rng& rng) {
    Tensor f({h, w, d});
    for (auto& v : f.vec()) v = rng.normal();
    return f;
}

std::vector<LabelId> random_labels(size_t n, size_t num_classes, Rng& rng,
                                   double ignore_prob = 0.1) {
    std::vector<LabelId> y(n);
    for (auto& l : y)
        l = rng.bernoulli(ignore_prob)
                ? kIgnoreLabel
                : static_cast<LabelId>(rng.uniform_int(num_classes));
    return y;
}

} // namespace

GradSuiteReport run_gradient_suite(uint64_t seed, size_t instances, double eps,
                                   double tol) {
    const auto t0 = std::chrono::steady_clock::now();
    GradSuiteReport report;
    report.eps = eps;
    report.tol = tol;

    auto record = [&](const std::string& base, size_t idx, double err) {
        report.cases.push_back(
            {base + "[" + std::to_string(idx) + "]", err, err < tol});
    };

    for (size_t n = 0; n < instances; ++n) {
        // InfoNCE over a random query / positive / negatives.
        {
            Rng rng(mix_seed(seed, "grad.nce", n));
            const size_t d = 3 + rng.uniform_int(5);
            std::vector<double> q(d), kp(d);
            for (auto& v : q) v = rng.normal();
            for (auto& v : kp) v = rng.normal();
            std::vector<std::vector<double>> negs(1 + rng.uniform_int(6));
            for (auto& neg : negs) {
                neg.resize(d);
                for (auto& v : neg) v = rng.normal();
            }
            const double tau = 0.07 + rng.uniform() * 0.5;
            std::vector<double> grad;
            info_nce(q, kp, negs, tau, &grad);
            const double err = check_vector(
                q, [&] { return info_nce(q, kp, negs, tau).value; }, grad, eps);
            record("info_nce", n, err);
        }

        // Pairwise two-view loss, gradients into the query view.
        {
            Rng rng(mix_seed(seed, "grad.pixel", n));
            const size_t h = 2 + rng.uniform_int(2), w = 2 + rng.uniform_int(2);
            const size_t d = 3 + rng.uniform_int(3);
            const size_t nc = 2 + rng.uniform_int(2);
            Tensor fq = random_features(h, w, d, rng);
            Tensor fk = random_features(h, w, d, rng);
            auto yq = random_labels(h * w, nc, rng);
            auto yk = random_labels(h * w, nc, rng, 0.0);
            const double tau = 0.07 + rng.uniform() * 0.4;
            Tensor grad;
            pixel_to_pixel(fq, yq, fk, yk, tau, &grad);
            const double err = check_vector(
                fq.vec(),
                [&] { return pixel_to_pixel(fq, yq, fk, yk, tau).value; },
                grad.vec(), eps);
            record("pixel_to_pixel", n, err);
        }

        // Prototype cross entropy, with a few invalid prototypes.
        {
            Rng rng(mix_seed(seed, "grad.proto", n));
            const size_t h = 2 + rng.uniform_int(3), w = 2 + rng.uniform_int(3);
            const size_t d = 3 + rng.uniform_int(4);
            const size_t nc = 3 + rng.uniform_int(4);
            Tensor f = random_features(h, w, d, rng);
            auto y = random_labels(h * w, nc, rng);
            auto snap = random_snapshot(nc, d, rng, rng.uniform_int(2));
            const double tau = 0.07 + rng.uniform() * 0.4;
            Tensor grad;
            pixel_to_prototype(f, y, snap, tau, &grad);
            const double err = check_vector(
                f.vec(), [&] { return pixel_to_prototype(f, y, snap, tau).value; },
                grad.vec(), eps);
            record("pixel_to_prototype", n, err);
        }

        // Mixup-weighted loss.
        {
            Rng rng(mix_seed(seed, "grad.mixed", n));
            const size_t h = 2 + rng.uniform_int(2), w = 2 + rng.uniform_int(2);
            const size_t d = 3 + rng.uniform_int(3);
            const size_t nc = 3 + rng.uniform_int(3);
            Tensor f = random_features(h, w, d, rng);
            auto yi = random_labels(h * w, nc, rng);
            auto yj = random_labels(h * w, nc, rng);
            auto snap = random_snapshot(nc, d, rng);
            const double tau = 0.07 + rng.uniform() * 0.4;
            const double lambda = rng.uniform();
            Tensor grad;
            mixed_loss(f, lambda, yi, yj, snap, tau, &grad);
            const double err = check_vector(
                f.vec(),
                [&] { return mixed_loss(f, lambda, yi, yj, snap, tau).value; },
                grad.vec(), eps);
            record("mixed_loss", n, err);
        }

        // Sparse coding, both top-K anchor modes.
        {
            Rng rng(mix_seed(seed, "grad.sparse", n));
            const size_t h = 2 + rng.uniform_int(2), w = 2 + rng.uniform_int(2);
            const size_t d = 3 + rng.uniform_int(3);
            const size_t nc = 4 + rng.uniform_int(4);
            const size_t k = 2 + rng.uniform_int(2);
            Tensor f = random_features(h, w, d, rng);
            auto y = random_labels(h * w, nc, rng);
            auto snap = random_snapshot(nc, d, rng);
            auto table = build_topk_table(snap, k);
            const double tau = 0.07 + rng.uniform() * 0.4;
            const double alpha = rng.uniform();
            const bool anchor_pixel = n % 2 == 1;
            Tensor grad;
            sparse_coding(f, y, snap, table, alpha, k, tau, &grad, anchor_pixel);
            const double err = check_vector(
                f.vec(),
                [&] {
                    return sparse_coding(f, y, snap, table, alpha, k, tau,
                                         nullptr, anchor_pixel)
                        .value;
                },
                grad.vec(), eps);
            record(anchor_pixel ? "sparse_coding.pixel_anchor"
                                : "sparse_coding.proto_anchor",
                   n, err);
        }

        // Encoder + prototype loss composition, all parameters.
        {
            Rng rng(mix_seed(seed, "grad.encoder", n));
            EncoderConfig ec;
            ec.conv_channels = {4, 4, 4};
            ec.head_hidden = 4;
            ec.embed_dim = 8;
            const size_t hw = 6;
            EncoderNet net(ec, hw, hw);
            net.set_params(init_encoder(ec, mix_seed(seed, "grad.enc.init", n)));
            // Wide input range keeps pre-normalization embeddings well above
            // the finite-difference step, so the scale-invariant loss is
            // probed in a well-conditioned regime.
            Tensor image({hw, hw, ec.in_channels});
            for (auto& v : image.vec()) v = 2.0 * (rng.uniform() - 0.5);
            const size_t nc = 4;
            auto y = random_labels(net.out_height() * net.out_width(), nc, rng);
            auto snap = random_snapshot(nc, ec.embed_dim, rng);
            net.loss_fn = [&](const Tensor& f) {
                Tensor g;
                LossValue lv = pixel_to_prototype(f, y, snap, 2.0, &g);
                return std::make_pair(lv.value, std::move(g));
            };
            net.forward_loss(image);
            auto gc = net.graph().grad_check(net.loss_node(), eps, tol);
            record("encoder_composition", n, gc.worst());
        }
    }

    report.pass = true;
    for (const auto& c : report.cases) report.pass = report.pass && c.pass;
    report.seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    return report;
}

} // namespace mdp
