#include "mdp/encoder.hpp"

#include <cmath>

#include "mdp/errors.hpp"
#include "mdp/rng.hpp"

namespace mdp {

namespace {

Tensor he_init(std::vector<size_t> shape, size_t fan_in, Rng& rng) {
    Tensor t(shape);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (size_t i = 0; i < t.size(); ++i) t[i] = std * rng.normal();
    return t;
}

} // namespace

ParamMap init_encoder(const EncoderConfig& cfg, uint64_t seed) {
    if (cfg.embed_dim < 2)
        throw ConfigError("encoder: embed_dim must be >= 2, got " +
                          std::to_string(cfg.embed_dim));
    if (cfg.conv_channels.empty())
        throw ConfigError("encoder: need at least one conv layer");
    Rng rng(mix_seed(seed, "init"));
    ParamMap p;
    size_t cin = cfg.in_channels;
    for (size_t l = 0; l < cfg.conv_channels.size(); ++l) {
        const size_t cout = cfg.conv_channels[l];
        const std::string tag = "conv" + std::to_string(l);
        p[tag + ".w"] = he_init({3, 3, cin, cout}, 9 * cin, rng);
        p[tag + ".b"] = Tensor({cout});
        cin = cout;
    }
    p["head0.w"] = he_init({cin, cfg.head_hidden}, cin, rng);
    p["head0.b"] = Tensor({cfg.head_hidden});
    p["head1.w"] = he_init({cfg.head_hidden, cfg.embed_dim}, cfg.head_hidden, rng);
    // Nonzero bias keeps pre-normalization vectors away from zero at init.
    Tensor b1({cfg.embed_dim});
    for (size_t i = 0; i < b1.size(); ++i) b1[i] = 0.1 * rng.normal();
    p["head1.b"] = b1;
    return p;
}

void momentum_update(ParamMap& key, const ParamMap& query, double m) {
    if (m < 0.0 || m >= 1.0)
        throw ConfigError("momentum_update: m must be in [0,1)");
    if (key.size() != query.size())
        throw UsageError("momentum_update: param maps differ");
    auto kit = key.begin();
    auto qit = query.begin();
    for (; kit != key.end(); ++kit, ++qit) {
        if (kit->first != qit->first || !kit->second.same_shape(qit->second))
            throw UsageError("momentum_update: param mismatch at " + kit->first);
        auto& kv = kit->second.vec();
        const auto& qv = qit->second.vec();
        for (size_t i = 0; i < kv.size(); ++i)
            kv[i] = m * kv[i] + (1.0 - m) * qv[i];
    }
}

double param_distance(const ParamMap& a, const ParamMap& b) {
    double s = 0.0;
    auto ait = a.begin();
    auto bit = b.begin();
    for (; ait != a.end(); ++ait, ++bit) {
        const auto& av = ait->second.vec();
        const auto& bv = bit->second.vec();
        for (size_t i = 0; i < av.size(); ++i) {
            const double d = av[i] - bv[i];
            s += d * d;
        }
    }
    return std::sqrt(s);
}

EncoderNet::EncoderNet(const EncoderConfig& cfg, size_t height, size_t width)
    : cfg_(cfg) {
    if (height % cfg.stride() || width % cfg.stride())
        throw ConfigError("encoder: image size must be divisible by stride " +
                          std::to_string(cfg.stride()));
    const int image = graph_.input("image", {height, width, cfg.in_channels});
    int x = image;
    size_t cin = cfg.in_channels;
    for (size_t l = 0; l < cfg.conv_channels.size(); ++l) {
        const size_t cout = cfg.conv_channels[l];
        const std::string tag = "conv" + std::to_string(l);
        const int w = graph_.param(tag + ".w", Tensor({3, 3, cin, cout}));
        const int b = graph_.param(tag + ".b", Tensor({cout}));
        x = graph_.softplus(graph_.conv3x3(x, w, b, l == 0 ? cfg.stride() : 1));
        cin = cout;
    }
    const int h0w = graph_.param("head0.w", Tensor({cin, cfg.head_hidden}));
    const int h0b = graph_.param("head0.b", Tensor({cfg.head_hidden}));
    x = graph_.softplus(graph_.pointwise(x, h0w, h0b));
    const int h1w = graph_.param("head1.w", Tensor({cfg.head_hidden, cfg.embed_dim}));
    const int h1b = graph_.param("head1.b", Tensor({cfg.embed_dim}));
    x = graph_.pointwise(x, h1w, h1b);
    feature_node_ = graph_.l2norm(x);
    out_h_ = height / cfg.stride();
    out_w_ = width / cfg.stride();
    loss_node_ = graph_.custom_scalar(
        feature_node_,
        [this](const Tensor& f) -> std::pair<double, Tensor> {
            if (!loss_fn) {
                // loss hook unset: inert zero scalar (pure embed path)
                Tensor g(f.shape());
                return {0.0, g};
            }
            return loss_fn(f);
        },
        "loss_hook");
}

void EncoderNet::set_params(const ParamMap& params) {
    for (const auto& [name, t] : params) graph_.set_param(name, t);
}

Tensor EncoderNet::embed(const Tensor& image) {
    loss_fn = nullptr; // a stale hook from a previous step must not run
    graph_.set_input("image", image);
    return graph_.forward(feature_node_);
}

double EncoderNet::forward_loss(const Tensor& image) {
    graph_.set_input("image", image);
    return graph_.forward(loss_node_)[0];
}

void EncoderNet::backward_loss() { graph_.backward_scalar(loss_node_); }

} // namespace mdp
