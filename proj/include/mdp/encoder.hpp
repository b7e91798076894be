#pragma once
// Toy per-pixel embedding network: a 3-conv stack (first conv stride 2) and
// a 2-layer 1x1 projection head, followed by per-pixel unit normalization.
// Query and key instances share the architecture; the key is updated only
// through momentum_update.

#include <cstdint>
#include <map>
#include <string>

#include "mdp/graph.hpp"
#include "mdp/tensor.hpp"

namespace mdp {

struct EncoderConfig {
    size_t in_channels = 3;
    std::vector<size_t> conv_channels = {16, 32, 32}; // 3x3 convs, first stride 2
    size_t head_hidden = 32;
    size_t embed_dim = 32;
    size_t stride() const { return 2; } // overall feature stride

    bool operator==(const EncoderConfig&) const = default;
};

using ParamMap = std::map<std::string, Tensor>;

// Seeded He-style initialization; returns the query params. The key starts
// as an exact copy (plain ParamMap copy).
ParamMap init_encoder(const EncoderConfig& cfg, uint64_t seed);

// theta_k <- m*theta_k + (1-m)*theta_q, elementwise. m in [0,1).
void momentum_update(ParamMap& key, const ParamMap& query, double m);

double param_distance(const ParamMap& a, const ParamMap& b);

// The encoder as a differentiation graph for a fixed input size. The loss
// hook lets the trainer swap the objective per step without rebuilding the
// tape: loss_node evaluates loss_fn on the normalized feature map.
class EncoderNet {
public:
    EncoderNet(const EncoderConfig& cfg, size_t height, size_t width);

    void set_params(const ParamMap& params);

    // Pure forward: normalized [h,w,d] feature map.
    Tensor embed(const Tensor& image);

    // Forward through the loss hook; backward fills param gradients.
    double forward_loss(const Tensor& image);
    void backward_loss();

    Graph& graph() { return graph_; }
    int feature_node() const { return feature_node_; }
    int loss_node() const { return loss_node_; }
    size_t out_height() const { return out_h_; }
    size_t out_width() const { return out_w_; }
    const EncoderConfig& config() const { return cfg_; }

    ScalarFn loss_fn; // set by the trainer before forward_loss

private:
    EncoderConfig cfg_;
    Graph graph_;
    int feature_node_ = -1;
    int loss_node_ = -1;
    size_t out_h_ = 0, out_w_ = 0;
};

} // namespace mdp
