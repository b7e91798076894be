#pragma once
// Two-view augmentation (MoCo-v2 style at desk scale), cross-dataset cutmix
// and mixup, and label-map downsampling to feature resolution.

#include <cstdint>
#include <vector>

#include "mdp/datasets.hpp"
#include "mdp/rng.hpp"

namespace mdp {

struct AugConfig {
    double crop_scale_min = 0.4, crop_scale_max = 1.0; // area fraction
    double aspect_min = 0.75, aspect_max = 4.0 / 3.0;
    double hflip_prob = 0.5;
    double jitter = 0.4; // brightness/contrast range, image only
    double noise_sigma = 0.02;

    static AugConfig identity() {
        AugConfig c;
        c.crop_scale_min = c.crop_scale_max = 1.0;
        c.aspect_min = c.aspect_max = 1.0;
        c.hflip_prob = 0.0;
        c.jitter = 0.0;
        c.noise_sigma = 0.0;
        return c;
    }
};

struct AugRecord {
    uint32_t crop_i = 0, crop_j = 0, crop_h = 0, crop_w = 0;
    bool flip = false;
    double brightness = 0.0, contrast = 1.0, noise_sigma = 0.0;
};

// Source coordinate of output pixel (i,j); geometric part only (crop,
// resize, flip). Labels are produced exactly through this map.
std::pair<size_t, size_t> source_coord(const AugRecord& rec, size_t i, size_t j,
                                       size_t out_h, size_t out_w);

struct ViewPair {
    Sample view_q, view_k;
    AugRecord rec_q, rec_k;
};

ViewPair make_views(const Sample& src, const AugConfig& cfg, uint64_t seed);

enum class MixMode { Region, Pixel };

struct MixedSample {
    MixMode mode = MixMode::Region;
    Sample sample; // x~; region mode: sample.labels is the mixed label map
    // pixel mode payload {lambda, y_i, y_j}; labels stored unmixed
    double lambda = 1.0;
    std::vector<LabelId> labels_i, labels_j;
};

// x~ = M*x_i + (1-M)*x_j, y~ = M*y_i + (1-M)*y_j. mask is H*W, 1 = take i.
MixedSample cutmix(const Sample& a, const Sample& b,
                   const std::vector<uint8_t>& mask);

// x~ = lambda*x_i + (1-lambda)*x_j; labels kept as {lambda, y_i, y_j}.
MixedSample mixup(const Sample& a, const Sample& b, double lambda);

// Rectangular mask with area fraction ~ uniform(0,1).
std::vector<uint8_t> random_rect_mask(size_t h, size_t w, Rng& rng);

// Nearest-neighbour (top-left of each cell); ignore ids pass through.
std::vector<LabelId> downsample_labels(const std::vector<LabelId>& labels,
                                       size_t h, size_t w, size_t factor);

} // namespace mdp
