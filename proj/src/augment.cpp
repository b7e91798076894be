#include "mdp/augment.hpp"

#include <algorithm>
#include <cmath>

#include "mdp/errors.hpp"

namespace mdp {

std::pair<size_t, size_t> source_coord(const AugRecord& rec, size_t i, size_t j,
                                       size_t out_h, size_t out_w) {
    const size_t jj = rec.flip ? out_w - 1 - j : j;
    const size_t si =
        rec.crop_i + static_cast<size_t>((i + 0.5) * rec.crop_h / out_h);
    const size_t sj =
        rec.crop_j + static_cast<size_t>((jj + 0.5) * rec.crop_w / out_w);
    return {si, sj};
}

namespace {

// Bilinear sample of the source crop at output pixel (i,j), one channel.
float bilinear(const Sample& src, const AugRecord& rec, size_t i, size_t j,
               size_t out_h, size_t out_w, size_t c) {
    const size_t jj = rec.flip ? out_w - 1 - j : j;
    const double sy = rec.crop_i + (i + 0.5) * rec.crop_h / out_h - 0.5;
    const double sx = rec.crop_j + (jj + 0.5) * rec.crop_w / out_w - 0.5;
    const double fy = std::clamp(sy, 0.0, static_cast<double>(src.height - 1));
    const double fx = std::clamp(sx, 0.0, static_cast<double>(src.width - 1));
    const size_t y0 = static_cast<size_t>(fy);
    const size_t x0 = static_cast<size_t>(fx);
    const size_t y1 = std::min(y0 + 1, static_cast<size_t>(src.height - 1));
    const size_t x1 = std::min(x0 + 1, static_cast<size_t>(src.width - 1));
    const double wy = fy - y0, wx = fx - x0;
    const double v =
        (1 - wy) * ((1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c)) +
        wy * ((1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c));
    return static_cast<float>(v);
}

Sample apply_view(const Sample& src, const AugRecord& rec, Rng& rng) {
    Sample out;
    out.dataset_id = src.dataset_id;
    out.sample_id = src.sample_id;
    out.height = src.height;
    out.width = src.width;
    out.channels = src.channels;
    out.image.resize(src.image.size());
    out.labels.resize(src.labels.size());
    const size_t H = src.height, W = src.width;
    const bool geometric_identity = rec.crop_h == H && rec.crop_w == W &&
                                    rec.crop_i == 0 && rec.crop_j == 0;
    for (size_t i = 0; i < H; ++i)
        for (size_t j = 0; j < W; ++j) {
            auto [si, sj] = source_coord(rec, i, j, H, W);
            out.label_at(i, j) = src.label_at(si, sj);
            for (size_t c = 0; c < src.channels; ++c) {
                float v = geometric_identity
                              ? src.at(si, sj, c)
                              : bilinear(src, rec, i, j, H, W, c);
                double x = (v - 0.5) * rec.contrast + 0.5 + rec.brightness;
                if (rec.noise_sigma > 0.0) x += rec.noise_sigma * rng.normal();
                out.at(i, j, c) = static_cast<float>(std::clamp(x, 0.0, 1.0));
            }
        }
    return out;
}

AugRecord draw_record(const Sample& src, const AugConfig& cfg, Rng& rng) {
    const size_t H = src.height, W = src.width;
    AugRecord rec;
    const double scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
    const double aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max);
    const double area = scale * static_cast<double>(H) * W;
    size_t ch = static_cast<size_t>(std::lround(std::sqrt(area * aspect)));
    size_t cw = static_cast<size_t>(std::lround(std::sqrt(area / aspect)));
    ch = std::clamp<size_t>(ch, 1, H);
    cw = std::clamp<size_t>(cw, 1, W);
    if (ch > H || cw > W)
        throw ConfigError("augment: crop larger than image");
    rec.crop_h = static_cast<uint32_t>(ch);
    rec.crop_w = static_cast<uint32_t>(cw);
    rec.crop_i = static_cast<uint32_t>(rng.uniform_int(H - ch + 1));
    rec.crop_j = static_cast<uint32_t>(rng.uniform_int(W - cw + 1));
    rec.flip = rng.bernoulli(cfg.hflip_prob);
    rec.brightness = cfg.jitter > 0.0 ? rng.uniform(-cfg.jitter, cfg.jitter) : 0.0;
    rec.contrast =
        cfg.jitter > 0.0 ? 1.0 + rng.uniform(-cfg.jitter, cfg.jitter) : 1.0;
    rec.noise_sigma = cfg.noise_sigma;
    return rec;
}

} // namespace

ViewPair make_views(const Sample& src, const AugConfig& cfg, uint64_t seed) {
    if (cfg.crop_scale_max > 1.0 + 1e-12 ||
        cfg.crop_scale_min > cfg.crop_scale_max)
        throw ConfigError("augment: crop scale range invalid (crop would "
                          "exceed image)");
    ViewPair vp;
    Rng rng(mix_seed(seed, "views"));
    vp.rec_q = draw_record(src, cfg, rng);
    vp.view_q = apply_view(src, vp.rec_q, rng);
    vp.rec_k = draw_record(src, cfg, rng);
    vp.view_k = apply_view(src, vp.rec_k, rng);
    return vp;
}

MixedSample cutmix(const Sample& a, const Sample& b,
                   const std::vector<uint8_t>& mask) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels)
        throw DataError("cutmix: sample shapes differ");
    if (mask.size() != a.pixels())
        throw DataError("cutmix: mask size does not match image");
    MixedSample out;
    out.mode = MixMode::Region;
    out.sample = a;
    for (size_t p = 0; p < a.pixels(); ++p) {
        if (mask[p] > 1) throw DataError("cutmix: mask must be binary");
        if (mask[p] == 0) {
            for (size_t c = 0; c < a.channels; ++c)
                out.sample.image[p * a.channels + c] =
                    b.image[p * a.channels + c];
            out.sample.labels[p] = b.labels[p];
        }
    }
    return out;
}

MixedSample mixup(const Sample& a, const Sample& b, double lambda) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels)
        throw DataError("mixup: sample shapes differ");
    if (lambda < 0.0 || lambda > 1.0)
        throw ConfigError("mixup: lambda must be in [0,1], got " +
                          std::to_string(lambda));
    MixedSample out;
    out.mode = MixMode::Pixel;
    out.lambda = lambda;
    out.sample = a;
    if (lambda != 1.0) {
        for (size_t k = 0; k < a.image.size(); ++k)
            out.sample.image[k] = static_cast<float>(
                lambda * a.image[k] + (1.0 - lambda) * b.image[k]);
    }
    out.labels_i = a.labels;
    out.labels_j = b.labels;
    // label map on the blended sample is meaningless; parents carry labels
    out.sample.labels.assign(a.pixels(), kIgnoreLabel);
    return out;
}

std::vector<uint8_t> random_rect_mask(size_t h, size_t w, Rng& rng) {
    const double area = rng.uniform(); // Beta(1,1)
    const double side = std::sqrt(area);
    size_t rh = std::clamp<size_t>(static_cast<size_t>(std::lround(side * h)),
                                   0, h);
    size_t rw = std::clamp<size_t>(static_cast<size_t>(std::lround(side * w)),
                                   0, w);
    const size_t i0 = rh < h ? rng.uniform_int(h - rh + 1) : 0;
    const size_t j0 = rw < w ? rng.uniform_int(w - rw + 1) : 0;
    // mask==1 keeps sample i outside the pasted rectangle
    std::vector<uint8_t> mask(h * w, 1);
    for (size_t i = i0; i < i0 + rh; ++i)
        for (size_t j = j0; j < j0 + rw; ++j) mask[i * w + j] = 0;
    return mask;
}

std::vector<LabelId> downsample_labels(const std::vector<LabelId>& labels,
                                       size_t h, size_t w, size_t factor) {
    if (factor == 0 || h % factor || w % factor)
        throw ConfigError("downsample_labels: factor must divide H and W");
    if (labels.size() != h * w)
        throw UsageError("downsample_labels: label map size mismatch");
    const size_t oh = h / factor, ow = w / factor;
    std::vector<LabelId> out(oh * ow);
    for (size_t i = 0; i < oh; ++i)
        for (size_t j = 0; j < ow; ++j)
            out[i * ow + j] = labels[(i * factor) * w + j * factor];
    return out;
}

} // namespace mdp
