#include "mdp/datasets.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mdp/errors.hpp"

namespace mdp {

LabelRegistry::LabelRegistry(std::vector<DatasetDesc> datasets, MergeMode mode)
    : datasets_(std::move(datasets)), mode_(mode) {
    std::map<std::string, size_t> seen_ids;
    std::map<std::string, LabelId> by_name; // name-merged lookup
    local_to_global_.resize(datasets_.size());
    for (size_t di = 0; di < datasets_.size(); ++di) {
        const auto& d = datasets_[di];
        if (d.id.empty()) throw ConfigError("dataset with empty id");
        if (!seen_ids.emplace(d.id, di).second)
            throw ConfigError("duplicate dataset id: " + d.id);
        for (size_t li = 0; li < d.class_names.size(); ++li) {
            const auto& name = d.class_names[li];
            if (name.empty())
                throw ConfigError("empty class name in dataset " + d.id);
            LabelId gid;
            auto it = by_name.find(name);
            if (mode_ == MergeMode::NameMerged && it != by_name.end()) {
                gid = it->second;
            } else {
                gid = static_cast<LabelId>(global_.size());
                if (global_.size() >= kIgnoreLabel)
                    throw ConfigError("global label space overflow");
                global_.emplace_back(di, static_cast<LabelId>(li));
                global_names_.push_back(name);
                by_name.emplace(name, gid);
            }
            local_to_global_[di].push_back(gid);
        }
    }
}

size_t LabelRegistry::dataset_index(const std::string& id) const {
    for (size_t i = 0; i < datasets_.size(); ++i)
        if (datasets_[i].id == id) return i;
    throw ConfigError("unknown dataset id: " + id);
}

LabelId LabelRegistry::to_global(size_t dataset_idx, LabelId local) const {
    const auto& m = local_to_global_.at(dataset_idx);
    if (local == kIgnoreLabel) return kIgnoreLabel;
    if (local >= m.size())
        throw DataError("local label " + std::to_string(local) +
                        " out of range for dataset " +
                        datasets_[dataset_idx].id);
    return m[local];
}

std::pair<size_t, LabelId> LabelRegistry::global_origin(LabelId global) const {
    if (global >= global_.size())
        throw DataError("global label out of range: " + std::to_string(global));
    return global_[global];
}

const std::string& LabelRegistry::global_name(LabelId global) const {
    if (global >= global_names_.size())
        throw DataError("global label out of range: " + std::to_string(global));
    return global_names_[global];
}

std::vector<LabelId> LabelRegistry::map_local_to_global(
    size_t dataset_idx, const std::vector<LabelId>& local,
    const std::string& sample_tag) const {
    std::vector<LabelId> out(local.size());
    const auto& m = local_to_global_.at(dataset_idx);
    for (size_t i = 0; i < local.size(); ++i) {
        if (local[i] == kIgnoreLabel) {
            out[i] = kIgnoreLabel;
        } else if (local[i] >= m.size()) {
            throw DataError("sample " + sample_tag + ": local label " +
                            std::to_string(local[i]) +
                            " out of range for dataset " +
                            datasets_[dataset_idx].id);
        } else {
            out[i] = m[local[i]];
        }
    }
    return out;
}

Tensor Sample::image_tensor() const {
    std::vector<double> d(image.begin(), image.end());
    return Tensor({height, width, channels}, std::move(d));
}

const std::vector<ShapeVariant>& all_variants() {
    static const std::vector<ShapeVariant> v = {
        {ShapeKind::Circle, 0}, {ShapeKind::Circle, 1}, {ShapeKind::Rect, 0},
        {ShapeKind::Rect, 1},   {ShapeKind::Stripe, 0}, {ShapeKind::Stripe, 1},
    };
    return v;
}

SyntheticSpec default_benchmark_spec(uint64_t seed, size_t image_size,
                                     size_t samples_per_dataset) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.image_size = image_size;
    spec.samples_per_dataset = samples_per_dataset;
    DatasetTaxonomy coarse;
    coarse.id = "geo4";
    coarse.classes = {
        {"bg", {}},
        {"circle", {{ShapeKind::Circle, 0}, {ShapeKind::Circle, 1}}},
        {"rect", {{ShapeKind::Rect, 0}, {ShapeKind::Rect, 1}}},
        {"stripe", {{ShapeKind::Stripe, 0}, {ShapeKind::Stripe, 1}}},
    };
    DatasetTaxonomy fine;
    fine.id = "geo6";
    fine.classes = {
        {"bg", {}},
        {"circle-small", {{ShapeKind::Circle, 0}}},
        {"circle-large", {{ShapeKind::Circle, 1}}},
        {"rect-tall", {{ShapeKind::Rect, 0}}},
        {"rect-wide", {{ShapeKind::Rect, 1}}},
        {"stripe-h", {{ShapeKind::Stripe, 0}}},
        {"stripe-v", {{ShapeKind::Stripe, 1}}},
    };
    spec.datasets = {coarse, fine};
    return spec;
}

std::vector<DatasetDesc> descriptors_of(const SyntheticSpec& spec) {
    std::vector<DatasetDesc> out;
    for (const auto& tax : spec.datasets) {
        DatasetDesc d;
        d.id = tax.id;
        for (const auto& c : tax.classes) d.class_names.push_back(c.name);
        out.push_back(std::move(d));
    }
    return out;
}

namespace {

// Distinct base color per variant; background is dark gray.
void variant_color(const ShapeVariant& v, float rgb[3]) {
    static const float table[6][3] = {
        {0.85f, 0.25f, 0.20f}, // circle small: red
        {0.95f, 0.60f, 0.15f}, // circle large: orange
        {0.20f, 0.70f, 0.25f}, // rect tall: green
        {0.25f, 0.45f, 0.85f}, // rect wide: blue
        {0.80f, 0.75f, 0.20f}, // stripe h: yellow
        {0.65f, 0.30f, 0.80f}, // stripe v: purple
    };
    size_t idx = static_cast<size_t>(v.kind) * 2 + v.variant;
    for (int c = 0; c < 3; ++c) rgb[c] = table[idx][c];
}

size_t variant_index(const ShapeVariant& v) {
    const auto& all = all_variants();
    for (size_t i = 0; i < all.size(); ++i)
        if (all[i] == v) return i;
    throw ConfigError("unknown shape variant");
}

// Local class id covering a variant, or kIgnoreLabel if none.
LabelId covering_class(const DatasetTaxonomy& tax, const ShapeVariant& v) {
    for (size_t c = 0; c < tax.classes.size(); ++c)
        for (const auto& cv : tax.classes[c].covers)
            if (cv == v) return static_cast<LabelId>(c);
    return kIgnoreLabel;
}

struct PlacedShape {
    ShapeVariant variant;
    double ci, cj;   // center
    double a, b;     // half extents / radius
    int period = 0;  // stripes
};

bool covers_pixel(const PlacedShape& s, size_t i, size_t j) {
    const double di = static_cast<double>(i) - s.ci;
    const double dj = static_cast<double>(j) - s.cj;
    switch (s.variant.kind) {
        case ShapeKind::Circle:
            return di * di + dj * dj <= s.a * s.a;
        case ShapeKind::Rect:
            return std::abs(di) <= s.a && std::abs(dj) <= s.b;
        case ShapeKind::Stripe: {
            // Banded region: stripes of width a inside a bounding box.
            if (std::abs(di) > s.b || std::abs(dj) > s.b) return false;
            const long coord = s.variant.variant == 0 ? static_cast<long>(i)
                                                      : static_cast<long>(j);
            return (coord / s.period) % 2 == 0;
        }
    }
    return false;
}

Sample render_sample(const SyntheticSpec& spec, const DatasetTaxonomy& tax,
                     size_t dataset_idx, const LabelRegistry& registry,
                     uint32_t sample_id, std::vector<ShapeVariant>* draw_log) {
    const size_t S = spec.image_size;
    Rng rng(mix_seed(spec.seed, "sample:" + tax.id, sample_id));

    // Variants this dataset can label, with draw weights.
    std::vector<ShapeVariant> drawable;
    std::vector<double> weight;
    for (const auto& v : all_variants()) {
        if (covering_class(tax, v) == kIgnoreLabel) continue;
        size_t vi = variant_index(v);
        double w = spec.variant_freq.empty() ? 1.0 : spec.variant_freq.at(vi);
        if (w <= 0.0) continue;
        drawable.push_back(v);
        weight.push_back(w);
    }
    if (drawable.empty())
        throw ConfigError("dataset " + tax.id + " covers no drawable variant");
    double wsum = 0.0;
    for (double w : weight) wsum += w;

    Sample s;
    s.dataset_id = static_cast<uint16_t>(dataset_idx);
    s.sample_id = sample_id;
    s.height = s.width = static_cast<uint32_t>(S);
    s.channels = 3;
    s.image.resize(S * S * 3);
    s.labels.assign(S * S, registry.to_global(dataset_idx, 0)); // background

    // Textured background.
    const float base = 0.12f + 0.10f * static_cast<float>(rng.uniform());
    for (size_t p = 0; p < S * S; ++p)
        for (size_t c = 0; c < 3; ++c)
            s.image[p * 3 + c] = std::clamp(
                base + 0.04f * static_cast<float>(rng.normal()), 0.0f, 1.0f);

    for (size_t k = 0; k < spec.shapes_per_image; ++k) {
        double draw = rng.uniform() * wsum, acc = 0.0;
        size_t pick = 0;
        for (size_t v = 0; v < drawable.size(); ++v) {
            acc += weight[v];
            if (draw < acc) {
                pick = v;
                break;
            }
        }
        PlacedShape ps;
        ps.variant = drawable[pick];
        ps.ci = rng.uniform(0.2 * S, 0.8 * S);
        ps.cj = rng.uniform(0.2 * S, 0.8 * S);
        switch (ps.variant.kind) {
            case ShapeKind::Circle:
                ps.a = ps.variant.variant == 0 ? rng.uniform(0.06 * S, 0.11 * S)
                                               : rng.uniform(0.16 * S, 0.24 * S);
                break;
            case ShapeKind::Rect:
                if (ps.variant.variant == 0) { // tall
                    ps.a = rng.uniform(0.15 * S, 0.25 * S);
                    ps.b = rng.uniform(0.05 * S, 0.10 * S);
                } else { // wide
                    ps.a = rng.uniform(0.05 * S, 0.10 * S);
                    ps.b = rng.uniform(0.15 * S, 0.25 * S);
                }
                break;
            case ShapeKind::Stripe:
                ps.b = rng.uniform(0.15 * S, 0.28 * S);
                ps.period = 2 + static_cast<int>(rng.uniform_int(2));
                break;
        }
        float rgb[3];
        variant_color(ps.variant, rgb);
        const float jitter = 0.10f * static_cast<float>(rng.uniform(-1.0, 1.0));
        const LabelId local = covering_class(tax, ps.variant);
        const LabelId global = registry.to_global(dataset_idx, local);
        if (draw_log) draw_log->push_back(ps.variant);
        for (size_t i = 0; i < S; ++i)
            for (size_t j = 0; j < S; ++j) {
                if (!covers_pixel(ps, i, j)) continue;
                for (size_t c = 0; c < 3; ++c)
                    s.image[(i * S + j) * 3 + c] =
                        std::clamp(rgb[c] + jitter, 0.0f, 1.0f);
                s.labels[i * S + j] = global;
            }
    }
    return s;
}

} // namespace

std::vector<Sample> generate_synthetic_dataset(
    const SyntheticSpec& spec, const LabelRegistry& registry,
    std::vector<ShapeVariant>* draw_log) {
    if (spec.datasets.size() < 2)
        throw ConfigError("SyntheticSpec needs at least 2 datasets");
    if (spec.image_size < 16)
        throw ConfigError("image size must be >= 16, got " +
                          std::to_string(spec.image_size));
    for (const auto& tax : spec.datasets) {
        if (tax.classes.empty() || !tax.classes[0].covers.empty())
            throw ConfigError("dataset " + tax.id +
                              ": class 0 must be the background class");
    }
    std::vector<Sample> out;
    out.reserve(spec.datasets.size() * spec.samples_per_dataset);
    for (size_t di = 0; di < spec.datasets.size(); ++di) {
        const size_t reg_idx = registry.dataset_index(spec.datasets[di].id);
        for (size_t n = 0; n < spec.samples_per_dataset; ++n)
            out.push_back(render_sample(spec, spec.datasets[di], reg_idx,
                                        registry, static_cast<uint32_t>(n),
                                        draw_log));
    }
    return out;
}

namespace {

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path, size_t& offset) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is)
        throw DataError(path + ": truncated at byte offset " +
                        std::to_string(offset));
    offset += sizeof(T);
    return v;
}

} // namespace

void save_sample(const Sample& s, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os.write("MDPS", 4);
    put<uint16_t>(os, 1);
    put<uint32_t>(os, s.height);
    put<uint32_t>(os, s.width);
    put<uint16_t>(os, s.channels);
    put<uint16_t>(os, s.dataset_id);
    os.write(reinterpret_cast<const char*>(s.image.data()),
             static_cast<std::streamsize>(s.image.size() * sizeof(float)));
    os.write(reinterpret_cast<const char*>(s.labels.data()),
             static_cast<std::streamsize>(s.labels.size() * sizeof(uint16_t)));
    if (!os) throw DataError("write failed: " + path);
}

Sample load_sample(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    size_t offset = 0;
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MDPS", 4) != 0)
        throw DataError(path + ": bad magic at byte offset 0");
    offset = 4;
    const uint16_t version = get<uint16_t>(is, path, offset);
    if (version != 1)
        throw DataError(path + ": unsupported version " +
                        std::to_string(version) + " at byte offset 4");
    Sample s;
    s.height = get<uint32_t>(is, path, offset);
    s.width = get<uint32_t>(is, path, offset);
    s.channels = get<uint16_t>(is, path, offset);
    s.dataset_id = get<uint16_t>(is, path, offset);
    const size_t npix = static_cast<size_t>(s.height) * s.width;
    s.image.resize(npix * s.channels);
    is.read(reinterpret_cast<char*>(s.image.data()),
            static_cast<std::streamsize>(s.image.size() * sizeof(float)));
    if (!is)
        throw DataError(path + ": truncated image data at byte offset " +
                        std::to_string(offset));
    offset += s.image.size() * sizeof(float);
    s.labels.resize(npix);
    is.read(reinterpret_cast<char*>(s.labels.data()),
            static_cast<std::streamsize>(s.labels.size() * sizeof(uint16_t)));
    if (!is)
        throw DataError(path + ": truncated label data at byte offset " +
                        std::to_string(offset));
    return s;
}

void save_descriptor(const DatasetDesc& d, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "dataset " << d.id << "\n";
    for (const auto& name : d.class_names) os << name << "\n";
}

DatasetDesc load_descriptor(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open: " + path);
    DatasetDesc d;
    std::string line;
    if (!std::getline(is, line) || line.rfind("dataset ", 0) != 0)
        throw DataError(path + ": first line must be 'dataset <id>'");
    d.id = line.substr(8);
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) d.class_names.push_back(line);
    }
    if (d.class_names.empty()) throw DataError(path + ": no class names");
    return d;
}

} // namespace mdp
