#pragma once
// Dataset registry, label-space union, synthetic multi-taxonomy data and the
// MDPS sample file format.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mdp/rng.hpp"
#include "mdp/tensor.hpp"

namespace mdp {

using LabelId = uint16_t;
inline constexpr LabelId kIgnoreLabel = 65535; // reserved sentinel

struct DatasetDesc {
    std::string id;
    std::vector<std::string> class_names;
};

enum class MergeMode { Disjoint, NameMerged };

// The merged global label space Y = Y1 u ... u Yn. Global ordering is
// dataset order then local order; immutable after construction.
class LabelRegistry {
public:
    LabelRegistry(std::vector<DatasetDesc> datasets, MergeMode mode);

    size_t num_datasets() const { return datasets_.size(); }
    size_t num_global() const { return global_.size(); }
    MergeMode mode() const { return mode_; }

    const DatasetDesc& dataset(size_t idx) const { return datasets_.at(idx); }
    size_t dataset_index(const std::string& id) const;

    LabelId to_global(size_t dataset_idx, LabelId local) const;
    // (dataset index, local id) of the first dataset contributing this class.
    std::pair<size_t, LabelId> global_origin(LabelId global) const;
    const std::string& global_name(LabelId global) const;

    std::vector<LabelId> map_local_to_global(size_t dataset_idx,
                                             const std::vector<LabelId>& local,
                                             const std::string& sample_tag) const;

private:
    std::vector<DatasetDesc> datasets_;
    MergeMode mode_;
    std::vector<std::pair<size_t, LabelId>> global_; // origin per global id
    std::vector<std::string> global_names_;
    std::vector<std::vector<LabelId>> local_to_global_;
};

struct Sample {
    uint16_t dataset_id = 0; // index into the registry's dataset order
    uint32_t sample_id = 0;
    uint32_t height = 0, width = 0;
    uint16_t channels = 0;
    std::vector<float> image;    // H*W*C row-major, values in [0,1]
    std::vector<LabelId> labels; // H*W global class ids (or kIgnoreLabel)

    size_t pixels() const { return static_cast<size_t>(height) * width; }
    float& at(size_t i, size_t j, size_t c) {
        return image[(i * width + j) * channels + c];
    }
    float at(size_t i, size_t j, size_t c) const {
        return image[(i * width + j) * channels + c];
    }
    LabelId& label_at(size_t i, size_t j) { return labels[i * width + j]; }
    LabelId label_at(size_t i, size_t j) const { return labels[i * width + j]; }
    Tensor image_tensor() const;
};

// Primitive shape variants the synthetic worlds are built from. Coarse
// taxonomies merge variants into one class (the wall vs wall-brick split).
enum class ShapeKind : int { Circle = 0, Rect = 1, Stripe = 2 };

struct ShapeVariant {
    ShapeKind kind;
    int variant; // 0 or 1 (size / orientation split)
    bool operator==(const ShapeVariant&) const = default;
};

// All six drawable variants in fixed order.
const std::vector<ShapeVariant>& all_variants();

struct TaxonomyClass {
    std::string name;
    std::vector<ShapeVariant> covers; // empty => background class
};

struct DatasetTaxonomy {
    std::string id;
    std::vector<TaxonomyClass> classes; // class 0 must be background
};

struct SyntheticSpec {
    std::vector<DatasetTaxonomy> datasets;
    size_t image_size = 32;
    size_t samples_per_dataset = 64;
    size_t shapes_per_image = 3;
    uint64_t seed = 0;
    // Draw weight per variant, indexed like all_variants(); empty = uniform.
    std::vector<double> variant_freq;
};

// Two datasets over the same shape world with different granularity:
// "geo4" merges each kind, "geo6" splits every variant.
SyntheticSpec default_benchmark_spec(uint64_t seed = 0, size_t image_size = 32,
                                     size_t samples_per_dataset = 64);

std::vector<DatasetDesc> descriptors_of(const SyntheticSpec& spec);

// Deterministic per (spec.seed, dataset, sample id). Labels are global ids
// under the given registry. Optional draw_log records the variant chosen for
// every placed shape, in draw order (counting oracle hook).
std::vector<Sample> generate_synthetic_dataset(
    const SyntheticSpec& spec, const LabelRegistry& registry,
    std::vector<ShapeVariant>* draw_log = nullptr);

// MDPS file format, little-endian:
// magic "MDPS", version u16=1, H u32, W u32, C u16, dataset-id u16,
// image H*W*C float32 row-major, labels H*W uint16 (65535 = ignore).
void save_sample(const Sample& s, const std::string& path);
Sample load_sample(const std::string& path);

// Descriptor files: first line "dataset <id>", then one class name per line.
void save_descriptor(const DatasetDesc& d, const std::string& path);
DatasetDesc load_descriptor(const std::string& path);

} // namespace mdp
