#pragma once
// TrainConfig and the key=value config file format. Unknown keys are
// rejected; defaults match the published hyperparameters.

#include <cstdint>
#include <string>

#include "mdp/augment.hpp"
#include "mdp/encoder.hpp"

namespace mdp {

enum class LossMode { Pixel, Prototype, Sparse };
enum class BankType { Class, Region };

const char* to_string(LossMode m);
const char* to_string(BankType b);
LossMode loss_mode_from(const std::string& s);
BankType bank_type_from(const std::string& s);

struct TrainConfig {
    double lr0 = 0.2;
    double momentum = 0.9;
    double weight_decay = 4e-5;
    size_t batch_size = 8; // desk-scale default
    size_t steps = 2000;
    size_t epochs = 0; // if nonzero, overrides steps as epochs*ceil(N/bs)
    double tau = 0.07;
    double alpha = 0.5;
    size_t topk = 5;
    double key_momentum = 0.999;
    double region_mix_prob = 0.0; // per-sample probability of a cutmix term
    double pixel_mix_prob = 0.0;  // per-sample probability of a mixup term
    LossMode loss_mode = LossMode::Prototype;
    BankType bank_type = BankType::Class;
    size_t bank_slots = 16;
    size_t sample_cap = 512;
    bool topk_from_pixel = false;
    uint64_t seed = 0;
    size_t eval_interval = 100;
    EncoderConfig encoder;
    AugConfig aug;

    void validate() const;
    size_t resolve_steps(size_t dataset_size) const;
};

TrainConfig parse_config_file(const std::string& path);
// Applies one "key=value" override (same keys as the file).
void apply_config_key(TrainConfig& cfg, const std::string& key,
                      const std::string& value, const std::string& where);
// Echo in file format, every key explicit.
std::string config_to_string(const TrainConfig& cfg);
uint64_t config_hash(const TrainConfig& cfg);

} // namespace mdp
