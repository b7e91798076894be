#pragma once
// The pretraining loop: cross-dataset batch sampling, two-view augmentation,
// optional cutmix/mixup terms, key-encoder bank updates, loss on query
// embeddings, SGD with cosine schedule, momentum update of the key encoder.

#include <memory>
#include <optional>
#include <string>

#include "mdp/config.hpp"
#include "mdp/datasets.hpp"
#include "mdp/encoder.hpp"
#include "mdp/losses.hpp"
#include "mdp/prototypes.hpp"

namespace mdp {

double cosine_lr(double lr0, size_t step, size_t total);

// v <- momentum*v + grad + wd*theta; theta <- theta - lr*v
void sgd_step(ParamMap& params, const ParamMap& grads, ParamMap& velocity,
              double lr, double momentum, double weight_decay);

struct StepRecord {
    size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    std::map<std::string, double> components;
    size_t proto_valid = 0;
    bool has_eval = false;
    double compactness = 0.0;
    double separability = 0.0;
};

struct RunReport {
    std::vector<StepRecord> records;
    double wall_seconds = 0.0;
};

std::string step_record_json(const StepRecord& r);

struct TrainerState {
    TrainConfig cfg;
    size_t num_classes = 0;
    ParamMap query, key, velocity;
    PrototypeBank bank;
    std::optional<RegionBank> region_bank;
    uint64_t step = 0;

    TrainerState(const TrainConfig& cfg, size_t num_classes);
};

// Checkpoint: magic "MDPC", version, arch config, f64 param blobs for query
// key and velocity, bank state, root seed, step counter.
void save_checkpoint(const TrainerState& st, const std::string& path);
TrainerState load_checkpoint(const std::string& path);

class Trainer {
public:
    Trainer(const TrainConfig& cfg, std::vector<Sample> data,
            size_t num_classes);
    // Resume from a checkpoint; config must match the stored one.
    Trainer(TrainerState state, std::vector<Sample> data);

    // Runs until cfg.steps. If report_path is nonempty, appends one JSON
    // line per step.
    RunReport run(const std::string& report_path = "");
    // Same, but stops early at `stop_step` (for interrupt/resume tests).
    RunReport run_until(size_t stop_step, const std::string& report_path = "");

    const TrainerState& state() const { return state_; }
    TrainerState& state() { return state_; }
    PrototypeSnapshot current_snapshot() const;

private:
    StepRecord do_step();
    void accumulate_loss_term(EncoderNet& net, const Tensor& image,
                              ScalarFn fn, ParamMap& grads, double& loss_sum,
                              std::map<std::string, double>& components);

    TrainerState state_;
    std::vector<Sample> data_;
    size_t feat_h_ = 0, feat_w_ = 0;
    std::unique_ptr<EncoderNet> query_net_, key_net_;
};

} // namespace mdp
