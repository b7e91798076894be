// mdp: synthetic data generation, multi-dataset pretraining, evaluation,
// gradient checking and desk-scale ablation sweeps, all driven by one root
// seed through named substreams.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdp/config.hpp"
#include "mdp/datasets.hpp"
#include "mdp/errors.hpp"
#include "mdp/eval.hpp"
#include "mdp/gradsuite.hpp"
#include "mdp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

void write_manifest(const fs::path& dir, const std::string& command,
                    const mdp::TrainConfig& cfg,
                    const std::vector<std::string>& artifacts) {
    json m;
    m["command"] = command;
    m["config_hash"] = mdp::config_hash(cfg);
    m["seed"] = cfg.seed;
    m["artifacts"] = artifacts;
    m["tool_version"] = kToolVersion;
    std::ofstream os(dir / "manifest.json");
    if (!os) throw mdp::DataError("cannot write manifest in " + dir.string());
    os << m.dump(2) << "\n";
}

struct LoadedData {
    std::vector<mdp::Sample> samples;
    std::vector<mdp::DatasetDesc> descriptors;
    size_t num_classes = 0;
};

// Reads every *.desc and *.mdps file of a gen-data directory, sorted by name.
LoadedData load_dataset_dir(const std::string& dir) {
    if (!fs::is_directory(dir))
        throw mdp::DataError("not a dataset directory: " + dir);
    std::vector<fs::path> descs, samples;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".desc") descs.push_back(e.path());
        if (e.path().extension() == ".mdps") samples.push_back(e.path());
    }
    std::sort(descs.begin(), descs.end());
    std::sort(samples.begin(), samples.end());
    if (descs.empty() || samples.empty())
        throw mdp::DataError("no dataset files under " + dir);
    LoadedData out;
    for (const auto& p : descs) {
        out.descriptors.push_back(mdp::load_descriptor(p.string()));
        out.num_classes += out.descriptors.back().class_names.size();
    }
    for (const auto& p : samples)
        out.samples.push_back(mdp::load_sample(p.string()));
    return out;
}

void apply_mix_flag(mdp::TrainConfig& cfg, const std::string& mix) {
    if (mix == "none") {
        cfg.region_mix_prob = 0.0;
        cfg.pixel_mix_prob = 0.0;
    } else if (mix == "region") {
        cfg.region_mix_prob = 0.5;
        cfg.pixel_mix_prob = 0.0;
    } else if (mix == "pixel") {
        cfg.region_mix_prob = 0.0;
        cfg.pixel_mix_prob = 0.5;
    } else if (mix == "both") {
        cfg.region_mix_prob = 0.5;
        cfg.pixel_mix_prob = 0.5;
    } else {
        throw mdp::ConfigError("--mix must be one of none|region|pixel|both");
    }
}

// Nearest-prototype mIoU of `params` on a train/eval split of the pool;
// prototypes derived from the train half's embeddings.
double nearest_proto_miou(const mdp::EncoderConfig& ec,
                          const mdp::ParamMap& params,
                          const std::vector<mdp::Sample>& pool,
                          size_t num_classes) {
    mdp::EncoderNet net(ec, pool[0].height, pool[0].width);
    net.set_params(params);
    std::vector<mdp::Tensor> train_f;
    std::vector<std::vector<mdp::LabelId>> train_y;
    mdp::ConfusionMatrix cm(num_classes);
    // even/odd split so both datasets appear on both sides
    for (size_t i = 0; i < pool.size(); i += 2) {
        train_f.push_back(net.embed(pool[i].image_tensor()));
        train_y.push_back(mdp::downsample_labels(
            pool[i].labels, pool[i].height, pool[i].width, ec.stride()));
    }
    auto snap = mdp::prototypes_from_features(train_f, train_y, num_classes);
    for (size_t i = 1; i < pool.size(); i += 2) {
        auto f = net.embed(pool[i].image_tensor());
        auto y = mdp::downsample_labels(pool[i].labels, pool[i].height,
                                        pool[i].width, ec.stride());
        cm.add_map(y, mdp::nearest_prototype_predict(f, snap));
    }
    return mdp::miou(cm).mean;
}

int cmd_gen_data(uint64_t seed, const std::string& out, size_t image_size,
                 size_t count) {
    auto spec = mdp::default_benchmark_spec(seed, image_size, count);
    mdp::LabelRegistry registry(mdp::descriptors_of(spec),
                                mdp::MergeMode::Disjoint);
    auto samples = mdp::generate_synthetic_dataset(spec, registry);
    fs::create_directories(out);
    std::vector<std::string> artifacts;
    for (size_t d = 0; d < registry.num_datasets(); ++d) {
        const std::string p =
            (fs::path(out) / (registry.dataset(d).id + ".desc")).string();
        mdp::save_descriptor(registry.dataset(d), p);
        artifacts.push_back(p);
    }
    for (const auto& s : samples) {
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%02u_%04u.mdps",
                      unsigned(s.dataset_id), unsigned(s.sample_id));
        const std::string p = (fs::path(out) / name).string();
        mdp::save_sample(s, p);
        artifacts.push_back(p);
    }
    mdp::TrainConfig cfg;
    cfg.seed = seed;
    write_manifest(out, "gen-data", cfg, artifacts);
    std::cout << "wrote " << samples.size() << " samples, "
              << registry.num_global() << " global classes, to " << out
              << "\n";
    return 0;
}

int cmd_pretrain(const mdp::TrainConfig& cfg, const std::string& data,
                 const std::string& out, const std::string& resume,
                 long long steps_override) {
    LoadedData ld = load_dataset_dir(data);
    fs::create_directories(out);
    const std::string report_path = (fs::path(out) / "report.jsonl").string();
    const std::string ckpt_path = (fs::path(out) / "checkpoint.mdpc").string();

    std::unique_ptr<mdp::Trainer> trainer;
    if (!resume.empty()) {
        auto st = mdp::load_checkpoint(resume);
        if (steps_override >= 0)
            st.cfg.steps = static_cast<size_t>(steps_override);
        trainer = std::make_unique<mdp::Trainer>(std::move(st),
                                                 std::move(ld.samples));
    } else {
        trainer = std::make_unique<mdp::Trainer>(cfg, std::move(ld.samples),
                                                 ld.num_classes);
        // a fresh run truncates any stale report
        std::ofstream(report_path, std::ios::trunc);
    }
    auto report = trainer->run(report_path);
    mdp::save_checkpoint(trainer->state(), ckpt_path);
    write_manifest(out, "pretrain", trainer->state().cfg,
                   {report_path, ckpt_path});
    std::cout << "trained to step " << trainer->state().step << " in "
              << report.wall_seconds << "s; checkpoint at " << ckpt_path
              << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data,
             const std::string& out) {
    auto st = mdp::load_checkpoint(ckpt);
    LoadedData ld = load_dataset_dir(data);
    if (ld.num_classes != st.num_classes)
        throw mdp::DataError("checkpoint expects " +
                             std::to_string(st.num_classes) +
                             " classes, dataset has " +
                             std::to_string(ld.num_classes));
    const auto& ec = st.cfg.encoder;
    const double np_miou =
        nearest_proto_miou(ec, st.query, ld.samples, ld.num_classes);

    std::vector<mdp::Sample> train_split, eval_split;
    for (size_t i = 0; i < ld.samples.size(); ++i)
        (i % 2 == 0 ? train_split : eval_split).push_back(ld.samples[i]);
    auto probe = mdp::linear_probe(ec, st.query, train_split, eval_split,
                                   ld.num_classes, {30, 0.2, st.cfg.seed});

    mdp::EncoderNet net(ec, ld.samples[0].height, ld.samples[0].width);
    net.set_params(st.query);
    std::vector<mdp::Tensor> feats;
    std::vector<std::vector<mdp::LabelId>> labels;
    for (const auto& s : eval_split) {
        feats.push_back(net.embed(s.image_tensor()));
        labels.push_back(mdp::downsample_labels(s.labels, s.height, s.width,
                                                ec.stride()));
    }
    auto snap = mdp::prototypes_from_features(feats, labels, ld.num_classes);
    auto quality = mdp::embedding_quality(feats, labels, snap);

    json doc;
    doc["seed"] = st.cfg.seed;
    doc["config"] = mdp::config_to_string(st.cfg);
    doc["nearest_prototype_miou"] = np_miou;
    doc["linear_probe_miou"] = probe.iou.mean;
    json per_class = json::array();
    for (size_t c = 0; c < probe.iou.per_class.size(); ++c)
        per_class.push_back(probe.iou.scored[c] ? json(probe.iou.per_class[c])
                                                : json(nullptr));
    doc["linear_probe_per_class"] = per_class;
    doc["compactness"] = quality.compactness;
    doc["separability"] = quality.separability;

    fs::create_directories(out);
    const std::string metrics_path = (fs::path(out) / "metrics.json").string();
    std::ofstream(metrics_path) << doc.dump(2) << "\n";
    write_manifest(out, "eval", st.cfg, {metrics_path});
    std::cout << doc.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(uint64_t seed) {
    auto report = mdp::run_gradient_suite(seed);
    for (const auto& c : report.cases)
        if (!c.pass)
            std::cout << "FAIL " << c.name << " max_rel_err=" << c.max_rel_err
                      << "\n";
    std::cout << (report.pass ? "PASS" : "FAIL") << ": " << report.cases.size()
              << " cases, worst rel err " << report.worst() << " (tol "
              << report.tol << "), " << report.seconds << "s\n";
    return report.pass ? 0 : 3;
}

int cmd_ablate(const mdp::TrainConfig& base, const std::string& data,
               const std::string& out) {
    LoadedData ld = load_dataset_dir(data);
    fs::create_directories(out);
    const double taus[] = {0.07, 0.3, 0.5};
    const mdp::BankType banks[] = {mdp::BankType::Class, mdp::BankType::Region};
    const char* mixes[] = {"none", "both"};
    json rows = json::array();
    std::cout << "tau     bank    mix    nearest-proto mIoU\n";
    for (double tau : taus)
        for (auto bank : banks)
            for (const char* mix : mixes) {
                mdp::TrainConfig cfg = base;
                cfg.tau = tau;
                cfg.bank_type = bank;
                apply_mix_flag(cfg, mix);
                mdp::Trainer trainer(cfg, ld.samples, ld.num_classes);
                trainer.run();
                const double m = nearest_proto_miou(
                    cfg.encoder, trainer.state().query, ld.samples,
                    ld.num_classes);
                std::printf("%-7.2f %-7s %-6s %.4f\n", tau,
                            mdp::to_string(bank), mix, m);
                rows.push_back({{"tau", tau},
                                {"bank", mdp::to_string(bank)},
                                {"mix", mix},
                                {"nearest_prototype_miou", m}});
            }
    const std::string table_path = (fs::path(out) / "ablation.json").string();
    std::ofstream(table_path) << rows.dump(2) << "\n";
    write_manifest(out, "ablate", base, {table_path});
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    if (const char* t = std::getenv("MDP_THREADS")) {
        const int n = std::atoi(t);
        if (n > 0) omp_set_num_threads(n);
    }

    CLI::App app{"multi-dataset segmentation pretraining toolkit"};
    app.require_subcommand(1);

    std::string config_path, out, data, resume, ckpt, loss, mix, bank;
    uint64_t seed = 0;
    bool seed_set = false;
    long long steps = -1;
    size_t image_size = 32, count = 512;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, "root random seed")
            ->each([&](const std::string&) { seed_set = true; });
        sub->add_option("--out", out, "output directory");
    };

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
    add_common(gen);
    gen->add_option("--size", image_size, "image side length");
    gen->add_option("--count", count, "samples per dataset");

    auto* pre = app.add_subcommand("pretrain", "run pretraining");
    add_common(pre);
    pre->add_option("--config", config_path, "key=value config file");
    pre->add_option("--data", data, "dataset directory")->required();
    pre->add_option("--steps", steps, "override step count");
    pre->add_option("--loss", loss, "pixel|proto|sparse");
    pre->add_option("--mix", mix, "none|region|pixel|both");
    pre->add_option("--bank", bank, "class|region");
    pre->add_option("--resume", resume, "checkpoint to resume from");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev);
    ev->add_option("--checkpoint", ckpt, "checkpoint path")->required();
    ev->add_option("--data", data, "dataset directory")->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference suite");
    gc->add_option("--seed", seed, "root random seed");

    auto* ab = app.add_subcommand("ablate", "tau / bank / mixing sweep");
    add_common(ab);
    ab->add_option("--config", config_path, "key=value config file");
    ab->add_option("--data", data, "dataset directory")->required();
    ab->add_option("--steps", steps, "steps per ablation cell");

    CLI11_PARSE(app, argc, argv);

    try {
        mdp::TrainConfig cfg;
        if (!config_path.empty()) cfg = mdp::parse_config_file(config_path);
        if (seed_set || !gc->parsed()) cfg.seed = seed;
        if (steps >= 0) cfg.steps = static_cast<size_t>(steps);
        if (!loss.empty()) cfg.loss_mode = mdp::loss_mode_from(loss);
        if (!bank.empty()) cfg.bank_type = mdp::bank_type_from(bank);
        if (!mix.empty()) apply_mix_flag(cfg, mix);
        cfg.validate();

        if (gen->parsed())
            return cmd_gen_data(cfg.seed, out.empty() ? "data" : out,
                                image_size, count);
        if (pre->parsed())
            return cmd_pretrain(cfg, data, out.empty() ? "run" : out, resume,
                                steps);
        if (ev->parsed())
            return cmd_eval(ckpt, data, out.empty() ? "eval" : out);
        if (gc->parsed()) return cmd_gradcheck(seed);
        if (ab->parsed()) {
            if (steps < 0) cfg.steps = 40; // desk-scale default per cell
            return cmd_ablate(cfg, data, out.empty() ? "ablation" : out);
        }
    } catch (const mdp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const mdp::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const mdp::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
