#include "mdp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mdp/augment.hpp"
#include "mdp/errors.hpp"
#include "mdp/eval.hpp"
#include "mdp/rng.hpp"

namespace mdp {

double cosine_lr(double lr0, size_t step, size_t total) {
    if (total == 0 || step > total)
        throw UsageError("cosine_lr: step must be in [0, total]");
    return 0.5 * lr0 *
           (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                           static_cast<double>(total)));
}

void sgd_step(ParamMap& params, const ParamMap& grads, ParamMap& velocity,
              double lr, double momentum, double weight_decay) {
    auto pit = params.begin();
    auto git = grads.begin();
    auto vit = velocity.begin();
    for (; pit != params.end(); ++pit, ++git, ++vit) {
        if (pit->first != git->first || pit->first != vit->first)
            throw UsageError("sgd_step: param maps out of sync");
        auto& theta = pit->second.vec();
        const auto& g = git->second.vec();
        auto& v = vit->second.vec();
        if (theta.size() != g.size() || theta.size() != v.size())
            throw UsageError("sgd_step: shape mismatch at " + pit->first);
        for (size_t i = 0; i < theta.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw NumericError("sgd_step: non-finite gradient in " +
                                   pit->first);
            v[i] = momentum * v[i] + g[i] + weight_decay * theta[i];
            theta[i] -= lr * v[i];
        }
    }
}

std::string step_record_json(const StepRecord& r) {
    std::ostringstream os;
    os.precision(17);
    os << "{\"step\":" << r.step << ",\"lr\":" << r.lr
       << ",\"loss\":" << r.loss << ",\"components\":{";
    bool first = true;
    for (const auto& [k, v] : r.components) {
        os << (first ? "" : ",") << "\"" << k << "\":" << v;
        first = false;
    }
    os << "},\"proto_valid\":" << r.proto_valid;
    if (r.has_eval)
        os << ",\"compactness\":" << r.compactness
           << ",\"separability\":" << r.separability;
    os << "}";
    return os.str();
}

TrainerState::TrainerState(const TrainConfig& c, size_t nc)
    : cfg(c),
      num_classes(nc),
      bank(nc, c.encoder.embed_dim, c.bank_slots) {
    cfg.validate();
    if (nc == 0) throw ConfigError("TrainerState: need >= 1 class");
    query = init_encoder(cfg.encoder, cfg.seed);
    key = query; // exact copy at step 0
    for (const auto& [name, t] : query) velocity[name] = Tensor(t.shape());
    if (cfg.bank_type == BankType::Region)
        region_bank.emplace(nc, cfg.encoder.embed_dim,
                            cfg.bank_slots * cfg.batch_size);
}

namespace {

void write_params(std::ostream& os, const ParamMap& p) {
    auto put = [&os](uint64_t v) {
        os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    };
    put(p.size());
    for (const auto& [name, t] : p) {
        put(name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put(t.ndim());
        for (size_t d : t.shape()) put(d);
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
}

ParamMap read_params(std::istream& is, const std::string& path) {
    auto get = [&is, &path]() {
        uint64_t v;
        is.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!is) throw DataError(path + ": truncated checkpoint");
        return v;
    };
    ParamMap p;
    const uint64_t n = get();
    for (uint64_t i = 0; i < n; ++i) {
        const uint64_t len = get();
        std::string name(len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(len));
        const uint64_t nd = get();
        std::vector<size_t> shape(nd);
        for (auto& d : shape) d = get();
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!is) throw DataError(path + ": truncated checkpoint");
        p[name] = std::move(t);
    }
    return p;
}

} // namespace

void save_checkpoint(const TrainerState& st, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os.write("MDPC", 4);
    const uint16_t version = 1;
    os.write(reinterpret_cast<const char*>(&version), 2);
    const std::string cfg_text = config_to_string(st.cfg);
    const uint64_t cfg_len = cfg_text.size();
    os.write(reinterpret_cast<const char*>(&cfg_len), 8);
    os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
    const uint64_t nc = st.num_classes;
    os.write(reinterpret_cast<const char*>(&nc), 8);
    write_params(os, st.query);
    write_params(os, st.key);
    write_params(os, st.velocity);
    st.bank.serialize(os);
    const uint8_t has_region = st.region_bank.has_value() ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&has_region), 1);
    if (st.region_bank) st.region_bank->serialize(os);
    const uint64_t seed = st.cfg.seed;
    os.write(reinterpret_cast<const char*>(&seed), 8);
    os.write(reinterpret_cast<const char*>(&st.step), 8);
    if (!os) throw DataError("write failed: " + path);
}

TrainerState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "MDPC")
        throw DataError(path + ": bad checkpoint magic");
    uint16_t version;
    is.read(reinterpret_cast<char*>(&version), 2);
    if (version != 1)
        throw DataError(path + ": unsupported checkpoint version");
    uint64_t cfg_len;
    is.read(reinterpret_cast<char*>(&cfg_len), 8);
    if (!is) throw DataError(path + ": truncated checkpoint");
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
    // parse the embedded config through a temp file-free path
    TrainConfig cfg;
    std::istringstream cs(cfg_text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(cs, line)) {
        ++lineno;
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        const std::string key = line.substr(0, eq - 1);
        const std::string value = line.substr(eq + 2);
        apply_config_key(cfg, key, value,
                         path + " embedded config line " + std::to_string(lineno));
    }
    uint64_t nc;
    is.read(reinterpret_cast<char*>(&nc), 8);
    TrainerState st(cfg, nc);
    st.query = read_params(is, path);
    st.key = read_params(is, path);
    st.velocity = read_params(is, path);
    st.bank = PrototypeBank::deserialize(is);
    uint8_t has_region;
    is.read(reinterpret_cast<char*>(&has_region), 1);
    if (has_region)
        st.region_bank = RegionBank::deserialize(is);
    else
        st.region_bank.reset();
    uint64_t seed;
    is.read(reinterpret_cast<char*>(&seed), 8);
    is.read(reinterpret_cast<char*>(&st.step), 8);
    if (!is) throw DataError(path + ": truncated checkpoint");
    return st;
}

Trainer::Trainer(const TrainConfig& cfg, std::vector<Sample> data,
                 size_t num_classes)
    : state_(cfg, num_classes), data_(std::move(data)) {
    if (data_.empty()) throw ConfigError("Trainer: no training data");
    for (const auto& s : data_)
        if (s.height != data_[0].height || s.width != data_[0].width)
            throw DataError("Trainer: samples must share one image size");
    query_net_ = std::make_unique<EncoderNet>(cfg.encoder, data_[0].height,
                                              data_[0].width);
    key_net_ = std::make_unique<EncoderNet>(cfg.encoder, data_[0].height,
                                            data_[0].width);
    feat_h_ = query_net_->out_height();
    feat_w_ = query_net_->out_width();
}

Trainer::Trainer(TrainerState state, std::vector<Sample> data)
    : state_(std::move(state)), data_(std::move(data)) {
    if (data_.empty()) throw ConfigError("Trainer: no training data");
    query_net_ = std::make_unique<EncoderNet>(state_.cfg.encoder,
                                              data_[0].height, data_[0].width);
    key_net_ = std::make_unique<EncoderNet>(state_.cfg.encoder,
                                            data_[0].height, data_[0].width);
    feat_h_ = query_net_->out_height();
    feat_w_ = query_net_->out_width();
}

PrototypeSnapshot Trainer::current_snapshot() const {
    return state_.cfg.bank_type == BankType::Class
               ? state_.bank.snapshot()
               : state_.region_bank->prototype_snapshot();
}

void Trainer::accumulate_loss_term(EncoderNet& net, const Tensor& image,
                                   ScalarFn fn, ParamMap& grads,
                                   double& loss_sum,
                                   std::map<std::string, double>& components) {
    net.loss_fn = std::move(fn);
    const double scale = 1.0 / static_cast<double>(state_.cfg.batch_size);
    loss_sum += scale * net.forward_loss(image);
    net.backward_loss();
    for (auto& [name, g] : grads) {
        const Tensor& pg = net.graph().param_grad(name);
        auto& gv = g.vec();
        const auto& pv = pg.vec();
        for (size_t i = 0; i < gv.size(); ++i) gv[i] += scale * pv[i];
    }
    net.loss_fn = nullptr;
    (void)components;
}

StepRecord Trainer::do_step() {
    const TrainConfig& cfg = state_.cfg;
    const size_t t = state_.step;
    const size_t total = cfg.resolve_steps(data_.size());
    Rng rng(mix_seed(cfg.seed, "step", t));

    query_net_->set_params(state_.query);
    key_net_->set_params(state_.key);

    std::vector<size_t> batch_idx(cfg.batch_size);
    for (auto& i : batch_idx) i = rng.uniform_int(data_.size());

    // Views, key embeddings, bank update.
    std::vector<ViewPair> views;
    std::vector<Tensor> key_feats;
    std::vector<std::vector<LabelId>> q_labels, k_labels;
    std::vector<std::vector<ImageClassEmbedding>> bank_batch;
    const size_t factor = cfg.encoder.stride();
    for (size_t i = 0; i < cfg.batch_size; ++i) {
        const Sample& src = data_[batch_idx[i]];
        views.push_back(make_views(
            src, cfg.aug, mix_seed(cfg.seed, "augment", t * cfg.batch_size + i)));
        const ViewPair& vp = views.back();
        key_feats.push_back(key_net_->embed(vp.view_k.image_tensor()));
        q_labels.push_back(downsample_labels(vp.view_q.labels, src.height,
                                             src.width, factor));
        k_labels.push_back(downsample_labels(vp.view_k.labels, src.height,
                                             src.width, factor));
        bank_batch.push_back(
            image_class_embeddings(key_feats.back(), k_labels.back()));
    }
    if (cfg.bank_type == BankType::Class)
        state_.bank.update(bank_batch);
    else
        state_.region_bank->update(bank_batch);

    StepRecord rec;
    rec.step = t;
    rec.lr = cosine_lr(cfg.lr0, t, total);

    const bool uses_prototypes = cfg.loss_mode != LossMode::Pixel;
    const bool warmup = uses_prototypes && t < cfg.bank_slots;
    PrototypeSnapshot snap;
    std::vector<std::vector<LabelId>> topk_table;
    if (uses_prototypes && !warmup) {
        snap = current_snapshot();
        rec.proto_valid = snap.num_valid();
        if (rec.proto_valid == 0)
            throw NumericError(
                "pretrain: all prototypes invalid at step " +
                std::to_string(t) + "; bank warm-up insufficient");
        if (cfg.loss_mode == LossMode::Sparse && !cfg.topk_from_pixel)
            topk_table = build_topk_table(snap, cfg.topk);
    } else if (uses_prototypes) {
        rec.proto_valid =
            cfg.bank_type == BankType::Class
                ? state_.bank.snapshot().num_valid()
                : state_.region_bank->prototype_snapshot().num_valid();
    }

    if (warmup) {
        rec.components["warmup"] = 1.0;
        ++state_.step;
        return rec;
    }

    ParamMap grads;
    for (const auto& [name, p] : state_.query) grads[name] = Tensor(p.shape());
    double loss_sum = 0.0;
    std::map<std::string, double> comp_sums;
    const double scale = 1.0 / static_cast<double>(cfg.batch_size);

    auto add_components = [&](const LossValue& lv) {
        for (const auto& [k, v] : lv.components) comp_sums[k] += scale * v;
    };

    for (size_t i = 0; i < cfg.batch_size; ++i) {
        const Sample& src = data_[batch_idx[i]];
        // Unmixed term on the query view.
        switch (cfg.loss_mode) {
            case LossMode::Pixel: {
                Rng srng(mix_seed(cfg.seed, "sampler", t * cfg.batch_size + i));
                auto sel_q = stratified_sample(q_labels[i], cfg.sample_cap, srng);
                auto sel_k = stratified_sample(k_labels[i], cfg.sample_cap, srng);
                accumulate_loss_term(
                    *query_net_, views[i].view_q.image_tensor(),
                    [&, i, sel_q, sel_k](const Tensor& f) {
                        Tensor g;
                        LossValue lv =
                            pixel_to_pixel(f, q_labels[i], key_feats[i],
                                           k_labels[i], cfg.tau, &g, &sel_q,
                                           &sel_k);
                        add_components(lv);
                        return std::make_pair(lv.value, std::move(g));
                    },
                    grads, loss_sum, comp_sums);
                break;
            }
            case LossMode::Prototype:
                accumulate_loss_term(
                    *query_net_, views[i].view_q.image_tensor(),
                    [&, i](const Tensor& f) {
                        Tensor g;
                        LossValue lv = pixel_to_prototype(f, q_labels[i], snap,
                                                          cfg.tau, &g);
                        add_components(lv);
                        return std::make_pair(lv.value, std::move(g));
                    },
                    grads, loss_sum, comp_sums);
                break;
            case LossMode::Sparse:
                accumulate_loss_term(
                    *query_net_, views[i].view_q.image_tensor(),
                    [&, i](const Tensor& f) {
                        Tensor g;
                        LossValue lv = sparse_coding(
                            f, q_labels[i], snap, topk_table, cfg.alpha,
                            cfg.topk, cfg.tau, &g, cfg.topk_from_pixel);
                        add_components(lv);
                        return std::make_pair(lv.value, std::move(g));
                    },
                    grads, loss_sum, comp_sums);
                break;
        }

        // Mixed-view terms (prototype-based losses only).
        if (uses_prototypes && cfg.region_mix_prob > 0.0 &&
            rng.bernoulli(cfg.region_mix_prob)) {
            const Sample& partner = data_[rng.uniform_int(data_.size())];
            auto mask = random_rect_mask(src.height, src.width, rng);
            MixedSample ms = cutmix(src, partner, mask);
            auto mixed_labels = downsample_labels(ms.sample.labels, src.height,
                                                  src.width, factor);
            accumulate_loss_term(
                *query_net_, ms.sample.image_tensor(),
                [&, mixed_labels](const Tensor& f) {
                    Tensor g;
                    LossValue lv =
                        cfg.loss_mode == LossMode::Sparse
                            ? sparse_coding(f, mixed_labels, snap, topk_table,
                                            cfg.alpha, cfg.topk, cfg.tau, &g,
                                            cfg.topk_from_pixel)
                            : pixel_to_prototype(f, mixed_labels, snap,
                                                 cfg.tau, &g);
                    comp_sums["cutmix"] += scale * lv.value;
                    return std::make_pair(lv.value, std::move(g));
                },
                grads, loss_sum, comp_sums);
        }
        if (uses_prototypes && cfg.pixel_mix_prob > 0.0 &&
            rng.bernoulli(cfg.pixel_mix_prob)) {
            const Sample& partner = data_[rng.uniform_int(data_.size())];
            const double lambda = rng.uniform(); // Beta(1,1)
            MixedSample ms = mixup(src, partner, lambda);
            auto li = downsample_labels(ms.labels_i, src.height, src.width,
                                        factor);
            auto lj = downsample_labels(ms.labels_j, src.height, src.width,
                                        factor);
            accumulate_loss_term(
                *query_net_, ms.sample.image_tensor(),
                [&, li, lj, lambda](const Tensor& f) {
                    Tensor g;
                    LossValue lv = mixed_loss(
                        f, lambda, li, lj, snap, cfg.tau, &g,
                        cfg.loss_mode == LossMode::Sparse ? &topk_table
                                                          : nullptr,
                        cfg.alpha, cfg.topk);
                    comp_sums["mixup"] += scale * lv.value;
                    return std::make_pair(lv.value, std::move(g));
                },
                grads, loss_sum, comp_sums);
        }
    }

    rec.loss = loss_sum;
    rec.components = comp_sums;

    sgd_step(state_.query, grads, state_.velocity, rec.lr, cfg.momentum,
             cfg.weight_decay);
    momentum_update(state_.key, state_.query, cfg.key_momentum);
    ++state_.step;
    return rec;
}

RunReport Trainer::run(const std::string& report_path) {
    return run_until(state_.cfg.resolve_steps(data_.size()), report_path);
}

RunReport Trainer::run_until(size_t stop_step, const std::string& report_path) {
    const auto t_start = std::chrono::steady_clock::now();
    const TrainConfig& cfg = state_.cfg;
    const size_t total = cfg.resolve_steps(data_.size());
    const size_t stop = std::min(total, stop_step);
    RunReport report;

    std::ofstream report_file;
    if (!report_path.empty()) {
        report_file.open(report_path, state_.step > 0 ? std::ios::app
                                                      : std::ios::trunc);
        if (!report_file)
            throw DataError("cannot open report file: " + report_path);
    }

    // Probe subset for the compactness/separability trace: a fixed prefix of
    // the pool, identity views, prototypes from the subset itself.
    auto eval_quality = [&]() {
        query_net_->set_params(state_.query);
        const size_t n = std::min<size_t>(16, data_.size());
        std::vector<Tensor> feats;
        std::vector<std::vector<LabelId>> labels;
        for (size_t i = 0; i < n; ++i) {
            feats.push_back(query_net_->embed(data_[i].image_tensor()));
            labels.push_back(downsample_labels(data_[i].labels, data_[i].height,
                                               data_[i].width,
                                               cfg.encoder.stride()));
        }
        auto snap = prototypes_from_features(feats, labels, state_.num_classes);
        return embedding_quality(feats, labels, snap);
    };

    auto emit = [&](const StepRecord& rec) {
        report.records.push_back(rec);
        if (report_file) report_file << step_record_json(rec) << "\n";
    };

    while (state_.step < stop) {
        const bool want_eval =
            cfg.eval_interval > 0 && state_.step % cfg.eval_interval == 0;
        StepRecord rec = do_step();
        if (want_eval) {
            // metrics reflect the params *before* this step's update would be
            // ideal for step 0; evaluate pre-update by re-running on the
            // stored pre-step params is costly, so evaluate post-update and
            // additionally emit one init record at step 0 below.
            const EmbeddingQuality q = eval_quality();
            rec.has_eval = true;
            rec.compactness = q.compactness;
            rec.separability = q.separability;
        }
        emit(rec);
    }
    // Final eval record (step == total) capturing the trained encoder.
    if (total > 0 && state_.step == total) {
        StepRecord rec;
        rec.step = total;
        rec.lr = cosine_lr(cfg.lr0, total, total);
        const EmbeddingQuality q = eval_quality();
        rec.has_eval = true;
        rec.compactness = q.compactness;
        rec.separability = q.separability;
        if (state_.cfg.loss_mode != LossMode::Pixel)
            rec.proto_valid = current_snapshot().num_valid();
        emit(rec);
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      t_start)
            .count();
    return report;
}

} // namespace mdp
