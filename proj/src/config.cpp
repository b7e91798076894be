#include "mdp/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mdp/errors.hpp"
#include "mdp/rng.hpp"

namespace mdp {

const char* to_string(LossMode m) {
    switch (m) {
        case LossMode::Pixel: return "pixel";
        case LossMode::Prototype: return "proto";
        case LossMode::Sparse: return "sparse";
    }
    return "?";
}

const char* to_string(BankType b) {
    return b == BankType::Class ? "class" : "region";
}

LossMode loss_mode_from(const std::string& s) {
    if (s == "pixel") return LossMode::Pixel;
    if (s == "proto") return LossMode::Prototype;
    if (s == "sparse") return LossMode::Sparse;
    throw ConfigError("unknown loss mode '" + s + "' (pixel|proto|sparse)");
}

BankType bank_type_from(const std::string& s) {
    if (s == "class") return BankType::Class;
    if (s == "region") return BankType::Region;
    throw ConfigError("unknown bank type '" + s + "' (class|region)");
}

void TrainConfig::validate() const {
    if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
    if (momentum < 0.0 || momentum >= 1.0)
        throw ConfigError("momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (tau <= 0.0) throw ConfigError("tau must be positive");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must be in [0,1]");
    if (topk == 0) throw ConfigError("topk must be >= 1");
    if (key_momentum < 0.0 || key_momentum >= 1.0)
        throw ConfigError("key_momentum must be in [0,1)");
    if (region_mix_prob < 0.0 || region_mix_prob > 1.0 ||
        pixel_mix_prob < 0.0 || pixel_mix_prob > 1.0)
        throw ConfigError("mix probabilities must be in [0,1]");
    if (bank_slots == 0) throw ConfigError("bank.slots must be >= 1");
    if (sample_cap == 0) throw ConfigError("sample_cap must be >= 1");
    if (encoder.embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
}

size_t TrainConfig::resolve_steps(size_t dataset_size) const {
    if (epochs == 0) return steps;
    const size_t per_epoch = (dataset_size + batch_size - 1) / batch_size;
    return epochs * per_epoch;
}

namespace {

double parse_double(const std::string& v, const std::string& where) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected a number, got '" + v + "'");
    }
}

uint64_t parse_uint(const std::string& v, const std::string& where) {
    try {
        size_t pos = 0;
        const unsigned long long u = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected a non-negative integer, got '" +
                          v + "'");
    }
}

bool parse_bool(const std::string& v, const std::string& where) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(where + ": expected true/false, got '" + v + "'");
}

} // namespace

void apply_config_key(TrainConfig& cfg, const std::string& key,
                      const std::string& value, const std::string& where) {
    if (key == "lr0") cfg.lr0 = parse_double(value, where);
    else if (key == "momentum") cfg.momentum = parse_double(value, where);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(value, where);
    else if (key == "batch_size") cfg.batch_size = parse_uint(value, where);
    else if (key == "steps") cfg.steps = parse_uint(value, where);
    else if (key == "epochs") cfg.epochs = parse_uint(value, where);
    else if (key == "tau") cfg.tau = parse_double(value, where);
    else if (key == "alpha") cfg.alpha = parse_double(value, where);
    else if (key == "topk") cfg.topk = parse_uint(value, where);
    else if (key == "key_momentum") cfg.key_momentum = parse_double(value, where);
    else if (key == "mix.region_prob") cfg.region_mix_prob = parse_double(value, where);
    else if (key == "mix.pixel_prob") cfg.pixel_mix_prob = parse_double(value, where);
    else if (key == "loss_mode") cfg.loss_mode = loss_mode_from(value);
    else if (key == "bank.type") cfg.bank_type = bank_type_from(value);
    else if (key == "bank.slots") cfg.bank_slots = parse_uint(value, where);
    else if (key == "sample_cap") cfg.sample_cap = parse_uint(value, where);
    else if (key == "topk_from_pixel") cfg.topk_from_pixel = parse_bool(value, where);
    else if (key == "seed") cfg.seed = parse_uint(value, where);
    else if (key == "eval_interval") cfg.eval_interval = parse_uint(value, where);
    else if (key == "encoder.embed_dim") cfg.encoder.embed_dim = parse_uint(value, where);
    else if (key == "encoder.head_hidden") cfg.encoder.head_hidden = parse_uint(value, where);
    else if (key == "encoder.channels") {
        std::vector<size_t> ch;
        std::stringstream ss(value);
        std::string tok;
        while (std::getline(ss, tok, ','))
            ch.push_back(parse_uint(tok, where));
        if (ch.empty()) throw ConfigError(where + ": empty channel list");
        cfg.encoder.conv_channels = ch;
    }
    else if (key == "aug.crop_scale_min") cfg.aug.crop_scale_min = parse_double(value, where);
    else if (key == "aug.crop_scale_max") cfg.aug.crop_scale_max = parse_double(value, where);
    else if (key == "aug.hflip_prob") cfg.aug.hflip_prob = parse_double(value, where);
    else if (key == "aug.jitter") cfg.aug.jitter = parse_double(value, where);
    else if (key == "aug.noise_sigma") cfg.aug.noise_sigma = parse_double(value, where);
    else
        throw ConfigError(where + ": unknown key '" + key + "'");
}

TrainConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    TrainConfig cfg;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        const size_t b = line.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        const size_t e = line.find_last_not_of(" \t");
        line = line.substr(b, e - b + 1);
        const size_t eq = line.find('=');
        const std::string where = path + ":" + std::to_string(lineno);
        if (eq == std::string::npos)
            throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
        auto trim = [](std::string s) {
            const size_t b2 = s.find_first_not_of(" \t");
            if (b2 == std::string::npos) return std::string();
            const size_t e2 = s.find_last_not_of(" \t");
            return s.substr(b2, e2 - b2 + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(where + ": empty key or value");
        apply_config_key(cfg, key, value, where);
    }
    cfg.validate();
    return cfg;
}

std::string config_to_string(const TrainConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "lr0 = " << cfg.lr0 << "\n";
    os << "momentum = " << cfg.momentum << "\n";
    os << "weight_decay = " << cfg.weight_decay << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "steps = " << cfg.steps << "\n";
    os << "epochs = " << cfg.epochs << "\n";
    os << "tau = " << cfg.tau << "\n";
    os << "alpha = " << cfg.alpha << "\n";
    os << "topk = " << cfg.topk << "\n";
    os << "key_momentum = " << cfg.key_momentum << "\n";
    os << "mix.region_prob = " << cfg.region_mix_prob << "\n";
    os << "mix.pixel_prob = " << cfg.pixel_mix_prob << "\n";
    os << "loss_mode = " << to_string(cfg.loss_mode) << "\n";
    os << "bank.type = " << to_string(cfg.bank_type) << "\n";
    os << "bank.slots = " << cfg.bank_slots << "\n";
    os << "sample_cap = " << cfg.sample_cap << "\n";
    os << "topk_from_pixel = " << (cfg.topk_from_pixel ? "true" : "false") << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "eval_interval = " << cfg.eval_interval << "\n";
    os << "encoder.embed_dim = " << cfg.encoder.embed_dim << "\n";
    os << "encoder.head_hidden = " << cfg.encoder.head_hidden << "\n";
    os << "encoder.channels = ";
    for (size_t i = 0; i < cfg.encoder.conv_channels.size(); ++i)
        os << (i ? "," : "") << cfg.encoder.conv_channels[i];
    os << "\n";
    os << "aug.crop_scale_min = " << cfg.aug.crop_scale_min << "\n";
    os << "aug.crop_scale_max = " << cfg.aug.crop_scale_max << "\n";
    os << "aug.hflip_prob = " << cfg.aug.hflip_prob << "\n";
    os << "aug.jitter = " << cfg.aug.jitter << "\n";
    os << "aug.noise_sigma = " << cfg.aug.noise_sigma << "\n";
    return os.str();
}

uint64_t config_hash(const TrainConfig& cfg) {
    return hash_name(config_to_string(cfg));
}

} // namespace mdp
