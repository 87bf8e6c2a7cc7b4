#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "barrel/backbone.hpp"
#include "barrel/data.hpp"
#include "barrel/decoder.hpp"
#include "barrel/tensor.hpp"

namespace barrel {

// Flat key=value store. Keys carry section prefixes (model., data., train.);
// '#' starts a comment, blank lines are ignored.
class KVConfig {
public:
    static KVConfig from_file(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw config_error("cannot open config file " + path.string());
        KVConfig kv;
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw config_error(path.string() + ":" + std::to_string(lineno) +
                                   ": expected key=value");
            kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return kv;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    void apply_override(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw config_error("override must be key=value, got '" + kv + "'");
        set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    int get_int(const std::string& key, int def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            return std::stoi(it->second);
        } catch (const std::exception&) {
            throw config_error("key '" + key + "': not an integer: '" + it->second + "'");
        }
    }

    double get_double(const std::string& key, double def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            return std::stod(it->second);
        } catch (const std::exception&) {
            throw config_error("key '" + key + "': not a number: '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw config_error("key '" + key + "': not a boolean: '" + it->second + "'");
    }

    std::vector<int> get_int_list(const std::string& key, std::vector<int> def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::vector<int> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!trim(tok).empty()) out.push_back(std::stoi(trim(tok)));
        if (out.empty()) throw config_error("key '" + key + "': empty list");
        return out;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    void write(const std::filesystem::path& path) const {
        std::ofstream f(path);
        for (const auto& [k, v] : values_) f << k << "=" << v << "\n";
    }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? "" : s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

struct TrainConfig {
    int epochs = 60;
    int batch_size = 16;
    double lr = 1e-4;
    double lr_decay_factor = 10.0;
    int lr_decay_epoch = 40;
    double backbone_lr_multiplier = 0.1;
    uint64_t seed = 1;
    std::string precision = "f32";  // f32 | f64
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    bool augment = true;

    void validate() const {
        if (epochs <= 0 || batch_size <= 0) throw config_error("epochs/batch_size must be positive");
        if (lr < 0 || lr_decay_factor <= 0 || backbone_lr_multiplier <= 0)
            throw config_error("lr must be >= 0; decay factor and multiplier must be positive");
        if (lr_decay_epoch >= epochs)
            throw config_error("lr_decay_epoch " + std::to_string(lr_decay_epoch) +
                               " must be < epochs " + std::to_string(epochs));
        if (precision != "f32" && precision != "f64")
            throw config_error("precision must be f32 or f64, got '" + precision + "'");
    }
};

struct ModelConfig {
    BackboneConfig backbone;
    HeadConfig head;
    int image_size = 64;

    void validate() const {
        head.validate();
        if (backbone.out_dim != head.hidden_dim)
            throw config_error("backbone out_dim must equal head hidden_dim");
        if (image_size % backbone.stride != 0)
            throw config_error("image_size " + std::to_string(image_size) +
                               " not divisible by stride " + std::to_string(backbone.stride));
    }

    int memory_side() const { return image_size / backbone.stride; }
    int memory_size() const { return memory_side() * memory_side(); }
};

struct RunConfig {
    DatasetConfig data;
    ModelConfig model;
    TrainConfig train;
    AugmentConfig aug;
};

inline RunConfig parse_run_config(const KVConfig& kv) {
    RunConfig rc;
    rc.data.num_landmarks = kv.get_int("data.num_landmarks", rc.data.num_landmarks);
    rc.data.image_size = kv.get_int("data.image_size", rc.data.image_size);
    rc.data.channels = kv.get_int("data.channels", rc.data.channels);
    rc.data.train_count = kv.get_int("data.train_count", rc.data.train_count);
    rc.data.test_count = kv.get_int("data.test_count", rc.data.test_count);
    const LandmarkLayout layout = LandmarkLayout::for_count(rc.data.num_landmarks);
    rc.data.eye_left = kv.get_int("data.eye_left", layout.left_eye);
    rc.data.eye_right = kv.get_int("data.eye_right", layout.right_eye);
    rc.data.center_jitter = kv.get_double("data.center_jitter", rc.data.center_jitter);
    rc.data.scale_jitter = kv.get_double("data.scale_jitter", rc.data.scale_jitter);
    rc.data.noise_level = kv.get_double("data.noise_level", rc.data.noise_level);
    rc.data.validate();

    rc.aug.p_translate = kv.get_double("data.aug_translate", rc.aug.p_translate);
    rc.aug.max_translate = kv.get_double("data.aug_max_translate", rc.aug.max_translate);
    rc.aug.p_flip = kv.get_double("data.aug_flip", rc.aug.p_flip);
    rc.aug.p_rotate = kv.get_double("data.aug_rotate", rc.aug.p_rotate);
    rc.aug.max_rotate_deg = kv.get_double("data.aug_max_rotate_deg", rc.aug.max_rotate_deg);
    rc.aug.p_occlude = kv.get_double("data.aug_occlude", rc.aug.p_occlude);
    rc.aug.p_blur = kv.get_double("data.aug_blur", rc.aug.p_blur);
    if (rc.aug.p_flip > 0) rc.aug.flip_table = default_flip_table(rc.data.num_landmarks);

    rc.model.image_size = rc.data.image_size;
    rc.model.head.num_landmarks = rc.data.num_landmarks;
    rc.model.head.hidden_dim = kv.get_int("model.hidden_dim", rc.model.head.hidden_dim);
    rc.model.head.num_heads = kv.get_int("model.num_heads", rc.model.head.num_heads);
    rc.model.head.num_decoder_layers =
        kv.get_int("model.num_decoder_layers", rc.model.head.num_decoder_layers);
    rc.model.head.ffn_dim = kv.get_int("model.ffn_dim", 4 * rc.model.head.hidden_dim);
    rc.model.head.use_dqinit = kv.get_bool("model.use_dqinit", rc.model.head.use_dqinit);
    rc.model.head.use_qamem = kv.get_bool("model.use_qamem", rc.model.head.use_qamem);
    rc.model.backbone.in_channels = rc.data.channels;
    rc.model.backbone.stride = kv.get_int("model.stride", rc.model.backbone.stride);
    {
        int stages = 0;
        for (int s = rc.model.backbone.stride; s > 1 && s % 2 == 0; s /= 2) ++stages;
        std::vector<int> def;
        int c = 8;
        for (int i = 0; i < stages; ++i) {
            def.push_back(std::min(c, 64));
            c *= 2;
        }
        rc.model.backbone.stage_channels = kv.get_int_list("model.stage_channels", def);
    }
    rc.model.backbone.out_dim = rc.model.head.hidden_dim;
    rc.model.validate();

    rc.train.epochs = kv.get_int("train.epochs", rc.train.epochs);
    rc.train.batch_size = kv.get_int("train.batch_size", rc.train.batch_size);
    rc.train.lr = kv.get_double("train.lr", rc.train.lr);
    rc.train.lr_decay_factor = kv.get_double("train.lr_decay_factor", rc.train.lr_decay_factor);
    rc.train.lr_decay_epoch =
        kv.get_int("train.lr_decay_epoch", rc.train.epochs * 2 / 3);
    rc.train.backbone_lr_multiplier =
        kv.get_double("train.backbone_lr_multiplier", rc.train.backbone_lr_multiplier);
    rc.train.seed = static_cast<uint64_t>(kv.get_int("train.seed", static_cast<int>(rc.train.seed)));
    rc.train.precision = kv.get_str("train.precision", rc.train.precision);
    rc.train.adam_beta1 = kv.get_double("train.adam_beta1", rc.train.adam_beta1);
    rc.train.adam_beta2 = kv.get_double("train.adam_beta2", rc.train.adam_beta2);
    rc.train.adam_eps = kv.get_double("train.adam_eps", rc.train.adam_eps);
    rc.train.augment = kv.get_bool("train.augment", rc.train.augment);
    rc.train.validate();
    return rc;
}

inline KVConfig run_config_to_kv(const RunConfig& rc) {
    KVConfig kv;
    auto seti = [&](const std::string& k, long v) { kv.set(k, std::to_string(v)); };
    auto setd = [&](const std::string& k, double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        kv.set(k, os.str());
    };
    seti("data.num_landmarks", rc.data.num_landmarks);
    seti("data.image_size", rc.data.image_size);
    seti("data.channels", rc.data.channels);
    seti("data.train_count", rc.data.train_count);
    seti("data.test_count", rc.data.test_count);
    seti("data.eye_left", rc.data.eye_left);
    seti("data.eye_right", rc.data.eye_right);
    setd("data.center_jitter", rc.data.center_jitter);
    setd("data.scale_jitter", rc.data.scale_jitter);
    setd("data.noise_level", rc.data.noise_level);
    setd("data.aug_translate", rc.aug.p_translate);
    setd("data.aug_max_translate", rc.aug.max_translate);
    setd("data.aug_flip", rc.aug.p_flip);
    setd("data.aug_rotate", rc.aug.p_rotate);
    setd("data.aug_max_rotate_deg", rc.aug.max_rotate_deg);
    setd("data.aug_occlude", rc.aug.p_occlude);
    setd("data.aug_blur", rc.aug.p_blur);
    seti("model.hidden_dim", rc.model.head.hidden_dim);
    seti("model.num_heads", rc.model.head.num_heads);
    seti("model.num_decoder_layers", rc.model.head.num_decoder_layers);
    seti("model.ffn_dim", rc.model.head.ffn_dim);
    kv.set("model.use_dqinit", rc.model.head.use_dqinit ? "true" : "false");
    kv.set("model.use_qamem", rc.model.head.use_qamem ? "true" : "false");
    seti("model.stride", rc.model.backbone.stride);
    {
        std::ostringstream os;
        for (size_t i = 0; i < rc.model.backbone.stage_channels.size(); ++i) {
            if (i) os << ',';
            os << rc.model.backbone.stage_channels[i];
        }
        kv.set("model.stage_channels", os.str());
    }
    seti("train.epochs", rc.train.epochs);
    seti("train.batch_size", rc.train.batch_size);
    setd("train.lr", rc.train.lr);
    setd("train.lr_decay_factor", rc.train.lr_decay_factor);
    seti("train.lr_decay_epoch", rc.train.lr_decay_epoch);
    setd("train.backbone_lr_multiplier", rc.train.backbone_lr_multiplier);
    seti("train.seed", static_cast<long>(rc.train.seed));
    kv.set("train.precision", rc.train.precision);
    setd("train.adam_beta1", rc.train.adam_beta1);
    setd("train.adam_beta2", rc.train.adam_beta2);
    setd("train.adam_eps", rc.train.adam_eps);
    kv.set("train.augment", rc.train.augment ? "true" : "false");
    return kv;
}

}  // namespace barrel
