#pragma once

#include <filesystem>
#include <fstream>

#include "barrel/backbone.hpp"
#include "barrel/config.hpp"
#include "barrel/decoder.hpp"
#include "barrel/dqinit.hpp"
#include "barrel/qamem.hpp"

namespace barrel {

// Backbone + optional DQInit + detection head, wired per the config. The
// memory flows straight from the backbone into the decoder (no encoder).
template <typename T>
class Model {
public:
    Model() = default;

    Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        backbone_ = Backbone<T>(cfg.backbone, derive_seed(seed, 10, 0));
        head_ = DetectionHead<T>(cfg.head, cfg.memory_size(), derive_seed(seed, 11, 0));
        if (cfg.head.use_dqinit) {
            auto rng = make_rng(derive_seed(seed, 12, 0));
            dqinit_ = DQInitParams<T>(cfg.head.num_landmarks, cfg.head.hidden_dim, rng);
        }
    }

    struct Output {
        Tensor<T> landmarks;      // [N x 2] in [0,1]^2
        Tensor<T> embeddings;     // [N x d]
        Tensor<T> cross_weights;  // [N x S]
    };

    Output forward(const Tensor<T>& image,
                   QAMemVariant variant = QAMemVariant::kEfficient) const {
        Memory<T> mem = backbone_.forward(image);
        Tensor<T> q_init = cfg_.head.use_dqinit
                               ? init_queries(dqinit_, mem)
                               : Tensor<T>({cfg_.head.num_landmarks, cfg_.head.hidden_dim});
        DecodeResult<T> dec = head_.decode(mem, q_init, variant);
        Output out;
        out.embeddings = dec.embeddings;
        out.cross_weights = dec.cross_weights;
        out.landmarks = head_.predict_landmarks(dec.embeddings);
        return out;
    }

    const ModelConfig& config() const { return cfg_; }
    const Backbone<T>& backbone() const { return backbone_; }
    const DetectionHead<T>& head() const { return head_; }
    DetectionHead<T>& mutable_head() { return head_; }
    const DQInitParams<T>& dqinit() const { return dqinit_; }

    ParamList<T> backbone_params() const {
        ParamList<T> out;
        backbone_.collect("backbone", out);
        return out;
    }

    ParamList<T> head_params() const {
        ParamList<T> out;
        if (cfg_.head.use_dqinit) dqinit_.collect("dqinit", out);
        head_.collect("head", out);
        return out;
    }

    ParamList<T> all_params() const {
        ParamList<T> out = backbone_params();
        ParamList<T> head = head_params();
        out.insert(out.end(), head.begin(), head.end());
        return out;
    }

    long param_count() const {
        long n = backbone_.param_count() + head_.param_count();
        if (cfg_.head.use_dqinit) n += dqinit_.param_count();
        return n;
    }

private:
    ModelConfig cfg_;
    Backbone<T> backbone_;
    DQInitParams<T> dqinit_;
    DetectionHead<T> head_;
};

// ---------------------------------------------------------------------------
// Checkpoint: a directory with manifest.txt (configs + metadata) and one
// float32 little-endian blob per named parameter tensor.

namespace detail {
inline std::string blob_filename(const std::string& param_name) {
    std::string s = param_name;
    for (char& c : s)
        if (c == '/' || c == ' ') c = '_';
    return s + ".bin";
}
}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Model<T>& model,
                     const RunConfig& run_cfg, int epoch, double best_nme_percent) {
    std::filesystem::create_directories(dir);
    KVConfig manifest = run_config_to_kv(run_cfg);
    manifest.set("checkpoint.epoch", std::to_string(epoch));
    {
        std::ostringstream os;
        os.precision(17);
        os << best_nme_percent;
        manifest.set("checkpoint.best_nme_percent", os.str());
    }
    manifest.set("checkpoint.param_count", std::to_string(model.param_count()));
    manifest.write(dir / "manifest.txt");
    for (const NamedParam<T>& p : model.all_params()) {
        std::ofstream f(dir / detail::blob_filename(p.name), std::ios::binary);
        if constexpr (std::is_same_v<T, float>) {
            f.write(reinterpret_cast<const char*>(p.tensor.data().data()),
                    static_cast<std::streamsize>(p.tensor.size() * sizeof(float)));
        } else {
            std::vector<float> buf(p.tensor.size());
            for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p.tensor.data()[i]);
            f.write(reinterpret_cast<const char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * sizeof(float)));
        }
    }
}

inline KVConfig load_checkpoint_manifest(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "manifest.txt"))
        throw config_error("checkpoint manifest not found in " + dir.string());
    return KVConfig::from_file(dir / "manifest.txt");
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& dir, const RunConfig& run_cfg) {
    Model<T> model(run_cfg.model, /*seed=*/0);
    for (NamedParam<T> p : model.all_params()) {  // tensors share storage with the model
        const auto path = dir / detail::blob_filename(p.name);
        std::ifstream f(path, std::ios::binary);
        if (!f) throw config_error("checkpoint blob missing: " + path.string());
        std::vector<float> buf(p.tensor.size());
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!f || f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
            throw config_error("checkpoint blob truncated: " + path.string());
        for (size_t i = 0; i < buf.size(); ++i) p.tensor.data()[i] = static_cast<T>(buf[i]);
    }
    return model;
}

}  // namespace barrel
