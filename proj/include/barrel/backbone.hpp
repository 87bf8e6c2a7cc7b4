#pragma once

#include <string>
#include <vector>

#include "barrel/nn.hpp"
#include "barrel/ops.hpp"

namespace barrel {

struct BackboneConfig {
    int in_channels = 1;
    std::vector<int> stage_channels = {8, 16, 32, 64, 64};
    int stride = 32;          // one of {4, 8, 16, 32}
    int out_dim = 64;         // must equal the decoder hidden dimension
};

// Backbone output: a d x h x w feature grid. Flattening maps grid position
// (y, x) to row y*w + x; the learned memory positional encodings use the
// same index order.
template <typename T>
struct Memory {
    Tensor<T> features;  // [d x h x w]
    int h = 0, w = 0;

    Tensor<T> flat() const {
        const int d = features.extent(0);
        return transpose(reshape(features, {d, h * w}));  // [S x d]
    }
};

// Small conv feature extractor: log2(stride) stages of
// conv(3x3, stride 2, pad 1) -> layer norm over channels -> relu,
// then a 1x1 projection to out_dim.
template <typename T>
class Backbone {
public:
    Backbone() = default;

    Backbone(const BackboneConfig& cfg, uint64_t seed) : cfg_(cfg) {
        int stages = 0;
        for (int s = cfg.stride; s > 1; s /= 2) {
            if (s % 2 != 0) break;
            ++stages;
        }
        if ((1 << stages) != cfg.stride || cfg.stride < 4 || cfg.stride > 32)
            throw config_error("backbone stride must be a power of two in {4..32}, got " +
                               std::to_string(cfg.stride));
        if (static_cast<int>(cfg.stage_channels.size()) != stages)
            throw config_error("backbone needs " + std::to_string(stages) +
                               " stage channels for stride " + std::to_string(cfg.stride) +
                               ", got " + std::to_string(cfg.stage_channels.size()));
        auto rng = make_rng(seed);
        int c_prev = cfg.in_channels;
        for (int c : cfg.stage_channels) {
            Stage st;
            st.kernel = Tensor<T>({c, c_prev, 3, 3});
            init_he_uniform(st.kernel, c_prev * 9, rng);
            st.kernel.set_requires_grad(true);
            st.bias = Tensor<T>({c}, T(0), true);
            st.norm = LayerNormLayer<T>(c);
            stages_.push_back(std::move(st));
            c_prev = c;
        }
        proj_kernel_ = Tensor<T>({cfg.out_dim, c_prev, 1, 1});
        init_he_uniform(proj_kernel_, c_prev, rng);
        proj_kernel_.set_requires_grad(true);
        proj_bias_ = Tensor<T>({cfg.out_dim}, T(0), true);
    }

    const BackboneConfig& config() const { return cfg_; }

    Memory<T> forward(const Tensor<T>& image) const {
        if (image.shape().size() != 3 || image.extent(0) != cfg_.in_channels)
            throw dim_error("backbone: expected image [" + std::to_string(cfg_.in_channels) +
                            " x H x W], got " + shape_str(image.shape()));
        if (image.extent(1) % cfg_.stride != 0 || image.extent(2) % cfg_.stride != 0)
            throw dim_error("backbone: input " + shape_str(image.shape()) +
                            " not divisible by stride " + std::to_string(cfg_.stride));
        Tensor<T> x = image;
        for (const Stage& st : stages_) {
            x = conv2d(x, st.kernel, st.bias, 2, 1, 1);
            x = channel_norm(x, st.norm);
            x = relu(x);
        }
        x = conv2d(x, proj_kernel_, proj_bias_, 1, 0, 1);
        Memory<T> mem;
        mem.features = x;
        mem.h = x.extent(1);
        mem.w = x.extent(2);
        return mem;
    }

    // stages: 9*c_in*c_out + c_out bias + 2*c_out norm; projection: c*d + d.
    long param_count() const {
        long n = 0;
        int c_prev = cfg_.in_channels;
        for (int c : cfg_.stage_channels) {
            n += 9L * c_prev * c + 3L * c;
            c_prev = c;
        }
        n += static_cast<long>(c_prev) * cfg_.out_dim + cfg_.out_dim;
        return n;
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        for (size_t i = 0; i < stages_.size(); ++i) {
            const std::string p = prefix + ".stage" + std::to_string(i);
            out.push_back({p + ".kernel", stages_[i].kernel});
            out.push_back({p + ".bias", stages_[i].bias});
            stages_[i].norm.collect(p + ".norm", out);
        }
        out.push_back({prefix + ".proj.kernel", proj_kernel_});
        out.push_back({prefix + ".proj.bias", proj_bias_});
    }

private:
    struct Stage {
        Tensor<T> kernel;  // [c_out x c_in x 3 x 3]
        Tensor<T> bias;
        LayerNormLayer<T> norm;
    };

    // Layer norm over the channel axis at each spatial position.
    static Tensor<T> channel_norm(const Tensor<T>& x, const LayerNormLayer<T>& norm) {
        const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
        Tensor<T> rows = transpose(reshape(x, {c, h * w}));  // [hw x c]
        rows = norm.forward(rows);
        return reshape(transpose(rows), {c, h, w});
    }

    BackboneConfig cfg_;
    std::vector<Stage> stages_;
    Tensor<T> proj_kernel_;  // [out_dim x c_last x 1 x 1]
    Tensor<T> proj_bias_;
};

}  // namespace barrel
