#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "barrel/ops.hpp"
#include "barrel/rng.hpp"
#include "barrel/tensor.hpp"

namespace barrel {

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
inline void fill_uniform(Tensor<T>& t, T lo, T hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(static_cast<double>(lo), static_cast<double>(hi));
    for (T& v : t.data()) v = static_cast<T>(u(rng));
}

// He-uniform: bound = sqrt(6 / fan_in).
template <typename T>
inline void init_he_uniform(Tensor<T>& t, int fan_in, std::mt19937_64& rng) {
    const T b = static_cast<T>(std::sqrt(6.0 / fan_in));
    fill_uniform(t, -b, b, rng);
}

template <typename T>
inline void init_fan_in_uniform(Tensor<T>& t, int fan_in, std::mt19937_64& rng) {
    const T b = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
    fill_uniform(t, -b, b, rng);
}

// Affine map parameters, y = x . weight + bias with weight [in x out].
template <typename T>
struct LinearLayer {
    Tensor<T> weight;
    Tensor<T> bias;

    LinearLayer() = default;
    LinearLayer(int in_dim, int out_dim, std::mt19937_64& rng)
        : weight({in_dim, out_dim}), bias({out_dim}) {
        init_fan_in_uniform(weight, in_dim, rng);
        init_fan_in_uniform(bias, in_dim, rng);
        weight.set_requires_grad(true);
        bias.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }

    long param_count() const { return static_cast<long>(weight.size() + bias.size()); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename T>
struct LayerNormLayer {
    Tensor<T> gamma;
    Tensor<T> beta;

    LayerNormLayer() = default;
    explicit LayerNormLayer(int dim) : gamma({dim}, T(1), true), beta({dim}, T(0), true) {}

    Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

    long param_count() const { return static_cast<long>(gamma.size() + beta.size()); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

}  // namespace barrel
