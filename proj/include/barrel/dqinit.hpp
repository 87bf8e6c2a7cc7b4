#pragma once

#include <string>

#include "barrel/backbone.hpp"
#include "barrel/nn.hpp"
#include "barrel/ops.hpp"

namespace barrel {

// Dynamic query initialization: queries start from a pooled summary of the
// memory instead of zeros. One global average pool and one fully connected
// layer mapping the pooled d-vector to N*d, reshaped row-major by landmark.
template <typename T>
struct DQInitParams {
    int num_queries = 0;
    int dim = 0;
    Tensor<T> fc_weight;  // [(N*d) x d]
    Tensor<T> fc_bias;    // [N*d]

    DQInitParams() = default;

    // Weights uniform(+-1/sqrt(d)), bias zero: the initial queries stay close
    // to the zero-initialized baseline.
    DQInitParams(int n, int d, std::mt19937_64& rng)
        : num_queries(n), dim(d), fc_weight({n * d, d}), fc_bias({n * d}, T(0), true) {
        init_fan_in_uniform(fc_weight, d, rng);
        fc_weight.set_requires_grad(true);
    }

    long param_count() const {
        return static_cast<long>(num_queries) * dim * dim + static_cast<long>(num_queries) * dim;
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".fc_weight", fc_weight});
        out.push_back({prefix + ".fc_bias", fc_bias});
    }
};

template <typename T>
Tensor<T> init_queries(const DQInitParams<T>& params, const Memory<T>& memory) {
    if (memory.features.extent(0) != params.dim)
        throw dim_error("init_queries: memory channel dim " +
                        std::to_string(memory.features.extent(0)) + " != params dim " +
                        std::to_string(params.dim));
    Tensor<T> pooled = global_avg_pool(memory.features);                    // [d]
    Tensor<T> pooled_row = reshape(pooled, {1, params.dim});                // [1 x d]
    Tensor<T> flat = linear(pooled_row, transpose(params.fc_weight), params.fc_bias);
    return reshape(flat, {params.num_queries, params.dim});
}

}  // namespace barrel
