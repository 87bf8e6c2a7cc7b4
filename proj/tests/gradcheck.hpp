#pragma once

#include <functional>
#include <random>
#include <vector>

#include "barrel/rng.hpp"
#include "barrel/tensor.hpp"

namespace barrel::testing {

// Central finite-difference gradient check. `loss_fn` rebuilds the scalar
// loss from the current leaf values; the analytic path runs once under a
// tape, then every leaf element is perturbed by +-eps. Returns the largest
// relative error max|analytic - numeric| / max(|analytic|, |numeric|, 1).
inline double gradcheck(const std::function<Tensor<double>()>& loss_fn,
                        std::vector<Tensor<double>> leaves, double eps = 1e-5) {
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        Tensor<double> loss = loss_fn();
        tape.backward(loss);
    }
    for (auto& l : leaves) analytic.push_back(l.has_grad() ? l.grad() : std::vector<double>(l.size(), 0.0));

    double worst = 0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& l = leaves[li];
        for (size_t i = 0; i < l.size(); ++i) {
            const double orig = l.data()[i];
            l.data()[i] = orig + eps;
            const double up = loss_fn().item();
            l.data()[i] = orig - eps;
            const double dn = loss_fn().item();
            l.data()[i] = orig;
            const double numeric = (up - dn) / (2 * eps);
            const double a = analytic[li][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    for (auto& l : leaves) l.zero_grad();
    return worst;
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.data()) v = u(rng);
    return t;
}

}  // namespace barrel::testing
