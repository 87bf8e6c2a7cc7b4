#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "barrel/nn.hpp"
#include "barrel/tensor.hpp"

namespace barrel {

// Adam with parameter groups; each group scales the base learning rate by a
// fixed multiplier (the backbone trains at 0.1x the head rate). Moments are
// kept in double regardless of the parameter precision.
template <typename T>
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void add_group(const ParamList<T>& params, double lr_scale) {
        for (const NamedParam<T>& p : params) {
            Slot s;
            s.node = p.tensor.node();
            s.m.assign(p.tensor.size(), 0.0);
            s.v.assign(p.tensor.size(), 0.0);
            s.lr_scale = lr_scale;
            slots_.push_back(std::move(s));
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    // Missing grad buffers count as zero gradient; moments still decay.
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (Slot& s : slots_) {
            const bool has_grad = !s.node->grad.empty();
            for (size_t i = 0; i < s.m.size(); ++i) {
                const double g = has_grad ? static_cast<double>(s.node->grad[i]) : 0.0;
                s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
                s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
                const double mhat = s.m[i] / bc1;
                const double vhat = s.v[i] / bc2;
                s.node->data[i] = static_cast<T>(
                    static_cast<double>(s.node->data[i]) -
                    lr_ * s.lr_scale * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    void zero_grad() {
        for (Slot& s : slots_) s.node->grad.clear();
    }

    int steps_taken() const { return t_; }

private:
    struct Slot {
        std::shared_ptr<TensorNode<T>> node;
        std::vector<double> m, v;
        double lr_scale = 1.0;
    };
    std::vector<Slot> slots_;
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
};

}  // namespace barrel
