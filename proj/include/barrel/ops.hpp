#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "barrel/rng.hpp"
#include "barrel/tensor.hpp"

namespace barrel {

template <typename T>
inline void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw dim_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    bool tracked = tracking<T>({&a, &b});
    auto an = a.node(), bn = b.node(), on = out.node();
    finish_op("add", out, tracked, [an, bn, on] {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            auto& g = grad_buf(an);
            for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            auto& g = grad_buf(bn);
            for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("sub", a, b);
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    bool tracked = tracking<T>({&a, &b});
    auto an = a.node(), bn = b.node(), on = out.node();
    finish_op("sub", out, tracked, [an, bn, on] {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            auto& g = grad_buf(an);
            for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            auto& g = grad_buf(bn);
            for (size_t i = 0; i < g.size(); ++i) g[i] -= on->grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mul", a, b);
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    bool tracked = tracking<T>({&a, &b});
    auto an = a.node(), bn = b.node(), on = out.node();
    finish_op("mul", out, tracked, [an, bn, on] {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            auto& g = grad_buf(an);
            for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& g = grad_buf(bn);
            for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * an->data[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * c;
    bool tracked = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    finish_op("scale", out, tracked, [an, on, c] {
        if (on->grad.empty() || !an->requires_grad) return;
        auto& g = grad_buf(an);
        for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * c;
    });
    return out;
}

// x: [m x n], bias: [n], broadcast over rows. The only broadcast in the library.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.shape().size() != 2 || bias.shape().size() != 1 || x.extent(1) != bias.extent(0))
        throw dim_error("add_bias: " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
    const int m = x.extent(0), n = x.extent(1);
    Tensor<T> out(x.shape());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + bias.at(j);
    bool tracked = tracking<T>({&x, &bias});
    auto xn = x.node(), bn = bias.node(), on = out.node();
    finish_op("add_bias", out, tracked, [xn, bn, on, m, n] {
        if (on->grad.empty()) return;
        if (xn->requires_grad) {
            auto& g = grad_buf(xn);
            for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            auto& g = grad_buf(bn);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) g[j] += on->grad[static_cast<size_t>(i) * n + j];
        }
    });
    return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.extent(1) != b.extent(0))
        throw dim_error("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
    const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i) {
        const T* arow = a.data().data() + static_cast<size_t>(i) * k;
        T* orow = out.data().data() + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b.data().data() + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    bool tracked = tracking<T>({&a, &b});
    auto an = a.node(), bn = b.node(), on = out.node();
    finish_op("matmul", out, tracked, [an, bn, on, m, k, n] {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            auto& ga = grad_buf(an);  // dL/da = dL/dout . b^T
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    T acc = 0;
                    const T* og = on->grad.data() + static_cast<size_t>(i) * n;
                    const T* brow = bn->data.data() + static_cast<size_t>(p) * n;
                    for (int j = 0; j < n; ++j) acc += og[j] * brow[j];
                    ga[static_cast<size_t>(i) * k + p] += acc;
                }
        }
        if (bn->requires_grad) {
            auto& gb = grad_buf(bn);  // dL/db = a^T . dL/dout
            for (int p = 0; p < k; ++p)
                for (int i = 0; i < m; ++i) {
                    const T av = an->data[static_cast<size_t>(i) * k + p];
                    const T* og = on->grad.data() + static_cast<size_t>(i) * n;
                    T* grow = gb.data() + static_cast<size_t>(p) * n;
                    for (int j = 0; j < n; ++j) grow[j] += av * og[j];
                }
        }
    });
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.shape().size() != 2) throw dim_error("transpose: need 2-D, got " + shape_str(x.shape()));
    const int m = x.extent(0), n = x.extent(1);
    Tensor<T> out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
    bool tracked = tracking<T>({&x});
    auto xn = x.node(), on = out.node();
    finish_op("transpose", out, tracked, [xn, on, m, n] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& g = grad_buf(xn);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                g[static_cast<size_t>(i) * n + j] += on->grad[static_cast<size_t>(j) * m + i];
    });
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != static_cast<long>(x.size()))
        throw dim_error("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                        " changes element count");
    Tensor<T> out(std::move(shape), x.data());
    bool tracked = tracking<T>({&x});
    auto xn = x.node(), on = out.node();
    finish_op("reshape", out, tracked, [xn, on] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& g = grad_buf(xn);
        for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
    });
    return out;
}

// Column slice of a 2-D tensor: out = x[:, offset : offset+len].
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int offset, int len) {
    if (x.shape().size() != 2) throw dim_error("slice_cols: need 2-D");
    const int m = x.extent(0), n = x.extent(1);
    if (offset < 0 || len <= 0 || offset + len > n)
        throw dim_error("slice_cols: [" + std::to_string(offset) + ", " +
                        std::to_string(offset + len) + ") outside " + shape_str(x.shape()));
    Tensor<T> out({m, len});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j) out.at(i, j) = x.at(i, offset + j);
    bool tracked = tracking<T>({&x});
    auto xn = x.node(), on = out.node();
    finish_op("slice_cols", out, tracked, [xn, on, m, n, offset, len] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& g = grad_buf(xn);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < len; ++j)
                g[static_cast<size_t>(i) * n + offset + j] +=
                    on->grad[static_cast<size_t>(i) * len + j];
    });
    return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int offset, int len) {
    if (x.shape().size() != 2) throw dim_error("slice_rows: need 2-D");
    const int m = x.extent(0), n = x.extent(1);
    if (offset < 0 || len <= 0 || offset + len > m)
        throw dim_error("slice_rows: [" + std::to_string(offset) + ", " +
                        std::to_string(offset + len) + ") outside " + shape_str(x.shape()));
    Tensor<T> out({len, n});
    for (int i = 0; i < len; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(offset + i, j);
    bool tracked = tracking<T>({&x});
    auto xn = x.node(), on = out.node();
    finish_op("slice_rows", out, tracked, [xn, on, n, offset, len] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& g = grad_buf(xn);
        for (int i = 0; i < len; ++i)
            for (int j = 0; j < n; ++j)
                g[static_cast<size_t>(offset + i) * n + j] +=
                    on->grad[static_cast<size_t>(i) * n + j];
    });
    return out;
}

// Concatenate 2-D tensors along columns (axis 1); all must share row count.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw dim_error("concat_cols: empty input");
    const int m = parts[0].extent(0);
    int total = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.extent(0) != m)
            throw dim_error("concat_cols: row mismatch " + shape_str(p.shape()));
        total += p.extent(1);
    }
    Tensor<T> out({m, total});
    int col = 0;
    for (const auto& p : parts) {
        const int pn = p.extent(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < pn; ++j) out.at(i, col + j) = p.at(i, j);
        col += pn;
    }
    bool tracked = false;
    for (const auto& p : parts) tracked = tracked || tracking<T>({&p});
    std::vector<std::shared_ptr<TensorNode<T>>> pns;
    for (const auto& p : parts) pns.push_back(p.node());
    auto on = out.node();
    finish_op("concat_cols", out, tracked, [pns, on, m, total] {
        if (on->grad.empty()) return;
        int col = 0;
        for (auto& pn : pns) {
            const int w = pn->shape[1];
            if (pn->requires_grad) {
                auto& g = grad_buf(pn);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j)
                        g[static_cast<size_t>(i) * w + j] +=
                            on->grad[static_cast<size_t>(i) * total + col + j];
            }
            col += w;
        }
    });
    return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw dim_error("concat_rows: empty input");
    const int n = parts[0].extent(1);
    int total = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.extent(1) != n)
            throw dim_error("concat_rows: column mismatch " + shape_str(p.shape()));
        total += p.extent(0);
    }
    Tensor<T> out({total, n});
    int row = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < p.extent(0); ++i)
            for (int j = 0; j < n; ++j) out.at(row + i, j) = p.at(i, j);
        row += p.extent(0);
    }
    bool tracked = false;
    for (const auto& p : parts) tracked = tracked || tracking<T>({&p});
    std::vector<std::shared_ptr<TensorNode<T>>> pns;
    for (const auto& p : parts) pns.push_back(p.node());
    auto on = out.node();
    finish_op("concat_rows", out, tracked, [pns, on, n] {
        if (on->grad.empty()) return;
        int row = 0;
        for (auto& pn : pns) {
            const int h = pn->shape[0];
            if (pn->requires_grad) {
                auto& g = grad_buf(pn);
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < n; ++j)
                        g[static_cast<size_t>(i) * n + j] +=
                            on->grad[static_cast<size_t>(row + i) * n + j];
            }
            row += h;
        }
    });
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
    bool tracked = tracking<T>({&x});
    auto xn = x.node(), on = out.node();
    finish_op("relu", out, tracked, [xn, on] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& g = grad_buf(xn);
        for (size_t i = 0; i < g.size(); ++i)
            if (xn->data[i] > T(0)) g[i] += on->grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = T(1) / (T(1) + std::exp(-x.data()[i]));
    bool tracked = tracking<T>({&x});
    auto xn = x.node(), on = out.node();
    finish_op("sigmoid", out, tracked, [xn, on] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& g = grad_buf(xn);
        for (size_t i = 0; i < g.size(); ++i) {
            const T s = on->data[i];
            g[i] += on->grad[i] * s * (T(1) - s);
        }
    });
    return out;
}

// Row-wise softmax with per-row max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    if (x.shape().size() != 2) throw dim_error("softmax_rows: need 2-D, got " + shape_str(x.shape()));
    const int m = x.extent(0), n = x.extent(1);
    Tensor<T> out(x.shape());
    for (int i = 0; i < m; ++i) {
        T mx = x.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
        T sum = 0;
        for (int j = 0; j < n; ++j) {
            const T e = std::exp(x.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < n; ++j) out.at(i, j) /= sum;
    }
    bool tracked = tracking<T>({&x});
    auto xn = x.node(), on = out.node();
    finish_op("softmax_rows", out, tracked, [xn, on, m, n] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& g = grad_buf(xn);
        for (int i = 0; i < m; ++i) {
            const T* s = on->data.data() + static_cast<size_t>(i) * n;
            const T* og = on->grad.data() + static_cast<size_t>(i) * n;
            T dot = 0;
            for (int j = 0; j < n; ++j) dot += s[j] * og[j];
            for (int j = 0; j < n; ++j)
                g[static_cast<size_t>(i) * n + j] += s[j] * (og[j] - dot);
        }
    });
    return out;
}

// Layer norm over the last axis with learned gamma/beta of that extent.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    if (x.shape().empty()) throw dim_error("layer_norm: scalar input");
    const int n = x.shape().back();
    if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
        throw dim_error("layer_norm: gamma/beta must be [" + std::to_string(n) + "]");
    const size_t rows = x.size() / static_cast<size_t>(n);
    Tensor<T> out(x.shape());
    std::vector<T> inv_std(rows), mean(rows);
    for (size_t r = 0; r < rows; ++r) {
        const T* xi = x.data().data() + r * n;
        T mu = 0;
        for (int j = 0; j < n; ++j) mu += xi[j];
        mu /= n;
        T var = 0;
        for (int j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= n;
        const T is = T(1) / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = is;
        T* oi = out.data().data() + r * n;
        for (int j = 0; j < n; ++j) oi[j] = (xi[j] - mu) * is * gamma.at(j) + beta.at(j);
    }
    bool tracked = tracking<T>({&x, &gamma, &beta});
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    finish_op("layer_norm", out, tracked, [xn, gn, bn, on, n, rows, mean, inv_std] {
        if (on->grad.empty()) return;
        for (size_t r = 0; r < rows; ++r) {
            const T* xi = xn->data.data() + r * n;
            const T* og = on->grad.data() + r * n;
            const T mu = mean[r], is = inv_std[r];
            if (gn->requires_grad) {
                auto& gg = grad_buf(gn);
                for (int j = 0; j < n; ++j) gg[j] += og[j] * (xi[j] - mu) * is;
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(bn);
                for (int j = 0; j < n; ++j) gb[j] += og[j];
            }
            if (xn->requires_grad) {
                auto& gx = grad_buf(xn);
                // dL/dxhat_j = og_j * gamma_j; fold mean/variance terms
                T sum_d = 0, sum_dx = 0;
                for (int j = 0; j < n; ++j) {
                    const T d = og[j] * gn->data[j];
                    sum_d += d;
                    sum_dx += d * (xi[j] - mu) * is;
                }
                for (int j = 0; j < n; ++j) {
                    const T d = og[j] * gn->data[j];
                    const T xh = (xi[j] - mu) * is;
                    gx[r * n + j] += is * (d - sum_d / n - xh * sum_dx / n);
                }
            }
        }
    });
    return out;
}

// Affine map on row vectors: out = x . w + bias, x: [m x k], w: [k x n].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    return add_bias(matmul(x, w), bias);
}

// [c x h x w] -> [c], mean over the spatial grid. Sequential accumulation.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.shape().size() != 3) throw dim_error("global_avg_pool: need 3-D, got " + shape_str(x.shape()));
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    const T inv = T(1) / (static_cast<T>(h) * static_cast<T>(w));
    Tensor<T> out({c});
    for (int ch = 0; ch < c; ++ch) {
        T acc = 0;
        const T* plane = x.data().data() + static_cast<size_t>(ch) * h * w;
        for (int i = 0; i < h * w; ++i) acc += plane[i];
        out.at(ch) = acc * inv;
    }
    bool tracked = tracking<T>({&x});
    auto xn = x.node(), on = out.node();
    finish_op("global_avg_pool", out, tracked, [xn, on, c, h, w, inv] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& g = grad_buf(xn);
        for (int ch = 0; ch < c; ++ch) {
            const T gv = on->grad[ch] * inv;
            for (int i = 0; i < h * w; ++i) g[static_cast<size_t>(ch) * h * w + i] += gv;
        }
    });
    return out;
}

// Grouped 2-D cross-correlation. x: [c_in x h x w],
// kernel: [c_out x (c_in/groups) x kh x kw], bias: [c_out] or empty.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding, int groups) {
    if (x.shape().size() != 3 || kernel.shape().size() != 4)
        throw dim_error("conv2d: need input [c x h x w] and kernel [co x ci/g x kh x kw]");
    const int c_in = x.extent(0), h = x.extent(1), w = x.extent(2);
    const int c_out = kernel.extent(0), kc = kernel.extent(1);
    const int kh = kernel.extent(2), kw = kernel.extent(3);
    if (groups <= 0 || c_in % groups != 0 || c_out % groups != 0)
        throw config_error("conv2d: channels (" + std::to_string(c_in) + " in, " +
                           std::to_string(c_out) + " out) not divisible by " +
                           std::to_string(groups) + " groups");
    if (kc != c_in / groups)
        throw dim_error("conv2d: kernel group width " + std::to_string(kc) + " != c_in/groups");
    if (stride <= 0 || padding < 0)
        throw config_error("conv2d: stride must be positive and padding non-negative");
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;
    if (h + 2 * padding < kh || w + 2 * padding < kw || oh <= 0 || ow <= 0)
        throw config_error("conv2d: empty output for input " + shape_str(x.shape()) +
                           ", kernel " + shape_str(kernel.shape()) + ", stride " +
                           std::to_string(stride) + ", padding " + std::to_string(padding));
    const bool has_bias = bias.size() > 0;
    if (has_bias && bias.shape() != Shape{c_out})
        throw dim_error("conv2d: bias must be [" + std::to_string(c_out) + "]");

    const int cig = c_in / groups, cog = c_out / groups;
    Tensor<T> out({c_out, oh, ow});
    for (int oc = 0; oc < c_out; ++oc) {
        const int g = oc / cog;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                T acc = has_bias ? bias.at(oc) : T(0);
                for (int ic = 0; ic < cig; ++ic)
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride + ky - padding;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride + kx - padding;
                            if (ix < 0 || ix >= w) continue;
                            acc += x.at(g * cig + ic, iy, ix) * kernel.data()[((static_cast<size_t>(oc) * cig + ic) * kh + ky) * kw + kx];
                        }
                    }
                out.at(oc, oy, ox) = acc;
            }
    }
    bool tracked = tracking<T>({&x, &kernel, &bias});
    auto xn = x.node(), kn = kernel.node(), bn = bias.node(), on = out.node();
    finish_op("conv2d", out, tracked,
              [xn, kn, bn, on, c_in, h, w, c_out, kh, kw, oh, ow, stride, padding, groups, cig, cog,
               has_bias] {
                  if (on->grad.empty()) return;
                  auto og = [&](int oc, int oy, int ox) {
                      return on->grad[(static_cast<size_t>(oc) * oh + oy) * ow + ox];
                  };
                  if (has_bias && bn->requires_grad) {
                      auto& gb = grad_buf(bn);
                      for (int oc = 0; oc < c_out; ++oc)
                          for (int oy = 0; oy < oh; ++oy)
                              for (int ox = 0; ox < ow; ++ox) gb[oc] += og(oc, oy, ox);
                  }
                  const bool gx = xn->requires_grad, gk = kn->requires_grad;
                  if (!gx && !gk) return;
                  if (gx) grad_buf(xn);
                  if (gk) grad_buf(kn);
                  for (int oc = 0; oc < c_out; ++oc) {
                      const int g = oc / cog;
                      for (int oy = 0; oy < oh; ++oy)
                          for (int ox = 0; ox < ow; ++ox) {
                              const T go = og(oc, oy, ox);
                              for (int ic = 0; ic < cig; ++ic)
                                  for (int ky = 0; ky < kh; ++ky) {
                                      const int iy = oy * stride + ky - padding;
                                      if (iy < 0 || iy >= h) continue;
                                      for (int kx = 0; kx < kw; ++kx) {
                                          const int ix = ox * stride + kx - padding;
                                          if (ix < 0 || ix >= w) continue;
                                          const size_t xi =
                                              (static_cast<size_t>(g * cig + ic) * h + iy) * w + ix;
                                          const size_t ki =
                                              ((static_cast<size_t>(oc) * cig + ic) * kh + ky) * kw +
                                              kx;
                                          if (gx) xn->grad[xi] += go * kn->data[ki];
                                          if (gk) kn->grad[ki] += go * xn->data[xi];
                                      }
                                  }
                          }
                  }
              });
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    Tensor<T> out({1}, {acc});
    bool tracked = tracking<T>({&x});
    auto xn = x.node(), on = out.node();
    finish_op("sum", out, tracked, [xn, on] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& g = grad_buf(xn);
        for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[0];
    });
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    const T inv = T(1) / static_cast<T>(x.size());
    T acc = 0;
    for (T v : x.data()) acc += v;
    Tensor<T> out({1}, {acc * inv});
    bool tracked = tracking<T>({&x});
    auto xn = x.node(), on = out.node();
    finish_op("mean", out, tracked, [xn, on, inv] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& g = grad_buf(xn);
        for (size_t i = 0; i < g.size(); ++i) g[i] += on->grad[0] * inv;
    });
    return out;
}

// Inverted dropout. rate == 0 (the default everywhere) is an exact identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, std::mt19937_64& rng) {
    if (rate < T(0) || rate >= T(1)) throw config_error("dropout: rate must be in [0, 1)");
    if (rate == T(0)) return x;
    Tensor<T> out(x.shape());
    std::vector<char> keep(x.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const T inv_keep = T(1) / (T(1) - rate);
    for (size_t i = 0; i < x.size(); ++i) {
        keep[i] = u(rng) >= static_cast<double>(rate);
        out.data()[i] = keep[i] ? x.data()[i] * inv_keep : T(0);
    }
    bool tracked = tracking<T>({&x});
    auto xn = x.node(), on = out.node();
    finish_op("dropout", out, tracked, [xn, on, keep, inv_keep] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& g = grad_buf(xn);
        for (size_t i = 0; i < g.size(); ++i)
            if (keep[i]) g[i] += on->grad[i] * inv_keep;
    });
    return out;
}

// Mean absolute difference over all elements; subgradient sign(a-b) at ties.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("l1_loss", a, b);
    const T inv = T(1) / static_cast<T>(a.size());
    T acc = 0;
    for (size_t i = 0; i < a.size(); ++i) acc += std::abs(a.data()[i] - b.data()[i]);
    Tensor<T> out({1}, {acc * inv});
    bool tracked = tracking<T>({&a, &b});
    auto an = a.node(), bn = b.node(), on = out.node();
    finish_op("l1_loss", out, tracked, [an, bn, on, inv] {
        if (on->grad.empty()) return;
        for (size_t i = 0; i < an->data.size(); ++i) {
            const T d = an->data[i] - bn->data[i];
            const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
            if (an->requires_grad) grad_buf(an)[i] += on->grad[0] * inv * s;
            if (bn->requires_grad) grad_buf(bn)[i] -= on->grad[0] * inv * s;
        }
    });
    return out;
}

}  // namespace barrel
