#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "barrel/nn.hpp"
#include "barrel/ops.hpp"

namespace barrel {

// Per-query value transforms: query i owns a d x d matrix T^i applied to the
// values it extracts from the memory. The N matrices are stored as one
// grouped 1x1 conv kernel with N groups, kernel shape [N*d x d x 1 x 1].
// Layout is group-major: kernel[i*d + a][b] = T^i[b][a], so that the conv
// over channel block i computes the row-vector product q_i . T^i.
template <typename T>
struct QAMemParams {
    int num_queries = 0;
    int dim = 0;
    Tensor<T> kernel;  // [N*d x d x 1 x 1]

    QAMemParams() = default;

    // Identity plus small uniform noise, so the module starts out equivalent
    // to the shared-memory baseline.
    QAMemParams(int n, int d, std::mt19937_64& rng) : num_queries(n), dim(d) {
        std::vector<Tensor<T>> transforms;
        std::uniform_real_distribution<double> u(-0.01, 0.01);
        for (int i = 0; i < n; ++i) {
            Tensor<T> t({d, d});
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b)
                    t.at(a, b) = static_cast<T>(u(rng)) + (a == b ? T(1) : T(0));
            transforms.push_back(std::move(t));
        }
        kernel = pack_transforms(transforms);
        kernel.set_requires_grad(true);
    }

    static QAMemParams identity(int n, int d) {
        QAMemParams p;
        p.num_queries = n;
        p.dim = d;
        std::vector<Tensor<T>> transforms;
        for (int i = 0; i < n; ++i) {
            Tensor<T> t({d, d});
            for (int a = 0; a < d; ++a) t.at(a, a) = T(1);
            transforms.push_back(std::move(t));
        }
        p.kernel = pack_transforms(transforms);
        p.kernel.set_requires_grad(true);
        return p;
    }

    static Tensor<T> pack_transforms(const std::vector<Tensor<T>>& transforms) {
        const int n = static_cast<int>(transforms.size());
        if (n == 0) throw dim_error("pack_transforms: empty input");
        const int d = transforms[0].extent(0);
        Tensor<T> kernel({n * d, d, 1, 1});
        for (int i = 0; i < n; ++i) {
            if (transforms[i].shape() != Shape{d, d})
                throw dim_error("pack_transforms: transform " + std::to_string(i) +
                                " is " + shape_str(transforms[i].shape()));
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b)
                    kernel.data()[(static_cast<size_t>(i * d + a) * d + b)] =
                        transforms[i].at(b, a);
        }
        return kernel;
    }

    std::vector<Tensor<T>> unpack_transforms() const {
        std::vector<Tensor<T>> out;
        for (int i = 0; i < num_queries; ++i) {
            Tensor<T> t({dim, dim});
            for (int a = 0; a < dim; ++a)
                for (int b = 0; b < dim; ++b)
                    t.at(b, a) = kernel.data()[(static_cast<size_t>(i * dim + a) * dim + b)];
            out.push_back(std::move(t));
        }
        return out;
    }

    long param_count() const { return static_cast<long>(num_queries) * dim * dim; }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".kernel", kernel});
    }
};

// Applies T^i to row i of the extraction E [N x d]. Implemented as a 1x1
// conv with N groups over E viewed as N channel blocks of width d.
template <typename T>
Tensor<T> qamem_apply(const Tensor<T>& extraction, const QAMemParams<T>& params) {
    const int n = params.num_queries, d = params.dim;
    if (extraction.shape() != Shape{n, d})
        throw dim_error("qamem_apply: extraction " + shape_str(extraction.shape()) +
                        " vs params [" + std::to_string(n) + "x" + std::to_string(d) + "]");
    Tensor<T> channels = reshape(extraction, {n * d, 1, 1});
    Tensor<T> no_bias;
    Tensor<T> transformed = conv2d(channels, params.kernel, no_bias, 1, 0, n);
    return reshape(transformed, {n, d});
}

// Reference path: materializes each query's private memory M^i = M . T^i and
// extracts row i of A . M^i. O(N * S * d^2); forward-only oracle (no
// gradient flows into the transforms along this path).
template <typename T>
Tensor<T> extract_naive(const Tensor<T>& attention, const Tensor<T>& memory_flat,
                        const QAMemParams<T>& params) {
    const int n = params.num_queries;
    if (attention.shape().size() != 2 || attention.extent(0) != n)
        throw dim_error("extract_naive: attention " + shape_str(attention.shape()) +
                        " needs " + std::to_string(n) + " rows");
    if (memory_flat.shape().size() != 2 || memory_flat.extent(1) != params.dim ||
        memory_flat.extent(0) != attention.extent(1))
        throw dim_error("extract_naive: memory " + shape_str(memory_flat.shape()) +
                        " inconsistent with attention " + shape_str(attention.shape()));
    std::vector<Tensor<T>> transforms = params.unpack_transforms();
    std::vector<Tensor<T>> rows;
    for (int i = 0; i < n; ++i) {
        Tensor<T> private_memory = matmul(memory_flat, transforms[i]);  // [S x d]
        rows.push_back(matmul(slice_rows(attention, i, 1), private_memory));
    }
    return concat_rows(rows);
}

// Efficient path: one shared extraction A . M, then the grouped per-query
// transform. O(N*S*d + N*d^2); algebraically identical to extract_naive.
template <typename T>
Tensor<T> extract_efficient(const Tensor<T>& attention, const Tensor<T>& memory_flat,
                            const QAMemParams<T>& params) {
    if (attention.shape().size() != 2 || attention.extent(0) != params.num_queries)
        throw dim_error("extract_efficient: attention " + shape_str(attention.shape()) +
                        " needs " + std::to_string(params.num_queries) + " rows");
    if (memory_flat.shape().size() != 2 || memory_flat.extent(1) != params.dim ||
        memory_flat.extent(0) != attention.extent(1))
        throw dim_error("extract_efficient: memory " + shape_str(memory_flat.shape()) +
                        " inconsistent with attention " + shape_str(attention.shape()));
    return qamem_apply(matmul(attention, memory_flat), params);
}

enum class QAMemVariant { kNaive, kEfficient };

inline QAMemVariant parse_variant(const std::string& s) {
    if (s == "naive") return QAMemVariant::kNaive;
    if (s == "efficient") return QAMemVariant::kEfficient;
    throw config_error("unknown qamem variant '" + s + "' (expected naive|efficient)");
}

// Multiply-add counts for the two extraction routes.
inline long long flop_estimate(long long n, long long s, long long d, QAMemVariant variant) {
    if (n <= 0 || s <= 0 || d <= 0) throw config_error("flop_estimate: extents must be positive");
    if (variant == QAMemVariant::kNaive) return n * (s * d * d + s * d);
    return n * s * d + n * d * d;
}

}  // namespace barrel
