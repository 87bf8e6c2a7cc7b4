#pragma once

#include <string>
#include <vector>

#include "barrel/backbone.hpp"
#include "barrel/nn.hpp"
#include "barrel/ops.hpp"
#include "barrel/qamem.hpp"

namespace barrel {

struct HeadConfig {
    int num_landmarks = 12;
    int hidden_dim = 64;
    int num_heads = 4;
    int num_decoder_layers = 1;
    int ffn_dim = 256;  // 4 * hidden_dim
    bool use_dqinit = false;
    bool use_qamem = false;

    void validate() const {
        if (num_landmarks <= 0) throw config_error("num_landmarks must be positive");
        if (hidden_dim <= 0 || num_heads <= 0 || hidden_dim % num_heads != 0)
            throw config_error("hidden_dim " + std::to_string(hidden_dim) +
                               " not divisible by num_heads " + std::to_string(num_heads));
        if (num_decoder_layers < 1) throw config_error("num_decoder_layers must be >= 1");
        if (ffn_dim <= 0) throw config_error("ffn_dim must be positive");
    }
};

template <typename T>
struct AttentionResult {
    Tensor<T> output;   // [N x d]
    Tensor<T> weights;  // [N x S], head-averaged, rows sum to 1
};

// Scaled dot-product multi-head attention. Positional terms are added to the
// query/key projections only; values never carry a positional term (the
// QAMem naive/efficient algebra relies on that).
template <typename T>
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(int dim, int heads, std::mt19937_64& rng)
        : dim_(dim), heads_(heads),
          wq_(dim, dim, rng), wk_(dim, dim, rng), wv_(dim, dim, rng), wo_(dim, dim, rng) {}

    // query_pos/key_pos may be empty tensors (no positional term).
    AttentionResult<T> forward(const Tensor<T>& queries, const Tensor<T>& keys,
                               const Tensor<T>& values, const Tensor<T>& query_pos,
                               const Tensor<T>& key_pos,
                               const QAMemParams<T>* qamem = nullptr,
                               QAMemVariant variant = QAMemVariant::kEfficient) const {
        Tensor<T> q_in = query_pos.size() ? add(queries, query_pos) : queries;
        Tensor<T> k_in = key_pos.size() ? add(keys, key_pos) : keys;
        Tensor<T> q = wq_.forward(q_in);
        Tensor<T> k = wk_.forward(k_in);
        Tensor<T> v = wv_.forward(values);

        const int dh = dim_ / heads_;
        const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
        std::vector<Tensor<T>> head_attn, head_values, head_out;
        for (int h = 0; h < heads_; ++h) {
            Tensor<T> qh = slice_cols(q, h * dh, dh);
            Tensor<T> kh = slice_cols(k, h * dh, dh);
            Tensor<T> vh = slice_cols(v, h * dh, dh);
            Tensor<T> attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
            head_attn.push_back(attn);
            head_values.push_back(vh);
            if (!qamem || variant == QAMemVariant::kEfficient)
                head_out.push_back(matmul(attn, vh));
        }

        Tensor<T> merged;
        if (!qamem) {
            merged = concat_cols(head_out);
        } else if (variant == QAMemVariant::kEfficient) {
            merged = qamem_apply(concat_cols(head_out), *qamem);
        } else {
            merged = naive_qamem_merge(head_attn, head_values, *qamem, dh);
        }

        AttentionResult<T> res;
        res.output = wo_.forward(merged);
        Tensor<T> avg = head_attn[0];
        for (int h = 1; h < heads_; ++h) avg = add(avg, head_attn[h]);
        res.weights = scale(avg, T(1) / static_cast<T>(heads_));
        return res;
    }

    long param_count() const {
        return wq_.param_count() + wk_.param_count() + wv_.param_count() + wo_.param_count();
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        wq_.collect(prefix + ".wq", out);
        wk_.collect(prefix + ".wk", out);
        wv_.collect(prefix + ".wv", out);
        wo_.collect(prefix + ".wo", out);
    }

private:
    // Redundant-materialization route for benchmarking: each query i builds a
    // private memory per head, V_h . T^i[h-block rows], and extracts from it.
    Tensor<T> naive_qamem_merge(const std::vector<Tensor<T>>& head_attn,
                                const std::vector<Tensor<T>>& head_values,
                                const QAMemParams<T>& qamem, int dh) const {
        std::vector<Tensor<T>> transforms = qamem.unpack_transforms();
        std::vector<Tensor<T>> rows;
        for (int i = 0; i < qamem.num_queries; ++i) {
            Tensor<T> acc;
            for (int h = 0; h < heads_; ++h) {
                Tensor<T> block = slice_rows(transforms[i], h * dh, dh);      // [dh x d]
                Tensor<T> private_memory = matmul(head_values[h], block);     // [S x d]
                Tensor<T> part = matmul(slice_rows(head_attn[h], i, 1), private_memory);
                acc = acc.size() ? add(acc, part) : part;
            }
            rows.push_back(acc);
        }
        return concat_rows(rows);
    }

    int dim_ = 0, heads_ = 0;
    LinearLayer<T> wq_, wk_, wv_, wo_;
};

// One decoder layer: self-attention over queries, cross-attention to the
// memory, feed-forward; post-norm residuals throughout.
template <typename T>
class DecoderLayer {
public:
    DecoderLayer() = default;
    DecoderLayer(const HeadConfig& cfg, std::mt19937_64& rng)
        : self_attn_(cfg.hidden_dim, cfg.num_heads, rng),
          cross_attn_(cfg.hidden_dim, cfg.num_heads, rng),
          norm_self_(cfg.hidden_dim), norm_cross_(cfg.hidden_dim), norm_ffn_(cfg.hidden_dim),
          ffn1_(cfg.hidden_dim, cfg.ffn_dim, rng), ffn2_(cfg.ffn_dim, cfg.hidden_dim, rng) {
        if (cfg.use_qamem) qamem_ = QAMemParams<T>(cfg.num_landmarks, cfg.hidden_dim, rng);
        use_qamem_ = cfg.use_qamem;
    }

    struct Output {
        Tensor<T> queries;
        Tensor<T> cross_weights;  // [N x S], head-averaged
    };

    Output forward(const Tensor<T>& queries, const Tensor<T>& memory_flat,
                   const Tensor<T>& query_pe, const Tensor<T>& memory_pe,
                   QAMemVariant variant) const {
        AttentionResult<T> sa = self_attn_.forward(queries, queries, queries, query_pe, query_pe);
        Tensor<T> x = norm_self_.forward(add(queries, sa.output));

        AttentionResult<T> ca =
            cross_attn_.forward(x, memory_flat, memory_flat, query_pe, memory_pe,
                                use_qamem_ ? &qamem_ : nullptr, variant);
        x = norm_cross_.forward(add(x, ca.output));

        Tensor<T> ff = ffn2_.forward(relu(ffn1_.forward(x)));
        x = norm_ffn_.forward(add(x, ff));
        return {x, ca.weights};
    }

    const QAMemParams<T>* qamem() const { return use_qamem_ ? &qamem_ : nullptr; }
    const MultiHeadAttention<T>& cross_attn() const { return cross_attn_; }

    long param_count() const {
        long n = self_attn_.param_count() + cross_attn_.param_count();
        n += norm_self_.param_count() + norm_cross_.param_count() + norm_ffn_.param_count();
        n += ffn1_.param_count() + ffn2_.param_count();
        if (use_qamem_) n += qamem_.param_count();
        return n;
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        self_attn_.collect(prefix + ".self_attn", out);
        cross_attn_.collect(prefix + ".cross_attn", out);
        norm_self_.collect(prefix + ".norm_self", out);
        norm_cross_.collect(prefix + ".norm_cross", out);
        norm_ffn_.collect(prefix + ".norm_ffn", out);
        ffn1_.collect(prefix + ".ffn1", out);
        ffn2_.collect(prefix + ".ffn2", out);
        if (use_qamem_) qamem_.collect(prefix + ".qamem", out);
    }

private:
    MultiHeadAttention<T> self_attn_, cross_attn_;
    LayerNormLayer<T> norm_self_, norm_cross_, norm_ffn_;
    LinearLayer<T> ffn1_, ffn2_;
    QAMemParams<T> qamem_;
    bool use_qamem_ = false;
};

template <typename T>
struct DecodeResult {
    Tensor<T> embeddings;     // [N x d]
    Tensor<T> cross_weights;  // last layer's cross-attention, [N x S]
};

// The detection head: learned positional encodings, a stack of decoder
// layers over N landmark queries, and a shared 2-layer perceptron that maps
// each query embedding to sigmoid-squashed (x, y) coordinates.
template <typename T>
class DetectionHead {
public:
    DetectionHead() = default;

    DetectionHead(const HeadConfig& cfg, int memory_size, uint64_t seed)
        : cfg_(cfg), memory_size_(memory_size) {
        cfg.validate();
        auto rng = make_rng(seed);
        const int d = cfg.hidden_dim;
        memory_proj_ = LinearLayer<T>(d, d, rng);
        query_pe_ = Tensor<T>({cfg.num_landmarks, d});
        init_fan_in_uniform(query_pe_, d, rng);
        query_pe_.set_requires_grad(true);
        memory_pe_ = Tensor<T>({memory_size, d});
        init_fan_in_uniform(memory_pe_, d, rng);
        memory_pe_.set_requires_grad(true);
        for (int l = 0; l < cfg.num_decoder_layers; ++l) layers_.emplace_back(cfg, rng);
        pred1_ = LinearLayer<T>(d, d, rng);
        pred2_ = LinearLayer<T>(d, 2, rng);
    }

    const HeadConfig& config() const { return cfg_; }
    int memory_size() const { return memory_size_; }
    const Tensor<T>& query_pe() const { return query_pe_; }
    Tensor<T>& mutable_query_pe() { return query_pe_; }
    const Tensor<T>& memory_pe() const { return memory_pe_; }
    LinearLayer<T>& mutable_pred2() { return pred2_; }
    const std::vector<DecoderLayer<T>>& layers() const { return layers_; }

    Tensor<T> project_memory(const Tensor<T>& memory_flat) const {
        if (memory_flat.shape() != Shape{memory_size_, cfg_.hidden_dim})
            throw dim_error("head: memory " + shape_str(memory_flat.shape()) + " expected [" +
                            std::to_string(memory_size_) + "x" + std::to_string(cfg_.hidden_dim) +
                            "]");
        return memory_proj_.forward(memory_flat);
    }

    // q_init: [N x d]; zeros when DQInit is disabled.
    DecodeResult<T> decode(const Memory<T>& memory, const Tensor<T>& q_init,
                           QAMemVariant variant = QAMemVariant::kEfficient) const {
        if (q_init.shape() != Shape{cfg_.num_landmarks, cfg_.hidden_dim})
            throw dim_error("head: q_init " + shape_str(q_init.shape()) + " expected [" +
                            std::to_string(cfg_.num_landmarks) + "x" +
                            std::to_string(cfg_.hidden_dim) + "]");
        Tensor<T> mem = project_memory(memory.flat());
        Tensor<T> q = q_init;
        Tensor<T> cross;
        for (const auto& layer : layers_) {
            auto out = layer.forward(q, mem, query_pe_, memory_pe_, variant);
            q = out.queries;
            cross = out.cross_weights;
        }
        return {q, cross};
    }

    // Standalone cross-attention over a projected memory (first layer's
    // parameters); exposed for attention-level inspection and tests.
    AttentionResult<T> cross_attention(const Tensor<T>& queries,
                                       const Tensor<T>& memory_flat) const {
        return layers_[0].cross_attn().forward(queries, memory_flat, memory_flat, query_pe_,
                                               memory_pe_, layers_[0].qamem(),
                                               QAMemVariant::kEfficient);
    }

    Tensor<T> predict_landmarks(const Tensor<T>& embeddings) const {
        return sigmoid(pred2_.forward(relu(pred1_.forward(embeddings))));
    }

    long param_count() const {
        long n = memory_proj_.param_count();
        n += static_cast<long>(query_pe_.size() + memory_pe_.size());
        for (const auto& l : layers_) n += l.param_count();
        n += pred1_.param_count() + pred2_.param_count();
        return n;
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        memory_proj_.collect(prefix + ".memory_proj", out);
        out.push_back({prefix + ".query_pe", query_pe_});
        out.push_back({prefix + ".memory_pe", memory_pe_});
        for (size_t i = 0; i < layers_.size(); ++i)
            layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
        pred1_.collect(prefix + ".pred1", out);
        pred2_.collect(prefix + ".pred2", out);
    }

private:
    HeadConfig cfg_;
    int memory_size_ = 0;
    LinearLayer<T> memory_proj_;
    Tensor<T> query_pe_;   // [N x d]
    Tensor<T> memory_pe_;  // [S x d]
    std::vector<DecoderLayer<T>> layers_;
    LinearLayer<T> pred1_, pred2_;
};

}  // namespace barrel
