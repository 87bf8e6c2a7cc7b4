#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "barrel/decoder.hpp"
#include "gradcheck.hpp"

using namespace barrel;
using barrel::testing::gradcheck;
using barrel::testing::random_tensor;

namespace {

HeadConfig small_cfg() {
    HeadConfig cfg;
    cfg.num_landmarks = 4;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.num_decoder_layers = 1;
    cfg.ffn_dim = 16;
    return cfg;
}

Memory<double> random_memory(int d, int h, int w, std::mt19937_64& rng) {
    Memory<double> m;
    m.features = random_tensor({d, h, w}, rng);
    m.h = h;
    m.w = w;
    return m;
}

// Overwrites a linear layer (via its collected, storage-sharing tensors) with
// the identity map.
void set_identity(ParamList<double>& params, const std::string& weight_name,
                  const std::string& bias_name) {
    for (auto& p : params) {
        if (p.name == weight_name) {
            const int d = p.tensor.extent(0);
            for (double& v : p.tensor.data()) v = 0.0;
            for (int i = 0; i < d; ++i) p.tensor.at(i, i) = 1.0;
        } else if (p.name == bias_name) {
            for (double& v : p.tensor.data()) v = 0.0;
        }
    }
}

}  // namespace

TEST_CASE("config validation") {
    HeadConfig cfg = small_cfg();
    cfg.hidden_dim = 9;  // not divisible by 2 heads
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = small_cfg();
    cfg.num_decoder_layers = 0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = small_cfg();
    cfg.num_landmarks = 0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("single-cell memory forces cross-attention weights to one") {
    HeadConfig cfg = small_cfg();
    DetectionHead<double> head(cfg, /*memory_size=*/1, 11);
    auto rng = make_rng(1);
    Memory<double> mem = random_memory(8, 1, 1, rng);
    DecodeResult<double> out = head.decode(mem, Tensor<double>({4, 8}));
    REQUIRE(out.cross_weights.shape() == Shape{4, 1});
    for (double w : out.cross_weights.data()) CHECK(w == 1.0);
}

TEST_CASE("cross-attention weights are row-stochastic in [0,1]") {
    DetectionHead<double> head(small_cfg(), 9, 12);
    auto rng = make_rng(2);
    Memory<double> mem = random_memory(8, 3, 3, rng);
    DecodeResult<double> out = head.decode(mem, random_tensor({4, 8}, rng));
    for (int i = 0; i < 4; ++i) {
        double acc = 0;
        for (int j = 0; j < 9; ++j) {
            const double w = out.cross_weights.at(i, j);
            CHECK(w >= 0.0);
            CHECK(w <= 1.0);
            acc += w;
        }
        CHECK(std::abs(acc - 1.0) < 1e-12);
    }
}

TEST_CASE("head is permutation-equivariant in query index (QAMem off)") {
    DetectionHead<double> head(small_cfg(), 9, 13);
    auto rng = make_rng(3);
    Memory<double> mem = random_memory(8, 3, 3, rng);
    Tensor<double> q_init = random_tensor({4, 8}, rng);
    DecodeResult<double> base = head.decode(mem, q_init);
    Tensor<double> base_pred = head.predict_landmarks(base.embeddings);

    const int perm[4] = {2, 0, 3, 1};
    Tensor<double> q_perm({4, 8}), pe_perm({4, 8});
    const Tensor<double> pe = head.query_pe();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 8; ++j) {
            q_perm.at(i, j) = q_init.at(perm[i], j);
            pe_perm.at(i, j) = pe.at(perm[i], j);
        }
    DetectionHead<double> head2(small_cfg(), 9, 13);  // same seed, same params
    head2.mutable_query_pe() = pe_perm;
    DecodeResult<double> permuted = head2.decode(mem, q_perm);
    Tensor<double> perm_pred = head2.predict_landmarks(permuted.embeddings);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 8; ++j)
            CHECK(permuted.embeddings.at(i, j) ==
                  doctest::Approx(base.embeddings.at(perm[i], j)).epsilon(1e-12));
        for (int j = 0; j < 9; ++j)
            CHECK(permuted.cross_weights.at(i, j) ==
                  doctest::Approx(base.cross_weights.at(perm[i], j)).epsilon(1e-12));
        for (int j = 0; j < 2; ++j)
            CHECK(perm_pred.at(i, j) ==
                  doctest::Approx(base_pred.at(perm[i], j)).epsilon(1e-12));
    }
}

TEST_CASE("zero embeddings and a zeroed final layer predict the image center") {
    DetectionHead<double> head(small_cfg(), 9, 14);
    for (double& v : head.mutable_pred2().weight.data()) v = 0.0;
    for (double& v : head.mutable_pred2().bias.data()) v = 0.0;
    Tensor<double> pred = head.predict_landmarks(Tensor<double>({4, 8}));
    REQUIRE(pred.shape() == Shape{4, 2});
    for (double v : pred.data()) CHECK(v == 0.5);
}

TEST_CASE("predicted landmarks stay inside the unit square") {
    DetectionHead<double> head(small_cfg(), 15, 9);
    auto rng = make_rng(4);
    Tensor<double> pred = head.predict_landmarks(random_tensor({4, 8}, rng, -50.0, 50.0));
    REQUIRE(pred.shape() == Shape{4, 2});
    for (double v : pred.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("attention with identity projections is a convex combination of rows") {
    auto rng = make_rng(5);
    MultiHeadAttention<double> mha(2, 1, rng);
    ParamList<double> params;
    mha.collect("a", params);
    for (const char* l : {"a.wq", "a.wk", "a.wv", "a.wo"})
        set_identity(params, std::string(l) + ".weight", std::string(l) + ".bias");

    Tensor<double> memory({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor<double> none;
    // logits (ln 9, 0) after the 1/sqrt(2) scale -> weights (0.9, 0.1)
    Tensor<double> q({1, 2}, {std::sqrt(2.0) * std::log(9.0), 0.0});
    AttentionResult<double> res = mha.forward(q, memory, memory, none, none);
    CHECK(res.weights.at(0, 0) == doctest::Approx(0.9).epsilon(1e-14));
    CHECK(res.weights.at(0, 1) == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(res.output.at(0, 0) == doctest::Approx(0.9).epsilon(1e-14));
    CHECK(res.output.at(0, 1) == doctest::Approx(0.1).epsilon(1e-14));

    // zero query -> uniform weights -> mean of memory rows
    Tensor<double> zq({1, 2});
    AttentionResult<double> uni = mha.forward(zq, memory, memory, none, none);
    CHECK(uni.weights.at(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(uni.output.at(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(uni.output.at(0, 1) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("multi-head attention matches a per-element loop oracle") {
    auto rng = make_rng(6);
    const int n = 3, s = 5, d = 4, heads = 2, dh = d / heads;
    MultiHeadAttention<double> mha(d, heads, rng);
    ParamList<double> params;
    mha.collect("a", params);
    auto find = [&](const std::string& name) -> const Tensor<double>& {
        for (const auto& p : params)
            if (p.name == name) return p.tensor;
        throw std::logic_error("param not found: " + name);
    };
    Tensor<double> queries = random_tensor({n, d}, rng);
    Tensor<double> memory = random_tensor({s, d}, rng);
    Tensor<double> qpos = random_tensor({n, d}, rng);
    Tensor<double> kpos = random_tensor({s, d}, rng);

    auto affine = [&](const Tensor<double>& x, const std::string& l) {
        const Tensor<double>&w = find(l + ".weight"), &b = find(l + ".bias");
        Tensor<double> out({x.extent(0), w.extent(1)});
        for (int i = 0; i < x.extent(0); ++i)
            for (int j = 0; j < w.extent(1); ++j) {
                double acc = b.at(j);
                for (int k = 0; k < x.extent(1); ++k) acc += x.at(i, k) * w.at(k, j);
                out.at(i, j) = acc;
            }
        return out;
    };
    Tensor<double> q_in({n, d}), k_in({s, d});
    for (size_t i = 0; i < q_in.size(); ++i) q_in.data()[i] = queries.data()[i] + qpos.data()[i];
    for (size_t i = 0; i < k_in.size(); ++i) k_in.data()[i] = memory.data()[i] + kpos.data()[i];
    Tensor<double> q = affine(q_in, "a.wq"), k = affine(k_in, "a.wk"), v = affine(memory, "a.wv");

    Tensor<double> merged({n, d}), avg_w({n, s});
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i) {
            std::vector<double> logits(static_cast<size_t>(s));
            double mx = -1e300;
            for (int j = 0; j < s; ++j) {
                double acc = 0;
                for (int kk = 0; kk < dh; ++kk) acc += q.at(i, h * dh + kk) * k.at(j, h * dh + kk);
                logits[static_cast<size_t>(j)] = acc / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, logits[static_cast<size_t>(j)]);
            }
            double z = 0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                z += l;
            }
            for (int j = 0; j < s; ++j) {
                const double w = logits[static_cast<size_t>(j)] / z;
                avg_w.at(i, j) += w / heads;
                for (int kk = 0; kk < dh; ++kk) merged.at(i, h * dh + kk) += w * v.at(j, h * dh + kk);
            }
        }
    Tensor<double> expect = affine(merged, "a.wo");

    AttentionResult<double> res = mha.forward(queries, memory, memory, qpos, kpos);
    for (size_t i = 0; i < expect.size(); ++i)
        CHECK(res.output.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
    for (size_t i = 0; i < avg_w.size(); ++i)
        CHECK(res.weights.data()[i] == doctest::Approx(avg_w.data()[i]).epsilon(1e-12));
}

TEST_CASE("head gradients match finite differences (QAMem on)") {
    HeadConfig cfg = small_cfg();
    cfg.use_qamem = true;
    DetectionHead<double> head(cfg, 9, 16);
    auto rng = make_rng(7);
    Memory<double> mem = random_memory(8, 3, 3, rng);
    Tensor<double> q_init = random_tensor({4, 8}, rng);
    ParamList<double> params;
    head.collect("head", params);
    std::vector<Tensor<double>> leaves{mem.features, q_init};
    for (const auto& p : params) leaves.push_back(p.tensor);
    CHECK(gradcheck([&] {
              return sum(head.predict_landmarks(head.decode(mem, q_init).embeddings));
          }, leaves) < 1e-6);
}
