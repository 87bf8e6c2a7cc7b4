#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "barrel/ops.hpp"
#include "gradcheck.hpp"

using namespace barrel;
using barrel::testing::random_tensor;

namespace {

// Independent triple-loop reference for matmul.
Tensor<double> matmul_oracle(const Tensor<double>& a, const Tensor<double>& b) {
    const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<double> out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0;
            for (int p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
            out.at(i, j) = acc;
        }
    return out;
}

// Direct nested-loop reference for grouped conv2d.
Tensor<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& k,
                             const Tensor<double>& bias, int stride, int padding, int groups) {
    const int c_in = x.extent(0), h = x.extent(1), w = x.extent(2);
    const int c_out = k.extent(0), kh = k.extent(2), kw = k.extent(3);
    const int cig = c_in / groups, cog = c_out / groups;
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;
    Tensor<double> out({c_out, oh, ow});
    for (int oc = 0; oc < c_out; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = bias.size() ? bias.at(oc) : 0.0;
                for (int ic = 0; ic < cig; ++ic)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int iy = oy * stride + ky - padding;
                            const int ix = ox * stride + kx - padding;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += x.at((oc / cog) * cig + ic, iy, ix) *
                                   k.data()[((static_cast<size_t>(oc) * cig + ic) * kh + ky) * kw + kx];
                        }
                out.at(oc, oy, ox) = acc;
            }
    return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    REQUIRE(a.shape() == b.shape());
    double worst = 0;
    for (size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

}  // namespace

TEST_CASE("matmul identity") {
    auto rng = make_rng(1);
    Tensor<double> x = random_tensor({3, 5}, rng);
    Tensor<double> eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    CHECK(max_abs_diff(matmul(eye, x), x) == 0.0);
}

TEST_CASE("matmul hand arithmetic") {
    Tensor<double> a({2, 2}, {1, 2, 3, 4});
    Tensor<double> b({2, 1}, {0, 1});
    Tensor<double> c = matmul(a, b);
    CHECK(c.at(0, 0) == 2.0);
    CHECK(c.at(1, 0) == 4.0);
}

TEST_CASE("matmul agrees with triple-loop oracle") {
    auto rng = make_rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor<double> a = random_tensor({5, 7}, rng);
        Tensor<double> b = random_tensor({7, 3}, rng);
        CHECK(max_abs_diff(matmul(a, b), matmul_oracle(a, b)) < 1e-12);
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor<double> a({2, 3}), b({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), dim_error);
}

TEST_CASE("softmax_rows zero row is uniform") {
    Tensor<double> x({1, 4});
    Tensor<double> s = softmax_rows(x);
    for (int j = 0; j < 4; ++j) CHECK(s.at(0, j) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax_rows large logits do not overflow") {
    Tensor<double> x({1, 2}, {1000.0, 1000.0});
    Tensor<double> s = softmax_rows(x);
    CHECK(s.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(std::isfinite(s.at(0, 1)));
}

TEST_CASE("softmax_rows rows sum to one") {
    auto rng = make_rng(3);
    Tensor<double> x = random_tensor({3, 5}, rng, -30.0, 30.0);
    Tensor<double> s = softmax_rows(x);
    for (int i = 0; i < 3; ++i) {
        double sum = 0;
        for (int j = 0; j < 5; ++j) {
            sum += s.at(i, j);
            CHECK(s.at(i, j) >= 0.0);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("conv2d 1x1 identity kernel passes input through") {
    auto rng = make_rng(4);
    Tensor<double> x = random_tensor({3, 4, 4}, rng);
    Tensor<double> k({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) k.data()[static_cast<size_t>(c) * 3 + c] = 1.0;
    Tensor<double> none;
    CHECK(max_abs_diff(conv2d(x, k, none, 1, 0, 1), x) == 0.0);
}

TEST_CASE("conv2d fully grouped 1x1 is per-channel scaling") {
    auto rng = make_rng(5);
    Tensor<double> x = random_tensor({4, 3, 3}, rng);
    Tensor<double> k({4, 1, 1, 1}, {2.0, -1.0, 0.5, 3.0});
    Tensor<double> none;
    Tensor<double> y = conv2d(x, k, none, 1, 0, 4);
    const double scales[4] = {2.0, -1.0, 0.5, 3.0};
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(y.at(c, i, j) == doctest::Approx(scales[c] * x.at(c, i, j)).epsilon(1e-15));
}

TEST_CASE("conv2d agrees with nested-loop oracle") {
    auto rng = make_rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor<double> x = random_tensor({8, 6, 6}, rng);
        Tensor<double> k = random_tensor({4, 8, 3, 3}, rng);
        Tensor<double> b = random_tensor({4}, rng);
        CHECK(max_abs_diff(conv2d(x, k, b, 2, 0, 1), conv2d_oracle(x, k, b, 2, 0, 1)) < 1e-12);
        // grouped variant
        Tensor<double> kg = random_tensor({4, 4, 3, 3}, rng);
        CHECK(max_abs_diff(conv2d(x, kg, b, 2, 1, 2), conv2d_oracle(x, kg, b, 2, 1, 2)) < 1e-12);
    }
}

TEST_CASE("conv2d rejects indivisible groups") {
    Tensor<double> x({3, 4, 4}), k({4, 1, 1, 1}), none;
    CHECK_THROWS_AS(conv2d(x, k, none, 1, 0, 2), config_error);
}

TEST_CASE("backward: sum gives all-ones grad") {
    auto rng = make_rng(7);
    Tensor<double> x = random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    Tape<double> tape;
    tape.backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: sum of squares gives 2x") {
    auto rng = make_rng(8);
    Tensor<double> x = random_tensor({5}, rng);
    x.set_requires_grad(true);
    Tape<double> tape;
    tape.backward(sum(mul(x, x)));
    for (size_t i = 0; i < x.size(); ++i)
        CHECK(x.grad()[i] == doctest::Approx(2 * x.data()[i]).epsilon(1e-15));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor<double> x({2, 2}, 1.0, true);
    Tape<double> tape;
    Tensor<double> y = add(x, x);
    CHECK_THROWS_AS(tape.backward(y), std::logic_error);
}

TEST_CASE("grad accumulates across fan-out") {
    Tensor<double> x({2}, {1.0, 2.0}, true);
    Tape<double> tape;
    tape.backward(sum(add(x, x)));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("forward replay is bitwise deterministic") {
    auto run = [] {
        auto rng = make_rng(99);
        Tensor<double> a = random_tensor({4, 6}, rng);
        Tensor<double> b = random_tensor({6, 3}, rng);
        Tensor<double> g({3}, 1.0), be({3});
        return layer_norm(relu(matmul(a, b)), g, be);
    };
    Tensor<double> r1 = run(), r2 = run();
    for (size_t i = 0; i < r1.size(); ++i) CHECK(r1.data()[i] == r2.data()[i]);
}

TEST_CASE("dropout at rate zero is the identity") {
    auto rng = make_rng(10);
    Tensor<double> x = random_tensor({3, 3}, rng);
    auto drop_rng = make_rng(11);
    Tensor<double> y = dropout(x, 0.0, drop_rng);
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("reshape preserves data, rejects bad element counts") {
    Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> y = reshape(x, {3, 2});
    CHECK(y.at(2, 1) == 6.0);
    CHECK_THROWS_AS(reshape(x, {4, 2}), dim_error);
}

TEST_CASE("concat/slice round trip") {
    auto rng = make_rng(12);
    Tensor<double> x = random_tensor({3, 8}, rng);
    std::vector<Tensor<double>> parts;
    for (int h = 0; h < 4; ++h) parts.push_back(slice_cols(x, h * 2, 2));
    CHECK(max_abs_diff(concat_cols(parts), x) == 0.0);
    std::vector<Tensor<double>> rows;
    for (int i = 0; i < 3; ++i) rows.push_back(slice_rows(x, i, 1));
    CHECK(max_abs_diff(concat_rows(rows), x) == 0.0);
}

TEST_CASE("nan check names the offending op") {
    nan_check_enabled<double> = true;
    Tensor<double> x({2}, {1e308, 1e308});
    CHECK_THROWS_WITH_AS(add(x, x), doctest::Contains("add"), numeric_error);
    nan_check_enabled<double> = false;
}
