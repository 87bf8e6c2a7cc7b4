// Acceptance gate: one pass/fail line per criterion, exit code = number of
// failures. Training-based criteria (4-6) share one ablation block.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include "barrel/harness.hpp"
#include "barrel/model.hpp"
#include "barrel/train.hpp"
#include "gradcheck.hpp"

using namespace barrel;
using barrel::testing::gradcheck;
using barrel::testing::random_tensor;

namespace {

int g_failures = 0;

void report(int id, const std::string& what, bool pass, const std::string& detail) {
    std::printf("[%s] %d. %s: %s\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double worst = 0;
    for (size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

Tensor<double> row_stochastic(int n, int s, std::mt19937_64& rng) {
    Tensor<double> a = random_tensor({n, s}, rng, 0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0;
        for (int j = 0; j < s; ++j) acc += a.at(i, j);
        for (int j = 0; j < s; ++j) a.at(i, j) /= acc;
    }
    return a;
}

// --- 1: naive/efficient extraction equivalence --------------------------------

void criterion_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    auto rng = make_rng(101);
    std::uniform_int_distribution<int> un(1, 16), us(1, 128), ud(1, 32);
    double worst = 0;
    const int instances = 120;
    for (int i = 0; i < instances; ++i) {
        const int n = un(rng), s = us(rng), d = ud(rng);
        QAMemParams<double> p(n, d, rng);
        Tensor<double> a = row_stochastic(n, s, rng);
        Tensor<double> m = random_tensor({s, d}, rng);
        worst = std::max(worst, max_abs_diff(extract_naive(a, m, p), extract_efficient(a, m, p)));
    }
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << instances << " random instances, max abs diff " << worst << ", " << secs << " s";
    report(1, "naive/efficient extraction equivalence", worst < 1e-10 && secs < 5.0, os.str());
}

// --- 2: gradient suite ---------------------------------------------------------

void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    auto rng = make_rng(102);
    double worst = 0;
    auto track = [&](double err) { worst = std::max(worst, err); };

    for (int trial = 0; trial < 3; ++trial) {
        Tensor<double> a = random_tensor({3, 4}, rng);
        Tensor<double> b = random_tensor({4, 5}, rng);
        Tensor<double> bias = random_tensor({5}, rng);
        track(gradcheck([&] { return sum(mul(sigmoid(matmul(a, b)), matmul(a, b))); }, {a, b}));
        track(gradcheck([&] { return sum(relu(add_bias(matmul(a, b), bias))); }, {a, b, bias}));
        Tensor<double> g = random_tensor({4}, rng, 0.5, 1.5), be = random_tensor({4}, rng);
        track(gradcheck([&] { return sum(mul(layer_norm(a, g, be), a)); }, {a, g, be}));
        track(gradcheck([&] { return sum(mul(softmax_rows(a), a)); }, {a}));
        Tensor<double> img = random_tensor({2, 5, 5}, rng);
        Tensor<double> k = random_tensor({3, 2, 3, 3}, rng);
        Tensor<double> kb = random_tensor({3}, rng);
        track(gradcheck([&] { return sum(mul(conv2d(img, k, kb, 2, 1, 1),
                                             conv2d(img, k, kb, 2, 1, 1))); }, {img, k, kb}));
        track(gradcheck([&] { return sum(mul(global_avg_pool(img), global_avg_pool(img))); },
                        {img}));
        Tensor<double> target = random_tensor({3, 4}, rng, 2.0, 3.0);
        track(gradcheck([&] { return l1_loss(a, target); }, {a, target}));
    }

    // full model at N=4, d=8, S=9 with every module enabled
    ModelConfig mc;
    mc.image_size = 12;
    mc.backbone.in_channels = 1;
    mc.backbone.stage_channels = {2, 3};
    mc.backbone.stride = 4;
    mc.backbone.out_dim = 8;
    mc.head.num_landmarks = 4;
    mc.head.hidden_dim = 8;
    mc.head.num_heads = 2;
    mc.head.num_decoder_layers = 1;
    mc.head.ffn_dim = 16;
    mc.head.use_dqinit = true;
    mc.head.use_qamem = true;
    Model<double> model(mc, 7);
    Tensor<double> image = random_tensor({1, 12, 12}, rng, 0.0, 1.0);
    std::vector<Tensor<double>> leaves{image};
    long param_total = 0;
    for (const auto& p : model.all_params()) {
        leaves.push_back(p.tensor);
        param_total += static_cast<long>(p.tensor.size());
    }
    track(gradcheck([&] {
        auto out = model.forward(image);
        return sum(mul(out.landmarks, out.landmarks));
    }, leaves));

    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << "ops + full model (" << param_total << " params), max rel err " << worst << ", "
       << secs << " s";
    report(2, "finite-difference gradient suite", worst < 1e-6 && secs < 60.0, os.str());
}

// --- 3: identity-transform reduction -------------------------------------------

void criterion_identity_reduction() {
    ModelConfig on_cfg;
    on_cfg.image_size = 16;
    on_cfg.backbone.stage_channels = {2, 3};
    on_cfg.backbone.stride = 4;
    on_cfg.backbone.out_dim = 8;
    on_cfg.head.num_landmarks = 4;
    on_cfg.head.hidden_dim = 8;
    on_cfg.head.num_heads = 2;
    on_cfg.head.ffn_dim = 16;
    on_cfg.head.use_qamem = true;
    Model<double> on_model(on_cfg, 31);

    // overwrite the per-query transforms with exact identities
    for (NamedParam<double> p : on_model.all_params())  // by value: shares storage
        if (p.name == "head.layer0.qamem.kernel") {
            QAMemParams<double> ident = QAMemParams<double>::identity(4, 8);
            p.tensor.data() = ident.kernel.data();
        }

    ModelConfig off_cfg = on_cfg;
    off_cfg.head.use_qamem = false;
    Model<double> off_model(off_cfg, 32);
    // share every remaining parameter with the QAMem model
    std::map<std::string, Tensor<double>> by_name;
    for (const auto& p : on_model.all_params()) by_name.emplace(p.name, p.tensor);
    for (NamedParam<double> p : off_model.all_params()) p.tensor.data() = by_name.at(p.name).data();

    auto rng = make_rng(33);
    double worst = 0;
    for (int trial = 0; trial < 5; ++trial) {
        Tensor<double> img = random_tensor({1, 16, 16}, rng, 0.0, 1.0);
        Tensor<double> base = off_model.forward(img).landmarks;
        worst = std::max(worst,
                         max_abs_diff(on_model.forward(img, QAMemVariant::kEfficient).landmarks,
                                      base));
        worst = std::max(worst,
                         max_abs_diff(on_model.forward(img, QAMemVariant::kNaive).landmarks,
                                      base));
    }
    std::ostringstream os;
    os << "identity QAMem vs QAMem-off forward, both routes, max abs diff " << worst;
    report(3, "identity-transform reduction", worst < 1e-12, os.str());
}

// --- 4-6: trained trends --------------------------------------------------------

double center_predictor_nme(const DatasetConfig& cfg, uint64_t seed) {
    Dataset test = generate_dataset(cfg, seed, false);
    double acc = 0;
    for (const Sample& s : test.samples) {
        LandmarkSet pred = s.landmarks;
        for (auto& p : pred.points) {
            p.x = 0.5;
            p.y = 0.5;
        }
        acc += 100.0 * nme(pred, s.landmarks, cfg.eye_left, cfg.eye_right);
    }
    return acc / test.samples.size();
}

void criteria_training_trends() {
    const auto t0 = std::chrono::steady_clock::now();
    KVConfig base;  // library defaults: 64x64, stride 32, d=64, 60 epochs, N=12
    std::vector<GridEntry> grid = {
        {"baseline", {}},
        {"dqinit", {"model.use_dqinit=true"}},
        {"qamem", {"model.use_qamem=true"}},
        {"both", {"model.use_dqinit=true", "model.use_qamem=true"}},
        {"decoder4", {"model.num_decoder_layers=4"}},
    };
    std::vector<AblationRow> rows = run_ablation<float>(base, grid, 3, /*verbose=*/true);
    const AblationRow&baseline = rows[0], &dqinit = rows[1], &qamem = rows[2], &both = rows[3],
                     &dec4 = rows[4];
    const double secs = seconds_since(t0);

    {
        const bool pass = both.nme_mean <= baseline.nme_mean &&
                          dqinit.nme_mean <= baseline.nme_mean + baseline.nme_std &&
                          qamem.nme_mean <= baseline.nme_mean + baseline.nme_std &&
                          secs < 1800.0;
        std::ostringstream os;
        os << "NME% baseline " << baseline.nme_mean << " (std " << baseline.nme_std
           << ") dqinit " << dqinit.nme_mean << " qamem " << qamem.nme_mean << " both "
           << both.nme_mean << ", " << secs << " s";
        report(4, "module ablation trend", pass, os.str());
    }
    {
        const bool pass = dec4.nme_mean <= baseline.nme_mean + baseline.nme_std;
        std::ostringstream os;
        os << "NME% 1 decoder " << baseline.nme_mean << " vs 4 decoders " << dec4.nme_mean
           << " (+1 std bound " << baseline.nme_mean + baseline.nme_std << ")";
        report(5, "decoder-count trend", pass, os.str());
    }
    {
        RunConfig rc = parse_run_config(base);
        double center = 0;
        for (uint64_t s = 0; s < 3; ++s)
            center += center_predictor_nme(rc.data, rc.train.seed + s);
        center /= 3;
        const bool pass = baseline.nme_mean < 0.5 * center;
        std::ostringstream os;
        os << "trained NME% " << baseline.nme_mean << " vs constant-center " << center;
        report(6, "learnability floor", pass, os.str());
    }
}

// --- 7: throughput direction ----------------------------------------------------

void criterion_throughput() {
    const int n = 32, s = 64, d = 64, batch = 16;
    auto rng = make_rng(71);
    QAMemParams<double> p(n, d, rng);
    std::vector<Tensor<double>> as, ms;
    for (int i = 0; i < batch; ++i) {
        as.push_back(row_stochastic(n, s, rng));
        ms.push_back(random_tensor({s, d}, rng));
    }
    auto bench = [&](auto&& extract) {
        std::vector<double> rates;
        volatile double sink = 0;
        for (int it = 0; it < 5; ++it) {
            const auto t0 = std::chrono::steady_clock::now();
            for (int i = 0; i < batch; ++i) sink = sink + extract(as[i], ms[i], p).at(0, 0);
            const double secs = seconds_since(t0);
            if (it >= 1) rates.push_back(batch / secs);  // first iteration is warmup
        }
        std::sort(rates.begin(), rates.end());
        return rates[rates.size() / 2];
    };
    const double naive_rate = bench([](auto& a, auto& m, auto& q) { return extract_naive(a, m, q); });
    const double eff_rate = bench([](auto& a, auto& m, auto& q) { return extract_efficient(a, m, q); });
    const double flop_ratio =
        static_cast<double>(flop_estimate(n, s, d, QAMemVariant::kNaive)) /
        static_cast<double>(flop_estimate(n, s, d, QAMemVariant::kEfficient));
    std::ostringstream os;
    os << "efficient " << eff_rate << " vs naive " << naive_rate
       << " extractions/s (batch 16), flop ratio " << flop_ratio;
    report(7, "efficient-route throughput", eff_rate >= naive_rate, os.str());
}

// --- 8: metric correctness ------------------------------------------------------

void criterion_metrics() {
    bool pass = true;
    std::ostringstream os;
    LandmarkSet gt;
    gt.points = {{0.0, 0.0}, {1.0, 0.0}};
    LandmarkSet pred = gt;
    pass &= nme(pred, gt, 0, 1) == 0.0;
    pred.points[0].y = 0.1;
    pred.points[1].y = 0.3;
    const double hand = nme(pred, gt, 0, 1);
    pass &= std::abs(hand - 0.2) < 1e-15;

    auto rng = make_rng(81);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    LandmarkSet g2, p2;
    for (int i = 0; i < 8; ++i) {
        g2.points.push_back({u(rng), u(rng)});
        p2.points.push_back({u(rng), u(rng)});
    }
    const double base = nme(p2, g2, 0, 1);
    auto xform = [](LandmarkSet ls) {
        const double th = 0.9, sc = 1.7, tx = 3.0, ty = -2.0;
        for (Landmark& p : ls.points) {
            const double x = sc * (std::cos(th) * p.x - std::sin(th) * p.y) + tx;
            const double y = sc * (std::sin(th) * p.x + std::cos(th) * p.y) + ty;
            p.x = x;
            p.y = y;
        }
        return ls;
    };
    const double moved = nme(xform(p2), xform(g2), 0, 1);
    pass &= std::abs(moved - base) < 1e-9;
    os << "hand case 0.2 -> " << hand << ", similarity drift " << std::abs(moved - base);
    report(8, "NME hand cases and similarity invariance", pass, os.str());
}

// --- 9: determinism -------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void criterion_determinism() {
    const auto dir = std::filesystem::temp_directory_path() / "barrel_acceptance_det";
    std::filesystem::remove_all(dir);
    KVConfig kv;
    kv.set("data.train_count", "40");
    kv.set("data.test_count", "16");
    kv.set("train.epochs", "4");
    kv.set("train.lr_decay_epoch", "3");
    RunConfig rc = parse_run_config(kv);
    Dataset train_ds = generate_dataset(rc.data, rc.train.seed, true);
    Dataset test_ds = generate_dataset(rc.data, rc.train.seed, false);
    for (const char* run : {"a", "b"}) {
        Model<float> model(rc.model, derive_seed(rc.train.seed, 20, 0));
        train_model(model, rc, train_ds, test_ds, dir / run);
    }
    const std::string ma = slurp(dir / "a" / "metrics.csv");
    const bool metrics_ok = !ma.empty() && ma == slurp(dir / "b" / "metrics.csv");

    // checkpoint round trip on a probe batch
    RunConfig rc2 = parse_run_config(load_checkpoint_manifest(dir / "a" / "checkpoint"));
    Model<float> loaded = load_checkpoint<float>(dir / "a" / "checkpoint", rc2);
    Model<float> original = load_checkpoint<float>(dir / "b" / "checkpoint", rc2);
    bool ckpt_ok = true;
    for (int i = 0; i < 4; ++i) {
        Tensor<float> img = image_to_tensor<float>(test_ds.samples[static_cast<size_t>(i)].image);
        Tensor<float> a = loaded.forward(img).landmarks;
        Tensor<float> b = original.forward(img).landmarks;
        for (size_t j = 0; j < a.size(); ++j) ckpt_ok &= a.data()[j] == b.data()[j];
    }
    std::filesystem::remove_all(dir);
    std::ostringstream os;
    os << "metrics files " << (metrics_ok ? "identical" : "DIFFER") << ", checkpoint probe "
       << (ckpt_ok ? "bitwise-equal" : "DIFFERS");
    report(9, "run and checkpoint determinism", metrics_ok && ckpt_ok, os.str());
}

}  // namespace

int main() {
    criterion_equivalence();
    criterion_gradients();
    criterion_identity_reduction();
    criterion_throughput();
    criterion_metrics();
    criterion_determinism();
    criteria_training_trends();  // criteria 4-6; the slow block runs last
    if (g_failures) std::printf("%d criterion(s) FAILED\n", g_failures);
    else std::printf("all acceptance criteria passed\n");
    return g_failures;
}
