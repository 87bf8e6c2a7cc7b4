#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "barrel/adam.hpp"
#include "barrel/data.hpp"
#include "barrel/model.hpp"
#include "barrel/ops.hpp"

namespace barrel {

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0;
    double test_nme_percent = 0;
    double lr = 0;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    int best_epoch = -1;
    double best_nme_percent = 0;
};

struct EvalResult {
    double nme_percent = 0;
    std::vector<double> per_sample_nme;  // percent
    int excluded_count = 0;
};

template <typename T>
EvalResult evaluate_model(const Model<T>& model, const Dataset& test) {
    EvalResult res;
    double acc = 0;
    int counted = 0;
    for (const Sample& s : test.samples) {
        auto out = model.forward(image_to_tensor<T>(s.image));
        LandmarkSet pred = tensor_to_landmarks(out.landmarks);
        try {
            const double v = 100.0 * nme(pred, s.landmarks, test.config.eye_left,
                                         test.config.eye_right);
            res.per_sample_nme.push_back(v);
            acc += v;
            ++counted;
        } catch (const degenerate_normalization_error&) {
            ++res.excluded_count;
        }
    }
    res.nme_percent = counted ? acc / counted : 0.0;
    return res;
}

namespace detail {

// Re-runs a forward/backward with per-op NaN checks to name the culprit.
template <typename T>
[[noreturn]] void diagnose_nan(const Model<T>& model, const Tensor<T>& image,
                               const Tensor<T>& target) {
    nan_check_enabled<T> = true;
    try {
        Tape<T> tape;
        auto out = model.forward(image);
        Tensor<T> loss = l1_loss(out.landmarks, target);
        tape.backward(loss);
    } catch (const numeric_error&) {
        nan_check_enabled<T> = false;
        throw;
    }
    nan_check_enabled<T> = false;
    throw numeric_error("loss is non-finite but no op reproduced it");
}

}  // namespace detail

// Adam over per-batch averaged L1 loss; two parameter groups (backbone at
// lr * multiplier); one step decay of the learning rate. Deterministic given
// the config seed. Leaves the model at its best-NME parameters.
template <typename T>
TrainResult train_model(Model<T>& model, const RunConfig& rc, const Dataset& train_ds,
                        const Dataset& test_ds, const std::filesystem::path& out_dir = {},
                        bool verbose = false) {
    const TrainConfig& tc = rc.train;
    Adam<T> opt(tc.lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
    opt.add_group(model.backbone_params(), tc.backbone_lr_multiplier);
    opt.add_group(model.head_params(), 1.0);

    const int n_train = static_cast<int>(train_ds.samples.size());
    std::vector<int> order(static_cast<size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<T>> best_params;

    std::ofstream metrics;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics.open(out_dir / "metrics.csv");
        metrics << "epoch,train_loss,test_nme_percent,lr\n";
    }

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const double lr = epoch >= tc.lr_decay_epoch ? tc.lr / tc.lr_decay_factor : tc.lr;
        opt.set_lr(lr);

        auto shuffle_rng = make_rng(derive_seed(tc.seed, 3, static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0;
        int batches = 0;
        for (int start = 0; start < n_train; start += tc.batch_size) {
            const int bsz = std::min(tc.batch_size, n_train - start);
            opt.zero_grad();
            double batch_loss = 0;
            for (int b = 0; b < bsz; ++b) {
                const int idx = order[static_cast<size_t>(start + b)];
                Sample s = train_ds.samples[static_cast<size_t>(idx)];
                if (tc.augment)
                    s = augment(s, rc.aug,
                                derive_seed(tc.seed, 4,
                                            static_cast<uint64_t>(epoch) * n_train +
                                                static_cast<uint64_t>(idx)));
                Tensor<T> image = image_to_tensor<T>(s.image);
                Tensor<T> target = landmarks_to_tensor<T>(s.landmarks);
                Tape<T> tape;
                auto out = model.forward(image);
                Tensor<T> loss = l1_loss(out.landmarks, target);
                const double lv = static_cast<double>(loss.item());
                if (!std::isfinite(lv)) detail::diagnose_nan(model, image, target);
                batch_loss += lv;
                tape.backward(scale(loss, T(1) / static_cast<T>(bsz)));
            }
            opt.step();
            epoch_loss += batch_loss / bsz;
            ++batches;
        }
        epoch_loss /= batches;

        EvalResult ev = evaluate_model(model, test_ds);
        result.history.push_back({epoch, epoch_loss, ev.nme_percent, lr});
        if (metrics.is_open()) {
            metrics.precision(10);
            metrics << epoch << ',' << epoch_loss << ',' << ev.nme_percent << ',' << lr << '\n';
        }
        if (verbose)
            std::cerr << "epoch " << epoch << " loss " << epoch_loss << " nme% " << ev.nme_percent
                      << " lr " << lr << "\n";

        if (ev.nme_percent < best) {
            best = ev.nme_percent;
            result.best_epoch = epoch;
            best_params.clear();
            for (const NamedParam<T>& p : model.all_params()) best_params.push_back(p.tensor.data());
        }
    }

    // restore the best-NME parameters
    {
        size_t i = 0;
        for (NamedParam<T> p : model.all_params()) p.tensor.data() = best_params[i++];
    }
    result.best_nme_percent = best;
    if (!out_dir.empty()) save_checkpoint(out_dir / "checkpoint", model, rc,
                                          result.best_epoch, best);
    return result;
}

struct BenchResult {
    double images_per_sec = 0;
    int warmup_iterations = 0;
    long long flops_naive = 0, flops_efficient = 0;
};

// Median-of-iterations full-model forward throughput with the chosen QAMem
// extraction route.
template <typename T>
BenchResult bench_model(const Model<T>& model, QAMemVariant variant, int batch, int iterations,
                        int warmup = 2) {
    const ModelConfig& mc = model.config();
    std::vector<Tensor<T>> images;
    auto rng = make_rng(7);
    for (int i = 0; i < batch; ++i) {
        Tensor<T> img({mc.backbone.in_channels, mc.image_size, mc.image_size});
        fill_uniform(img, T(0), T(1), rng);
        images.push_back(std::move(img));
    }
    std::vector<double> rates;
    volatile double sink = 0;
    for (int it = 0; it < warmup + iterations; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        for (const Tensor<T>& img : images) sink = sink + model.forward(img, variant).landmarks.at(0, 0);
        const auto t1 = std::chrono::steady_clock::now();
        if (it >= warmup)
            rates.push_back(batch / std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(rates.begin(), rates.end());
    BenchResult res;
    res.images_per_sec = rates[rates.size() / 2];
    res.warmup_iterations = warmup;
    res.flops_naive = flop_estimate(mc.head.num_landmarks, mc.memory_size(), mc.head.hidden_dim,
                                    QAMemVariant::kNaive);
    res.flops_efficient = flop_estimate(mc.head.num_landmarks, mc.memory_size(),
                                        mc.head.hidden_dim, QAMemVariant::kEfficient);
    return res;
}

}  // namespace barrel
