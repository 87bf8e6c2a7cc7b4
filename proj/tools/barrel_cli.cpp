// Command-line entry point: train / eval / ablate / bench over key=value
// configs. Exit codes: 0 success, 2 configuration error, 3 numerical abort.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "barrel/harness.hpp"
#include "barrel/model.hpp"
#include "barrel/train.hpp"

namespace fs = std::filesystem;
using namespace barrel;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
    int seed = -1;           // -1: keep config value
    std::string precision;   // empty: keep config value
};

KVConfig load_kv(const CommonOpts& opts) {
    KVConfig kv;
    if (!opts.config_path.empty()) kv = KVConfig::from_file(opts.config_path);
    for (const std::string& ov : opts.overrides) kv.apply_override(ov);
    if (opts.seed >= 0) kv.set("train.seed", std::to_string(opts.seed));
    if (!opts.precision.empty()) kv.set("train.precision", opts.precision);
    return kv;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--override", opts.overrides, "config override key=value (repeatable)");
    cmd->add_option("--seed", opts.seed, "override train.seed");
    cmd->add_option("--precision", opts.precision, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    cmd->add_option("--out-dir", opts.out_dir, "output directory");
}

template <typename T>
int run_train(const KVConfig& kv, const CommonOpts& opts) {
    RunConfig rc = parse_run_config(kv);
    Dataset train_ds = generate_dataset(rc.data, rc.train.seed, true);
    Dataset test_ds = generate_dataset(rc.data, rc.train.seed, false);
    Model<T> model(rc.model, derive_seed(rc.train.seed, 20, 0));
    std::cout << "training: " << model.param_count() << " parameters, "
              << train_ds.samples.size() << " train / " << test_ds.samples.size()
              << " test samples, " << rc.train.epochs << " epochs\n";
    TrainResult tr = train_model(model, rc, train_ds, test_ds, opts.out_dir, /*verbose=*/true);
    std::cout << "best test NME% " << tr.best_nme_percent << " at epoch " << tr.best_epoch
              << "\ncheckpoint: " << (fs::path(opts.out_dir) / "checkpoint").string()
              << "\nmetrics: " << (fs::path(opts.out_dir) / "metrics.csv").string() << "\n";
    return 0;
}

// --data accepts either an exported dataset directory or a config file whose
// data.* keys describe the test split to generate.
Dataset resolve_dataset(const std::string& data_path, uint64_t seed) {
    if (fs::is_directory(data_path)) return import_dataset(data_path);
    KVConfig kv = KVConfig::from_file(data_path);
    RunConfig rc = parse_run_config(kv);
    return generate_dataset(rc.data, seed, false);
}

template <typename T>
int run_eval(const std::string& ckpt, const std::string& data_path, const CommonOpts& opts) {
    KVConfig manifest = load_checkpoint_manifest(ckpt);
    for (const std::string& ov : opts.overrides) manifest.apply_override(ov);
    RunConfig rc = parse_run_config(manifest);
    Model<T> model = load_checkpoint<T>(ckpt, rc);
    Dataset test_ds = data_path.empty() ? generate_dataset(rc.data, rc.train.seed, false)
                                        : resolve_dataset(data_path, rc.train.seed);
    if (!test_ds.samples.empty() &&
        static_cast<int>(test_ds.samples[0].landmarks.points.size()) !=
            rc.model.head.num_landmarks)
        throw config_error("checkpoint predicts " +
                           std::to_string(rc.model.head.num_landmarks) +
                           " landmarks but the dataset has " +
                           std::to_string(test_ds.samples[0].landmarks.points.size()));
    EvalResult ev = evaluate_model(model, test_ds);
    std::cout << "nme_percent=" << ev.nme_percent << "\n"
              << "excluded_count=" << ev.excluded_count << "\n";
    std::cout << "per_sample_nme=";
    for (size_t i = 0; i < ev.per_sample_nme.size(); ++i)
        std::cout << (i ? "," : "") << ev.per_sample_nme[i];
    std::cout << "\n";
    return 0;
}

template <typename T>
int run_ablate(const KVConfig& base_kv, const std::string& grid_path, const CommonOpts& opts) {
    std::vector<GridEntry> grid = parse_grid_file(grid_path);
    std::vector<AblationRow> rows = run_ablation<T>(base_kv, grid, 3, /*verbose=*/true);
    fs::create_directories(opts.out_dir);
    write_ablation_csv(rows, fs::path(opts.out_dir) / "ablation.csv");
    write_ablation_plots(rows, opts.out_dir);
    std::cout << "name,nme_percent,nme_std,images_per_sec,param_count\n";
    for (const AblationRow& r : rows)
        std::cout << r.name << ',' << r.nme_mean << ',' << r.nme_std << ','
                  << r.images_per_sec << ',' << r.param_count << "\n";
    std::cout << "wrote " << (fs::path(opts.out_dir) / "ablation.csv").string()
              << " and SVG plots\n";
    return 0;
}

template <typename T>
int run_bench(const std::string& ckpt, const std::string& variant_str, int batch, int iterations,
              const CommonOpts& opts) {
    const QAMemVariant variant = parse_variant(variant_str);
    KVConfig manifest = load_checkpoint_manifest(ckpt);
    for (const std::string& ov : opts.overrides) manifest.apply_override(ov);
    RunConfig rc = parse_run_config(manifest);
    Model<T> model = load_checkpoint<T>(ckpt, rc);
    BenchResult br = bench_model(model, variant, batch, iterations);
    std::cout << "variant=" << variant_str << "\n"
              << "images_per_sec=" << br.images_per_sec << "\n"
              << "warmup_iterations_excluded=" << br.warmup_iterations << "\n"
              << "flops_naive=" << br.flops_naive << "\n"
              << "flops_efficient=" << br.flops_efficient << "\n"
              << "flop_ratio=" << static_cast<double>(br.flops_naive) / br.flops_efficient
              << "\n";
    return 0;
}

std::string pick_precision(const KVConfig& kv) {
    const std::string p = kv.get_str("train.precision", "f32");
    if (p != "f32" && p != "f64") throw config_error("precision must be f32 or f64, got " + p);
    return p;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"landmark detection trainer/benchmark"};
    app.require_subcommand(1);

    CommonOpts train_opts, eval_opts, ablate_opts, bench_opts;
    std::string eval_ckpt, eval_data, grid_path, bench_ckpt, bench_variant = "efficient";
    int bench_batch = 16, bench_iterations = 5;

    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--config", train_opts.config_path, "key=value config file");
    add_common(train_cmd, train_opts);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint directory")->required();
    eval_cmd->add_option("--data", eval_data, "dataset directory or config file");
    add_common(eval_cmd, eval_opts);

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "run an ablation grid");
    ablate_cmd->add_option("--grid", grid_path, "grid file")->required();
    ablate_cmd->add_option("--config", ablate_opts.config_path, "base config file");
    add_common(ablate_cmd, ablate_opts);

    CLI::App* bench_cmd = app.add_subcommand("bench", "measure forward throughput");
    bench_cmd->add_option("--ckpt", bench_ckpt, "checkpoint directory")->required();
    bench_cmd->add_option("--variant", bench_variant, "naive|efficient")
        ->check(CLI::IsMember({"naive", "efficient"}));
    bench_cmd->add_option("--batch", bench_batch, "images per iteration");
    bench_cmd->add_option("--iterations", bench_iterations, "timed iterations");
    add_common(bench_cmd, bench_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            KVConfig kv = load_kv(train_opts);
            return pick_precision(kv) == "f64" ? run_train<double>(kv, train_opts)
                                               : run_train<float>(kv, train_opts);
        }
        if (eval_cmd->parsed()) {
            KVConfig manifest = load_checkpoint_manifest(eval_ckpt);
            if (!eval_opts.precision.empty())
                manifest.set("train.precision", eval_opts.precision);
            return pick_precision(manifest) == "f64"
                       ? run_eval<double>(eval_ckpt, eval_data, eval_opts)
                       : run_eval<float>(eval_ckpt, eval_data, eval_opts);
        }
        if (ablate_cmd->parsed()) {
            KVConfig kv = load_kv(ablate_opts);
            return pick_precision(kv) == "f64" ? run_ablate<double>(kv, grid_path, ablate_opts)
                                               : run_ablate<float>(kv, grid_path, ablate_opts);
        }
        if (bench_cmd->parsed()) {
            KVConfig manifest = load_checkpoint_manifest(bench_ckpt);
            if (!bench_opts.precision.empty())
                manifest.set("train.precision", bench_opts.precision);
            return pick_precision(manifest) == "f64"
                       ? run_bench<double>(bench_ckpt, bench_variant, bench_batch,
                                           bench_iterations, bench_opts)
                       : run_bench<float>(bench_ckpt, bench_variant, bench_batch,
                                          bench_iterations, bench_opts);
        }
    } catch (const numeric_error& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 3;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dim_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
