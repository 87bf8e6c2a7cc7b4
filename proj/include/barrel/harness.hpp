#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "barrel/config.hpp"
#include "barrel/train.hpp"

namespace barrel {

struct AblationRow {
    std::string name;
    int stride = 0;
    int decoder_layers = 0;
    bool use_dqinit = false, use_qamem = false;
    std::string qamem_variant = "efficient";
    double nme_mean = 0;     // percent, mean over seeds
    double nme_std = 0;      // sample std over seeds
    double images_per_sec = 0;
    long param_count = 0;
    std::vector<double> per_seed_nme;
};

// One grid entry: a name plus config-key overrides applied on the base.
struct GridEntry {
    std::string name;
    std::vector<std::string> overrides;  // "key=value"
};

// Grid file: one entry per line, "name: key=value key=value ...".
// '#' comments and blank lines are skipped.
inline std::vector<GridEntry> parse_grid_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open grid file " + path.string());
    std::vector<GridEntry> grid;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string head;
        if (!(ss >> head)) continue;
        if (head.back() != ':')
            throw config_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected 'name: key=value ...'");
        GridEntry e;
        e.name = head.substr(0, head.size() - 1);
        std::string tok;
        while (ss >> tok) e.overrides.push_back(tok);
        grid.push_back(std::move(e));
    }
    if (grid.empty()) throw config_error("grid file " + path.string() + " has no entries");
    return grid;
}

// Trains and evaluates every grid configuration with the same seed triple
// (seed, seed+1, seed+2); reports per-config mean and sample std of test NME.
template <typename T>
std::vector<AblationRow> run_ablation(const KVConfig& base_kv, const std::vector<GridEntry>& grid,
                                      int num_seeds = 3, bool verbose = false) {
    std::vector<AblationRow> rows;
    for (const GridEntry& entry : grid) {
        KVConfig kv = base_kv;
        for (const std::string& ov : entry.overrides) kv.apply_override(ov);
        RunConfig rc = parse_run_config(kv);

        AblationRow row;
        row.name = entry.name;
        row.stride = rc.model.backbone.stride;
        row.decoder_layers = rc.model.head.num_decoder_layers;
        row.use_dqinit = rc.model.head.use_dqinit;
        row.use_qamem = rc.model.head.use_qamem;

        const uint64_t base_seed = rc.train.seed;
        for (int s = 0; s < num_seeds; ++s) {
            RunConfig seed_rc = rc;
            seed_rc.train.seed = base_seed + static_cast<uint64_t>(s);
            Dataset train_ds = generate_dataset(seed_rc.data, seed_rc.train.seed, true);
            Dataset test_ds = generate_dataset(seed_rc.data, seed_rc.train.seed, false);
            Model<T> model(seed_rc.model, derive_seed(seed_rc.train.seed, 20, 0));
            TrainResult tr = train_model(model, seed_rc, train_ds, test_ds);
            row.per_seed_nme.push_back(tr.best_nme_percent);
            row.param_count = model.param_count();
            if (s == 0) {
                BenchResult br = bench_model(model, QAMemVariant::kEfficient, 16, 3);
                row.images_per_sec = br.images_per_sec;
            }
            if (verbose)
                std::cerr << entry.name << " seed " << seed_rc.train.seed << " nme% "
                          << tr.best_nme_percent << "\n";
        }
        double mean = 0;
        for (double v : row.per_seed_nme) mean += v;
        mean /= row.per_seed_nme.size();
        double var = 0;
        for (double v : row.per_seed_nme) var += (v - mean) * (v - mean);
        row.nme_mean = mean;
        row.nme_std = row.per_seed_nme.size() > 1
                          ? std::sqrt(var / (row.per_seed_nme.size() - 1))
                          : 0.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows,
                               const std::filesystem::path& path) {
    std::ofstream f(path);
    f << "name,stride,decoder_layers,use_dqinit,use_qamem,qamem_variant,nme_percent,"
         "nme_std,images_per_sec,param_count\n";
    f.precision(8);
    for (const AblationRow& r : rows)
        f << r.name << ',' << r.stride << ',' << r.decoder_layers << ','
          << (r.use_dqinit ? "true" : "false") << ',' << (r.use_qamem ? "true" : "false") << ','
          << r.qamem_variant << ',' << r.nme_mean << ',' << r.nme_std << ','
          << r.images_per_sec << ',' << r.param_count << "\n";
}

namespace detail {

// Minimal SVG scatter/line plot of (x, y) series.
inline void write_svg_plot(const std::filesystem::path& path, const std::string& title,
                           const std::string& x_label,
                           const std::vector<std::pair<double, double>>& points) {
    const int w = 480, h = 320, m = 50;
    std::ofstream f(path);
    f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    f << "<rect width='100%' height='100%' fill='white'/>\n";
    f << "<text x='" << w / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title
      << "</text>\n";
    if (!points.empty()) {
        double xmin = points[0].first, xmax = xmin, ymin = points[0].second, ymax = ymin;
        for (auto& [x, y] : points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
        if (xmax == xmin) xmax = xmin + 1;
        if (ymax == ymin) ymax = ymin + 1;
        auto sx = [&](double x) { return m + (x - xmin) / (xmax - xmin) * (w - 2 * m); };
        auto sy = [&](double y) { return h - m - (y - ymin) / (ymax - ymin) * (h - 2 * m); };
        f << "<polyline fill='none' stroke='steelblue' stroke-width='2' points='";
        for (auto& [x, y] : points) f << sx(x) << ',' << sy(y) << ' ';
        f << "'/>\n";
        for (auto& [x, y] : points) {
            f << "<circle cx='" << sx(x) << "' cy='" << sy(y) << "' r='4' fill='steelblue'/>\n";
            f << "<text x='" << sx(x) << "' y='" << sy(y) - 8
              << "' text-anchor='middle' font-size='10'>" << y << "</text>\n";
            f << "<text x='" << sx(x) << "' y='" << h - m + 16
              << "' text-anchor='middle' font-size='10'>" << x << "</text>\n";
        }
    }
    f << "<text x='" << w / 2 << "' y='" << h - 8 << "' text-anchor='middle' font-size='12'>"
      << x_label << "</text>\n";
    f << "<text x='14' y='" << h / 2
      << "' text-anchor='middle' font-size='12' transform='rotate(-90 14 " << h / 2 << ")'>"
      << "NME %</text>\n";
    f << "</svg>\n";
}

}  // namespace detail

// Emits NME-vs-decoder-count and NME-vs-stride plots from whichever rows
// vary those knobs (rows that share all other toggles with the first row of
// each sweep).
inline void write_ablation_plots(const std::vector<AblationRow>& rows,
                                 const std::filesystem::path& dir) {
    std::map<int, double> by_decoders, by_stride;
    for (const AblationRow& r : rows) {
        if (by_decoders.count(r.decoder_layers) == 0) by_decoders[r.decoder_layers] = r.nme_mean;
        if (by_stride.count(r.stride) == 0) by_stride[r.stride] = r.nme_mean;
    }
    std::vector<std::pair<double, double>> pts;
    for (auto& [k, v] : by_decoders) pts.emplace_back(k, v);
    detail::write_svg_plot(dir / "nme_vs_decoders.svg", "NME vs decoder count", "decoder layers",
                           pts);
    pts.clear();
    for (auto& [k, v] : by_stride) pts.emplace_back(k, v);
    detail::write_svg_plot(dir / "nme_vs_stride.svg", "NME vs backbone stride", "stride", pts);
}

}  // namespace barrel
