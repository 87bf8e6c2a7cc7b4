#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "barrel/rng.hpp"
#include "barrel/tensor.hpp"

namespace barrel {

struct degenerate_normalization_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Landmark {
    double x = 0, y = 0;
};

// N points in normalized [0,1]^2 image coordinates. Augmentation may push
// points outside the unit square; they are stored unclamped.
struct LandmarkSet {
    std::vector<Landmark> points;

    int count() const { return static_cast<int>(points.size()); }

    bool any_outside_unit() const {
        for (const auto& p : points)
            if (p.x < 0 || p.x > 1 || p.y < 0 || p.y > 1) return true;
        return false;
    }
};

// Landmark layout: [0..contour) ellipse contour, then left eye, right eye,
// nose, and mouth points. mouth = max(1, round((N-3)/9)); the default N=12
// gives 8 contour + 2 eyes + nose + 1 mouth.
struct LandmarkLayout {
    int contour = 0, mouth = 0;
    int left_eye = 0, right_eye = 0, nose = 0, mouth_first = 0;

    static LandmarkLayout for_count(int n) {
        if (n < 8)
            throw config_error("num_landmarks must be >= 8 (minimum keypoint template), got " +
                               std::to_string(n));
        LandmarkLayout l;
        l.mouth = std::max(1, (n - 3 + 4) / 9);
        l.contour = n - 3 - l.mouth;
        l.left_eye = l.contour;
        l.right_eye = l.contour + 1;
        l.nose = l.contour + 2;
        l.mouth_first = l.contour + 3;
        return l;
    }
};

struct DatasetConfig {
    int num_landmarks = 12;
    int image_size = 64;
    int channels = 1;
    int train_count = 200;
    int test_count = 64;
    int eye_left = 8;
    int eye_right = 9;
    double center_jitter = 0.07;  // face center offset, +- fraction of image
    double scale_jitter = 0.15;   // relative ellipse axis scale range
    double noise_level = 0.02;    // additive pixel noise amplitude

    void validate() const {
        LandmarkLayout::for_count(num_landmarks);
        if (image_size <= 0 || image_size % 4 != 0)
            throw config_error("image_size must be a positive multiple of 4");
        if (channels != 1 && channels != 3) throw config_error("channels must be 1 or 3");
        if (eye_left == eye_right || eye_left < 0 || eye_right < 0 ||
            eye_left >= num_landmarks || eye_right >= num_landmarks)
            throw config_error("eye_indices must be distinct and < num_landmarks");
    }
};

// Geometry the renderer drew; kept on the sample so tests can compare
// landmark ground truth against the actual drawn primitives.
struct FaceGeometry {
    double cx = 0, cy = 0, rx = 0, ry = 0;
    Landmark eye_left, eye_right;
    double eye_radius = 0;
};

struct Sample {
    Tensor<float> image;  // [c x H x W], values in [0,1]
    LandmarkSet landmarks;
    uint64_t seed = 0;
    FaceGeometry geometry;
};

namespace detail {

inline void darken(float& px, double amount) {
    px = static_cast<float>(std::max(0.0, static_cast<double>(px) - amount));
}

}  // namespace detail

// Renders a randomized face schematic: head ellipse outline, two filled eye
// blobs, a nose dot, and a mouth bar. Landmarks are exact functions of the
// drawn geometry. Pure in (cfg, seed).
inline Sample generate_sample(const DatasetConfig& cfg, uint64_t seed) {
    cfg.validate();
    const LandmarkLayout layout = LandmarkLayout::for_count(cfg.num_landmarks);
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);

    FaceGeometry g;
    g.cx = 0.5 + cfg.center_jitter * u(rng);
    g.cy = 0.52 + cfg.center_jitter * u(rng);
    g.rx = 0.28 * (1.0 + cfg.scale_jitter * u(rng));
    g.ry = 0.36 * (1.0 + cfg.scale_jitter * u(rng));
    const double eye_dx = 0.45 * g.rx, eye_dy = 0.28 * g.ry;
    g.eye_left = {g.cx - eye_dx, g.cy - eye_dy};
    g.eye_right = {g.cx + eye_dx, g.cy - eye_dy};
    g.eye_radius = 0.14 * g.rx;
    const Landmark nose{g.cx, g.cy + 0.08 * g.ry};
    const double mouth_y = g.cy + 0.48 * g.ry;
    const double mouth_half = 0.38 * g.rx;

    Sample s;
    s.seed = seed;
    s.geometry = g;
    s.landmarks.points.resize(static_cast<size_t>(cfg.num_landmarks));
    for (int k = 0; k < layout.contour; ++k) {
        const double theta = 2.0 * M_PI * k / layout.contour;
        s.landmarks.points[static_cast<size_t>(k)] = {g.cx + g.rx * std::cos(theta),
                                                      g.cy + g.ry * std::sin(theta)};
    }
    s.landmarks.points[static_cast<size_t>(layout.left_eye)] = g.eye_left;
    s.landmarks.points[static_cast<size_t>(layout.right_eye)] = g.eye_right;
    s.landmarks.points[static_cast<size_t>(layout.nose)] = nose;
    for (int j = 0; j < layout.mouth; ++j) {
        const double t = layout.mouth == 1 ? 0.0 : 2.0 * j / (layout.mouth - 1) - 1.0;
        s.landmarks.points[static_cast<size_t>(layout.mouth_first + j)] = {
            g.cx + mouth_half * t, mouth_y};
    }

    const int n = cfg.image_size;
    s.image = Tensor<float>({cfg.channels, n, n}, 0.9f);
    const double px_size = 1.0 / n;
    const double band = 1.2 * px_size;
    for (int py = 0; py < n; ++py)
        for (int px = 0; px < n; ++px) {
            const double x = (px + 0.5) * px_size, y = (py + 0.5) * px_size;
            double ink = 0.0;
            // ellipse outline
            const double dx = (x - g.cx) / g.rx, dy = (y - g.cy) / g.ry;
            const double r = std::sqrt(dx * dx + dy * dy);
            const double edge_dist = std::abs(r - 1.0) * std::min(g.rx, g.ry);
            ink += 0.7 * std::exp(-0.5 * (edge_dist / band) * (edge_dist / band));
            // eyes
            for (const Landmark& e : {g.eye_left, g.eye_right}) {
                const double de = std::hypot(x - e.x, y - e.y);
                if (de < g.eye_radius)
                    ink += 0.8;
                else
                    ink += 0.8 * std::exp(-0.5 * std::pow((de - g.eye_radius) / band, 2.0));
            }
            // nose dot
            const double dn = std::hypot(x - nose.x, y - nose.y);
            ink += 0.6 * std::exp(-0.5 * std::pow(dn / (1.5 * px_size), 2.0));
            // mouth bar
            const double mx = std::max(0.0, std::abs(x - g.cx) - mouth_half);
            const double my = std::abs(y - mouth_y);
            const double dm = std::hypot(mx, my);
            ink += 0.7 * std::exp(-0.5 * std::pow(dm / band, 2.0));
            for (int c = 0; c < cfg.channels; ++c)
                detail::darken(s.image.at(c, py, px), ink);
        }

    if (cfg.noise_level > 0) {
        std::uniform_real_distribution<double> nz(-cfg.noise_level, cfg.noise_level);
        for (float& v : s.image.data())
            v = static_cast<float>(std::clamp(static_cast<double>(v) + nz(rng), 0.0, 1.0));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
    double p_translate = 0.5;
    double max_translate = 0.10;  // fraction of the image
    double p_flip = 0.5;
    double p_rotate = 0.5;
    double max_rotate_deg = 30.0;
    double p_occlude = 0.4;
    double occlude_min = 0.10, occlude_max = 0.35;  // rectangle side, fraction
    double p_blur = 0.3;
    std::vector<int> flip_table;  // landmark index i maps to flip_table[i]
};

// Left-right correspondence for the generator's layout. Contour mirroring
// needs an even contour count; otherwise the caller must supply a table.
inline std::vector<int> default_flip_table(int num_landmarks) {
    const LandmarkLayout l = LandmarkLayout::for_count(num_landmarks);
    if (l.contour % 2 != 0)
        throw config_error("no default flip table for odd contour count " +
                           std::to_string(l.contour));
    std::vector<int> t(static_cast<size_t>(num_landmarks));
    for (int k = 0; k < l.contour; ++k)
        t[static_cast<size_t>(k)] = ((l.contour / 2 - k) % l.contour + l.contour) % l.contour;
    t[static_cast<size_t>(l.left_eye)] = l.right_eye;
    t[static_cast<size_t>(l.right_eye)] = l.left_eye;
    t[static_cast<size_t>(l.nose)] = l.nose;
    for (int j = 0; j < l.mouth; ++j)
        t[static_cast<size_t>(l.mouth_first + j)] = l.mouth_first + (l.mouth - 1 - j);
    return t;
}

namespace detail {

constexpr float kFill = 0.9f;  // background shade used for exposed borders

inline float bilinear(const Tensor<float>& img, int c, double py, double px) {
    const int h = img.extent(1), w = img.extent(2);
    const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
    const double fx = px - x0, fy = py - y0;
    auto get = [&](int y, int x) -> float {
        if (y < 0 || y >= h || x < 0 || x >= w) return kFill;
        return img.at(c, y, x);
    };
    return static_cast<float>((1 - fy) * ((1 - fx) * get(y0, x0) + fx * get(y0, x0 + 1)) +
                              fy * ((1 - fx) * get(y0 + 1, x0) + fx * get(y0 + 1, x0 + 1)));
}

}  // namespace detail

// Rotates about the image center by `angle` (radians, counter-clockwise in
// image coordinates) then translates by (tx, ty) in normalized units. The
// image is resampled with the inverse map and bilinear interpolation;
// landmark coordinates get the exact forward map.
inline Sample apply_rigid(const Sample& sample, double angle, double tx, double ty) {
    Sample out = sample;
    const int c = out.image.extent(0), h = out.image.extent(1), w = out.image.extent(2);
    const double ca = std::cos(angle), sa = std::sin(angle);
    Tensor<float> warped(out.image.shape());
    // inverse map: source = R^-1 (dst - t - center) + center
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double xd = (x + 0.5) / w - tx - 0.5, yd = (y + 0.5) / h - ty - 0.5;
                const double xs = ca * xd + sa * yd + 0.5, ys = -sa * xd + ca * yd + 0.5;
                warped.at(ch, y, x) = detail::bilinear(out.image, ch, ys * h - 0.5, xs * w - 0.5);
            }
    out.image = warped;
    for (Landmark& p : out.landmarks.points) {
        const double xd = p.x - 0.5, yd = p.y - 0.5;
        p.x = ca * xd - sa * yd + 0.5 + tx;
        p.y = sa * xd + ca * yd + 0.5 + ty;
    }
    return out;
}

inline Sample augment(const Sample& sample, const AugmentConfig& aug, uint64_t seed) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Sample out = sample;
    // tensors share storage on copy; occlusion writes in place, so detach
    out.image = Tensor<float>(sample.image.shape());
    out.image.data() = sample.image.data();
    const int c = out.image.extent(0), h = out.image.extent(1), w = out.image.extent(2);

    if (aug.p_flip > 0 && u01(rng) < aug.p_flip) {
        if (aug.flip_table.size() != out.landmarks.points.size())
            throw config_error("flipping enabled but flip correspondence table missing or sized " +
                               std::to_string(aug.flip_table.size()));
        Tensor<float> flipped(out.image.shape());
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) flipped.at(ch, y, x) = out.image.at(ch, y, w - 1 - x);
        out.image = flipped;
        LandmarkSet remapped = out.landmarks;
        for (size_t i = 0; i < remapped.points.size(); ++i) {
            Landmark p = out.landmarks.points[i];
            p.x = 1.0 - p.x;
            remapped.points[static_cast<size_t>(aug.flip_table[i])] = p;
        }
        out.landmarks = remapped;
    }

    double angle = 0, tx = 0, ty = 0;
    if (aug.p_rotate > 0 && u01(rng) < aug.p_rotate)
        angle = aug.max_rotate_deg * M_PI / 180.0 * u(rng);
    if (aug.p_translate > 0 && u01(rng) < aug.p_translate) {
        tx = aug.max_translate * u(rng);
        ty = aug.max_translate * u(rng);
    }
    if (angle != 0 || tx != 0 || ty != 0) out = apply_rigid(out, angle, tx, ty);

    if (aug.p_occlude > 0 && u01(rng) < aug.p_occlude) {
        std::uniform_real_distribution<double> us(aug.occlude_min, aug.occlude_max);
        const int ow = std::max(1, static_cast<int>(us(rng) * w));
        const int oh = std::max(1, static_cast<int>(us(rng) * h));
        std::uniform_int_distribution<int> ux(0, w - ow), uy(0, h - oh);
        const int x0 = ux(rng), y0 = uy(rng);
        std::uniform_real_distribution<double> up(0.0, 1.0);
        for (int ch = 0; ch < c; ++ch)
            for (int y = y0; y < y0 + oh; ++y)
                for (int x = x0; x < x0 + ow; ++x)
                    out.image.at(ch, y, x) = static_cast<float>(up(rng));
        // occluded landmarks keep their coordinates
    }

    if (aug.p_blur > 0 && u01(rng) < aug.p_blur) {
        Tensor<float> blurred(out.image.shape());
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double acc = 0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int yy = std::clamp(y + dy, 0, h - 1);
                            const int xx = std::clamp(x + dx, 0, w - 1);
                            acc += out.image.at(ch, yy, xx);
                        }
                    blurred.at(ch, y, x) = static_cast<float>(acc / 9.0);
                }
        out.image = blurred;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

inline double l1_loss_value(const LandmarkSet& pred, const LandmarkSet& gt) {
    if (pred.count() != gt.count())
        throw dim_error("l1_loss: " + std::to_string(pred.count()) + " vs " +
                        std::to_string(gt.count()) + " landmarks");
    double acc = 0;
    for (int i = 0; i < pred.count(); ++i) {
        acc += std::abs(pred.points[static_cast<size_t>(i)].x - gt.points[static_cast<size_t>(i)].x);
        acc += std::abs(pred.points[static_cast<size_t>(i)].y - gt.points[static_cast<size_t>(i)].y);
    }
    return acc / (2.0 * pred.count());
}

// Mean per-landmark euclidean error normalized by the inter-ocular distance
// of the ground truth. Returns a fraction; multiply by 100 to report percent.
inline double nme(const LandmarkSet& pred, const LandmarkSet& gt, int eye_left, int eye_right) {
    if (pred.count() != gt.count())
        throw dim_error("nme: " + std::to_string(pred.count()) + " vs " +
                        std::to_string(gt.count()) + " landmarks");
    const Landmark& a = gt.points.at(static_cast<size_t>(eye_left));
    const Landmark& b = gt.points.at(static_cast<size_t>(eye_right));
    const double d = std::hypot(a.x - b.x, a.y - b.y);
    if (d == 0.0) throw degenerate_normalization_error("inter-ocular distance is zero");
    double acc = 0;
    for (int i = 0; i < pred.count(); ++i)
        acc += std::hypot(pred.points[static_cast<size_t>(i)].x - gt.points[static_cast<size_t>(i)].x,
                          pred.points[static_cast<size_t>(i)].y - gt.points[static_cast<size_t>(i)].y);
    return acc / (pred.count() * d);
}

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
    DatasetConfig config;
    std::vector<Sample> samples;
};

// Per-sample seeds come from a splitmix of the master seed with a stream id
// per split, so train/test never share streams.
inline Dataset generate_dataset(const DatasetConfig& cfg, uint64_t master_seed, bool train_split) {
    cfg.validate();
    Dataset ds;
    ds.config = cfg;
    const uint64_t stream = train_split ? 1 : 2;
    const int count = train_split ? cfg.train_count : cfg.test_count;
    ds.samples.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i)
        ds.samples.push_back(generate_sample(cfg, derive_seed(master_seed, stream, static_cast<uint64_t>(i))));
    return ds;
}

static_assert(std::endian::native == std::endian::little,
              "dataset/checkpoint byte layout assumes a little-endian host");

// Byte layout per record: image as c*H*W float32 LE (row-major), then the N
// landmark pairs as float32 LE (x, y) interleaved.
inline void export_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt");
    manifest << "num_landmarks=" << ds.config.num_landmarks << "\n"
             << "image_size=" << ds.config.image_size << "\n"
             << "channels=" << ds.config.channels << "\n"
             << "eye_left=" << ds.config.eye_left << "\n"
             << "eye_right=" << ds.config.eye_right << "\n"
             << "count=" << ds.samples.size() << "\n";
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%06zu.bin", i);
        std::ofstream f(dir / name, std::ios::binary);
        const Sample& s = ds.samples[i];
        f.write(reinterpret_cast<const char*>(s.image.data().data()),
                static_cast<std::streamsize>(s.image.size() * sizeof(float)));
        for (const Landmark& p : s.landmarks.points) {
            const float xy[2] = {static_cast<float>(p.x), static_cast<float>(p.y)};
            f.write(reinterpret_cast<const char*>(xy), sizeof xy);
        }
    }
}

inline Dataset import_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw config_error("dataset manifest not found in " + dir.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(manifest, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    Dataset ds;
    ds.config.num_landmarks = std::stoi(kv.at("num_landmarks"));
    ds.config.image_size = std::stoi(kv.at("image_size"));
    ds.config.channels = std::stoi(kv.at("channels"));
    ds.config.eye_left = std::stoi(kv.at("eye_left"));
    ds.config.eye_right = std::stoi(kv.at("eye_right"));
    const size_t count = static_cast<size_t>(std::stol(kv.at("count")));
    const int c = ds.config.channels, n = ds.config.image_size, nl = ds.config.num_landmarks;
    for (size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%06zu.bin", i);
        std::ifstream f(dir / name, std::ios::binary);
        if (!f) throw config_error("dataset record missing: " + (dir / name).string());
        Sample s;
        s.image = Tensor<float>({c, n, n});
        f.read(reinterpret_cast<char*>(s.image.data().data()),
               static_cast<std::streamsize>(s.image.size() * sizeof(float)));
        s.landmarks.points.resize(static_cast<size_t>(nl));
        for (Landmark& p : s.landmarks.points) {
            float xy[2];
            f.read(reinterpret_cast<char*>(xy), sizeof xy);
            p.x = xy[0];
            p.y = xy[1];
        }
        if (!f) throw config_error("truncated dataset record: " + (dir / name).string());
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// Conversions between landmark sets and [N x 2] tensors.
template <typename T>
Tensor<T> landmarks_to_tensor(const LandmarkSet& lm) {
    Tensor<T> t({lm.count(), 2});
    for (int i = 0; i < lm.count(); ++i) {
        t.at(i, 0) = static_cast<T>(lm.points[static_cast<size_t>(i)].x);
        t.at(i, 1) = static_cast<T>(lm.points[static_cast<size_t>(i)].y);
    }
    return t;
}

template <typename T>
LandmarkSet tensor_to_landmarks(const Tensor<T>& t) {
    if (t.shape().size() != 2 || t.extent(1) != 2)
        throw dim_error("tensor_to_landmarks: need [N x 2], got " + shape_str(t.shape()));
    LandmarkSet lm;
    lm.points.resize(static_cast<size_t>(t.extent(0)));
    for (int i = 0; i < t.extent(0); ++i)
        lm.points[static_cast<size_t>(i)] = {static_cast<double>(t.at(i, 0)),
                                             static_cast<double>(t.at(i, 1))};
    return lm;
}

template <typename T>
Tensor<T> image_to_tensor(const Tensor<float>& img) {
    if constexpr (std::is_same_v<T, float>) return img;
    Tensor<T> t(img.shape());
    for (size_t i = 0; i < img.size(); ++i) t.data()[i] = static_cast<T>(img.data()[i]);
    return t;
}

}  // namespace barrel
