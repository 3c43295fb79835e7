#include "sadreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace sadreg::synth {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng &rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Independent stream for a named purpose within one seed.
Rng stream(std::uint64_t seed, std::uint64_t purpose) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(purpose)};
    return Rng(seq);
}

enum Purpose : std::uint64_t { kScene = 1, kWarp = 2, kAppearanceA = 3, kAppearanceB = 4, kNoiseA = 5, kNoiseB = 6 };

double similarity_norm(const WarpParams &p) {
    const double a = p.scale * std::cos(p.rotation) - 1.0;
    const double b = p.scale * std::sin(p.rotation);
    return std::hypot(a, b);
}

} // namespace

void AppearanceParams::validate() const {
    if (!(gamma >= 0.5 && gamma <= 2.0)) {
        throw std::invalid_argument("appearance gamma must lie in [0.5, 2.0], got " + std::to_string(gamma));
    }
    if (!(slope >= 0.0) || !std::isfinite(slope)) {
        throw std::invalid_argument("appearance slope must be finite and >= 0 for a monotone map");
    }
    if (!(center >= 0.0 && center <= 1.0)) {
        throw std::invalid_argument("appearance center must lie in [0, 1]");
    }
    if (!std::isfinite(offset) || !(noise_std >= 0.0) || !std::isfinite(noise_std)) {
        throw std::invalid_argument("appearance offset must be finite and noise_std >= 0");
    }
}

double AppearanceParams::map(double v) const {
    const double t = std::pow(std::clamp(v, 0.0, 1.0), gamma);
    double s = t;
    if (slope > 1e-9) {
        const double lo = sigmoid(-slope * center);
        const double hi = sigmoid(slope * (1.0 - center));
        s = (sigmoid(slope * (t - center)) - lo) / (hi - lo);
    }
    return s + offset;
}

double WarpParams::displacement_bound(std::size_t height, std::size_t width) const {
    const double r = std::hypot(0.5 * static_cast<double>(width - 1), 0.5 * static_cast<double>(height - 1));
    double bound = similarity_norm(*this) * r + std::hypot(tx, ty);
    for (const auto &b : bumps) {
        bound += std::hypot(b.ax, b.ay);
    }
    return bound;
}

double WarpParams::jacobian_bound() const {
    // max |d/dx exp(-r^2 / 2 s^2)| = exp(-1/2) / s
    double bound = similarity_norm(*this);
    for (const auto &b : bumps) {
        bound += std::hypot(b.ax, b.ay) * std::exp(-0.5) / bump_width;
    }
    return bound;
}

void WarpParams::validate(std::size_t height, std::size_t width) const {
    if (!(scale > 0.0) || !(bump_width > 0.0) || !(max_displacement >= 0.0)) {
        throw std::invalid_argument("warp: scale and bump_width must be positive");
    }
    if (jacobian_bound() >= 1.0) {
        throw std::invalid_argument("warp: bump amplitude/width combination violates the bijectivity bound (" +
                                    std::to_string(jacobian_bound()) + " >= 1)");
    }
    const double bound = displacement_bound(height, width);
    if (bound > max_displacement) {
        throw std::invalid_argument("warp: displacement bound " + std::to_string(bound) + " px exceeds the cap " +
                                    std::to_string(max_displacement) + " px");
    }
}

void SynthConfig::validate() const {
    if (size < 16) {
        throw std::invalid_argument("synthetic images must be at least 16 px, got " + std::to_string(size));
    }
    if (landmarks < 4) {
        throw std::invalid_argument("at least 4 landmarks are required");
    }
    if (blobs < landmarks) {
        throw std::invalid_argument("blob count must be >= landmark count");
    }
    if (!(appearance.gamma_min >= 0.5 && appearance.gamma_max <= 2.0 && appearance.gamma_min <= appearance.gamma_max)) {
        throw std::invalid_argument("gamma bounds must lie within [0.5, 2.0]");
    }
    if (!(appearance.slope_max >= 0.0) || !(appearance.noise_std >= 0.0)) {
        throw std::invalid_argument("appearance slope and noise bounds must be >= 0");
    }
    if (!(warp.max_scale_delta >= 0.0 && warp.max_scale_delta < 1.0) || !(warp.max_rotation >= 0.0) ||
        !(warp.max_translation >= 0.0) || !(warp.max_bump_amplitude >= 0.0)) {
        throw std::invalid_argument("warp bounds must be non-negative (scale delta < 1)");
    }
    // Every warp the bounds can produce must pass WarpParams::validate.
    for (double s : {1.0 - warp.max_scale_delta, 1.0 + warp.max_scale_delta}) {
        WarpParams worst;
        worst.rotation = warp.max_rotation;
        worst.scale = s;
        worst.tx = warp.max_translation;
        worst.bump_width = warp.bump_width;
        worst.max_displacement = warp.max_displacement;
        worst.bumps.assign(warp.bumps, Bump{0.0, 0.0, warp.max_bump_amplitude, 0.0});
        try {
            worst.validate(size, size);
        } catch (const std::invalid_argument &e) {
            throw std::invalid_argument(std::string("warp bounds admit an invalid warp: ") + e.what());
        }
    }
}

SceneField gen_scene(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t n_landmarks,
                     std::size_t n_blobs, double margin) {
    if (height < 16 || width < 16) {
        throw std::invalid_argument("gen_scene: degenerate size " + std::to_string(height) + "x" +
                                    std::to_string(width) + " (< 16 px)");
    }
    if (n_landmarks < 4) {
        throw std::invalid_argument("gen_scene: need at least 4 landmarks");
    }
    n_blobs = std::max(n_blobs, n_landmarks);
    margin = std::max(margin, 2.0);
    if (2.0 * margin >= static_cast<double>(std::min(height, width)) - 1.0) {
        throw std::invalid_argument("gen_scene: landmark margin too large for the image");
    }
    Rng rng = stream(seed, kScene);
    const double unit = static_cast<double>(std::min(height, width)) / 64.0;
    const double xmax = static_cast<double>(width - 1), ymax = static_cast<double>(height - 1);

    struct Blob {
        double cx, cy, amp, sa, sb, c, s;
    };
    std::vector<Blob> blobs;
    SceneField scene;
    for (std::size_t i = 0; i < n_blobs; ++i) {
        Blob b{};
        b.cx = uniform(rng, margin, xmax - margin);
        b.cy = uniform(rng, margin, ymax - margin);
        b.amp = uniform(rng, 0.4, 1.0) * (uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0);
        b.sa = uniform(rng, 2.0, 5.0) * unit;
        b.sb = uniform(rng, 1.5 * unit, b.sa);
        const double angle = uniform(rng, 0.0, std::numbers::pi);
        b.c = std::cos(angle);
        b.s = std::sin(angle);
        blobs.push_back(b);
        (i < n_landmarks ? scene.landmarks : scene.spare_centers).push_back({b.cx, b.cy});
    }
    struct Wave {
        double kx, ky, phase, amp;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 4; ++i) {
        const double wavelength = uniform(rng, 0.5, 1.5) * static_cast<double>(std::max(height, width));
        const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double k = 2.0 * std::numbers::pi / wavelength;
        waves.push_back({k * std::cos(angle), k * std::sin(angle), uniform(rng, 0.0, 2.0 * std::numbers::pi),
                         uniform(rng, 0.05, 0.2)});
    }

    Tensor field({1, 1, height, width});
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double px = static_cast<double>(x), py = static_cast<double>(y);
            double v = 0.0;
            for (const auto &b : blobs) {
                const double dx = px - b.cx, dy = py - b.cy;
                const double u = b.c * dx + b.s * dy;
                const double w = -b.s * dx + b.c * dy;
                v += b.amp * std::exp(-0.5 * (u * u / (b.sa * b.sa) + w * w / (b.sb * b.sb)));
            }
            for (const auto &wv : waves) {
                v += wv.amp * std::cos(wv.kx * px + wv.ky * py + wv.phase);
            }
            field[y * width + x] = v;
        }
    }
    const auto [lo, hi] = std::minmax_element(field.data().begin(), field.data().end());
    const double lo_v = *lo, range = *hi - *lo;
    for (auto &v : field.data()) {
        v = range > 0.0 ? (v - lo_v) / range : 0.0;
    }
    scene.field = std::move(field);
    return scene;
}

Tensor apply_appearance(const Tensor &field, const AppearanceParams &p, std::uint64_t noise_seed) {
    p.validate();
    Tensor out(field.shape());
    for (std::size_t i = 0; i < field.size(); ++i) {
        out[i] = p.map(field[i]);
    }
    if (p.noise_std > 0.0) {
        Rng rng = stream(noise_seed, kNoiseA);
        std::normal_distribution<double> noise(0.0, p.noise_std);
        for (auto &v : out.data()) {
            v += noise(rng);
        }
    }
    return out;
}

WarpParams sample_warp(std::uint64_t seed, const WarpBounds &bounds, std::size_t height, std::size_t width) {
    Rng rng = stream(seed, kWarp);
    WarpParams p;
    p.rotation = uniform(rng, -bounds.max_rotation, bounds.max_rotation);
    p.scale = 1.0 + uniform(rng, -bounds.max_scale_delta, bounds.max_scale_delta);
    const double t = bounds.max_translation * std::sqrt(uniform(rng, 0.0, 1.0));
    const double ta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    p.tx = t * std::cos(ta);
    p.ty = t * std::sin(ta);
    p.bump_width = bounds.bump_width;
    p.max_displacement = bounds.max_displacement;
    for (std::size_t k = 0; k < bounds.bumps; ++k) {
        Bump b;
        b.cx = uniform(rng, 0.0, static_cast<double>(width - 1));
        b.cy = uniform(rng, 0.0, static_cast<double>(height - 1));
        const double a = bounds.max_bump_amplitude * uniform(rng, 0.0, 1.0);
        const double aa = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        b.ax = a * std::cos(aa);
        b.ay = a * std::sin(aa);
        p.bumps.push_back(b);
    }
    p.validate(height, width);
    return p;
}

AppearanceParams sample_appearance(std::uint64_t seed, const AppearanceBounds &bounds) {
    Rng rng(seed);
    AppearanceParams p;
    p.gamma = std::exp(uniform(rng, std::log(bounds.gamma_min), std::log(bounds.gamma_max)));
    p.slope = uniform(rng, 0.0, bounds.slope_max);
    p.center = uniform(rng, bounds.center_min, bounds.center_max);
    p.offset = uniform(rng, -bounds.max_offset, bounds.max_offset);
    p.noise_std = bounds.noise_std;
    p.validate();
    return p;
}

DisplacementField gen_warp(const WarpParams &p, std::size_t height, std::size_t width) {
    p.validate(height, width);
    DisplacementField f = DisplacementField::zeros(height, width);
    const double cx = 0.5 * static_cast<double>(width - 1), cy = 0.5 * static_cast<double>(height - 1);
    const double c = std::cos(p.rotation), s = std::sin(p.rotation);
    const std::size_t M = height * width;
    const double inv2w = 1.0 / (2.0 * p.bump_width * p.bump_width);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double rx = static_cast<double>(x) - cx, ry = static_cast<double>(y) - cy;
            double ux = cx + p.scale * (c * rx - s * ry) + p.tx - static_cast<double>(x);
            double uy = cy + p.scale * (s * rx + c * ry) + p.ty - static_cast<double>(y);
            for (const auto &b : p.bumps) {
                const double dx = static_cast<double>(x) - b.cx, dy = static_cast<double>(y) - b.cy;
                const double g = std::exp(-(dx * dx + dy * dy) * inv2w);
                ux += b.ax * g;
                uy += b.ay * g;
            }
            f.data[y * width + x] = ux;
            f.data[M + y * width + x] = uy;
        }
    }
    return f;
}

DisplacementField gen_warp(std::uint64_t seed, const WarpBounds &bounds, std::size_t height, std::size_t width) {
    return gen_warp(sample_warp(seed, bounds, height, width), height, width);
}

Inversion invert_point(const DisplacementField &field, Point target, std::size_t max_iterations, double tolerance) {
    Inversion inv;
    Point q = target;
    for (std::size_t it = 0; it < max_iterations; ++it) {
        const Point u = field.sample(q);
        inv.residual = std::hypot(q.x + u.x - target.x, q.y + u.y - target.y);
        inv.iterations = it;
        if (inv.residual <= tolerance) {
            break;
        }
        q = {target.x - u.x, target.y - u.y};
    }
    const Point u = field.sample(q);
    inv.residual = std::hypot(q.x + u.x - target.x, q.y + u.y - target.y);
    inv.point = q;
    return inv;
}

SyntheticPair make_pair(std::uint64_t seed, const SynthConfig &cfg) {
    cfg.validate();
    const std::size_t H = cfg.size, W = cfg.size;
    SyntheticPair pair;
    pair.seed = seed;
    pair.warp = sample_warp(seed, cfg.warp, H, W);
    pair.truth = gen_warp(pair.warp, H, W);
    const double margin = 2.0 + pair.warp.displacement_bound(H, W);
    SceneField scene = gen_scene(seed, H, W, cfg.landmarks, cfg.blobs, margin);

    {
        Rng a = stream(seed, kAppearanceA);
        Rng b = stream(seed, kAppearanceB);
        pair.appearance_a = sample_appearance(a(), cfg.appearance);
        pair.appearance_b = sample_appearance(b(), cfg.appearance);
    }
    const Tensor warped = reg::bilinear_warp(scene.field, pair.truth.data);
    pair.image_a = apply_appearance(scene.field, pair.appearance_a, stream(seed, kNoiseA)());
    pair.image_b = apply_appearance(warped, pair.appearance_b, stream(seed, kNoiseB)());

    const double lo = 2.0;
    const double xmax = static_cast<double>(W - 1) - 2.0, ymax = static_cast<double>(H - 1) - 2.0;
    auto usable = [&](const Inversion &inv) {
        return inv.residual <= 0.01 && inv.point.x >= lo && inv.point.x <= xmax && inv.point.y >= lo &&
               inv.point.y <= ymax;
    };
    std::vector<Point> spares = scene.spare_centers;
    Rng fallback = stream(seed, kScene + 100);
    for (const Point &p : scene.landmarks) {
        Point a = p;
        Inversion inv = invert_point(pair.truth, a);
        for (std::size_t attempt = 0; !usable(inv); ++attempt) {
            if (attempt == 1000) {
                throw std::runtime_error("make_pair: could not place an in-bounds landmark");
            }
            ++pair.resampled_landmarks;
            if (!spares.empty()) {
                a = spares.back();
                spares.pop_back();
            } else {
                a = {uniform(fallback, margin, static_cast<double>(W - 1) - margin),
                     uniform(fallback, margin, static_cast<double>(H - 1) - margin)};
            }
            inv = invert_point(pair.truth, a);
        }
        pair.landmarks_a.push_back(a);
        pair.landmarks_b.push_back(inv.point);
    }
    return pair;
}

std::uint64_t pair_seed(std::uint64_t corpus_seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(corpus_seed), static_cast<std::uint32_t>(corpus_seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
    return Rng(seq)();
}

} // namespace sadreg::synth
