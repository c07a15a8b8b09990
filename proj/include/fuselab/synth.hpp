#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fuselab/common.hpp"
#include "fuselab/image.hpp"

namespace fuselab {

enum class SceneKind { Gradient, Disks, ValueNoise, Composite };

inline SceneKind scene_kind_from_string(const std::string& s) {
    if (s == "gradient") return SceneKind::Gradient;
    if (s == "disks") return SceneKind::Disks;
    if (s == "value-noise") return SceneKind::ValueNoise;
    if (s == "composite") return SceneKind::Composite;
    throw domain_error("unknown scene kind: " + s);
}

struct RegionMasks {
    int w = 0, h = 0;
    std::vector<int> labels;  // 0 = unlabeled background
    int count = 0;            // labeled regions, 1..count

    int at(int x, int y) const { return labels[static_cast<size_t>(y) * w + x]; }
};

// Linear scene radiance with optional labeled regions whose radiance
// levels are strictly increasing with the label index.
struct RadianceMap {
    int w = 0, h = 0;
    std::vector<double> radiance;  // interleaved RGB, >= 0
    RegionMasks masks;
    std::vector<double> region_levels;  // radiance level per label (1-based -> idx 0)

    double at(int x, int y, int c) const {
        return radiance[(static_cast<size_t>(y) * w + x) * 3 + c];
    }
};

namespace detail {

// Bilinearly interpolated lattice noise in [lo, hi].
inline std::vector<double> value_noise(Rng& rng, int w, int h, int spacing, double lo, double hi) {
    int gw = w / spacing + 2, gh = h / spacing + 2;
    std::vector<double> grid(static_cast<size_t>(gw) * gh);
    for (double& g : grid) g = rng.next_in(lo, hi);
    std::vector<double> out(static_cast<size_t>(w) * h);
    for (int y = 0; y < h; ++y) {
        double fy = static_cast<double>(y) / spacing;
        int y0 = static_cast<int>(fy);
        double ty = fy - y0;
        for (int x = 0; x < w; ++x) {
            double fx = static_cast<double>(x) / spacing;
            int x0 = static_cast<int>(fx);
            double tx = fx - x0;
            double a = grid[static_cast<size_t>(y0) * gw + x0];
            double b = grid[static_cast<size_t>(y0) * gw + x0 + 1];
            double c = grid[static_cast<size_t>(y0 + 1) * gw + x0];
            double d = grid[static_cast<size_t>(y0 + 1) * gw + x0 + 1];
            out[static_cast<size_t>(y) * w + x] =
                (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
        }
    }
    return out;
}

// tint keeps saturation nonzero without disturbing the channel order
inline constexpr double kTint[3] = {0.94, 1.0, 1.06};

}  // namespace detail

// Deterministic synthetic radiance. The output spans [peak/dynamic_range,
// peak] with the max/min ratio mapped exactly onto dynamic_range.
inline RadianceMap synth_radiance(std::uint64_t seed, int size, SceneKind kind,
                                  double dynamic_range = 1000.0, double peak = 0.5) {
    if (size < 16) throw domain_error("synth_radiance: size must be >= 16");
    if (!(dynamic_range > 1.0) || dynamic_range > 1e4)
        throw domain_error("synth_radiance: dynamic range must be in (1, 1e4]");

    Rng rng(mix_seed(seed, 0x5ce9e5));
    RadianceMap m;
    m.w = m.h = size;
    m.radiance.assign(static_cast<size_t>(size) * size * 3, 0.0);
    m.masks.w = m.masks.h = size;
    m.masks.labels.assign(static_cast<size_t>(size) * size, 0);

    const double lo = peak / dynamic_range;
    auto set_px = [&](int x, int y, double level) {
        for (int c = 0; c < 3; ++c)
            m.radiance[(static_cast<size_t>(y) * size + x) * 3 + c] = level * detail::kTint[c];
    };

    // geometric gradient along x, so log-radiance is linear
    auto gradient_level = [&](int x) {
        double t = static_cast<double>(x) / (size - 1);
        return lo * std::pow(dynamic_range, t);
    };

    if (kind == SceneKind::Gradient) {
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) set_px(x, y, gradient_level(x));
    } else if (kind == SceneKind::ValueNoise) {
        std::vector<double> coarse = detail::value_noise(rng, size, size, size / 4, 0.0, 1.0);
        std::vector<double> fine = detail::value_noise(rng, size, size, size / 16, 0.0, 1.0);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double t = 0.7 * coarse[static_cast<size_t>(y) * size + x] +
                           0.3 * fine[static_cast<size_t>(y) * size + x];
                set_px(x, y, lo * std::pow(dynamic_range, t));
            }
    } else {
        // disks / composite: textured background plus flat ordered disks
        std::vector<double> noise =
            detail::value_noise(rng, size, size, size / 8, -0.35, 0.35);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double base = kind == SceneKind::Composite ? gradient_level(x)
                                                           : lo * std::sqrt(dynamic_range);
                double level = base * std::exp(noise[static_cast<size_t>(y) * size + x]);
                set_px(x, y, level);
            }

        // region levels: a geometric ladder kept away from both extremes
        // so every adjacent pair is unclipped together in some exposure
        int regions = 5;
        m.masks.count = regions;
        double lev_lo = lo * std::pow(dynamic_range, 0.18);
        double lev_hi = peak * 0.7;
        for (int r = 0; r < regions; ++r) {
            double t = regions == 1 ? 0.5 : static_cast<double>(r) / (regions - 1);
            m.region_levels.push_back(lev_lo * std::pow(lev_hi / lev_lo, t));
        }
        int min_rad = std::max(3, size / 12), max_rad = std::max(4, size / 7);
        for (int r = 0; r < regions; ++r) {
            int rad = static_cast<int>(rng.next_below(max_rad - min_rad + 1)) + min_rad;
            int cx = rad + static_cast<int>(rng.next_below(std::max(1, size - 2 * rad)));
            int cy = rad + static_cast<int>(rng.next_below(std::max(1, size - 2 * rad)));
            for (int y = std::max(0, cy - rad); y < std::min(size, cy + rad + 1); ++y)
                for (int x = std::max(0, cx - rad); x < std::min(size, cx + rad + 1); ++x) {
                    int dx = x - cx, dy = y - cy;
                    if (dx * dx + dy * dy <= rad * rad) {
                        set_px(x, y, m.region_levels[r]);
                        m.masks.labels[static_cast<size_t>(y) * size + x] = r + 1;
                    }
                }
        }
        // later disks may overwrite earlier labels; keep only regions that
        // still own enough pixels for a stable mean
        std::vector<int> areas(regions + 1, 0);
        for (int l : m.masks.labels) areas[l]++;
        for (int r = 1; r <= regions; ++r)
            if (areas[r] < 12)
                for (int& l : m.masks.labels)
                    if (l == r) l = 0;
    }

    // exact dynamic-range normalization in log space
    double mn = m.radiance[0], mx = m.radiance[0];
    for (double v : m.radiance) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    if (mx > mn) {
        double gamma = std::log(dynamic_range) / std::log(mx / mn);
        double scale = peak / std::pow(mx, gamma);
        for (double& v : m.radiance) v = scale * std::pow(v, gamma);
        for (double& v : m.region_levels) v = scale * std::pow(v * detail::kTint[1], gamma);
    }
    return m;
}

// Camera model: gamma-law response with hard clipping, quantized to the
// 8-bit grid the way the file formats store it.
inline Image expose(const RadianceMap& r, double dt, double gamma = 2.2) {
    if (!(dt > 0.0)) throw domain_error("expose: dt must be > 0");
    Image img(r.w, r.h);
    double inv_gamma = 1.0 / gamma;
    for (size_t i = 0; i < r.radiance.size(); ++i) {
        double v = clamp01(std::pow(dt * r.radiance[i], inv_gamma));
        img.v[i] = std::lround(v * 255.0) / 255.0;
    }
    return img;
}

inline ExposureStack make_bracket(const RadianceMap& r, const std::vector<double>& times,
                                  double gamma = 2.2) {
    ExposureStack stack;
    for (size_t k = 0; k < times.size(); ++k) {
        if (k > 0 && !(times[k - 1] < times[k]))
            throw domain_error("make_bracket: times must be strictly increasing");
        stack.images.push_back(expose(r, times[k], gamma));
        stack.times.push_back(times[k]);
    }
    stack.validate();
    return stack;
}

struct SynthScene {
    RadianceMap radiance;
    ExposureStack stack;
};

// One reproducible scene for a given bracket. The radiance peak is tied
// to the shortest exposure so the brightest content sits just inside the
// response range there.
inline SynthScene make_scene(std::uint64_t seed, int size, SceneKind kind,
                             const std::vector<double>& times, double dynamic_range = 1000.0) {
    if (times.empty()) throw domain_error("make_scene: need at least one exposure time");
    double peak = 0.5 / times.front();
    SynthScene s;
    s.radiance = synth_radiance(seed, size, kind, dynamic_range, peak);
    s.stack = make_bracket(s.radiance, times);
    return s;
}

inline std::vector<SynthScene> make_corpus(std::uint64_t seed, int scenes, int size,
                                           SceneKind kind, const std::vector<double>& times,
                                           double dynamic_range = 1000.0) {
    std::vector<SynthScene> out;
    out.reserve(scenes);
    for (int i = 0; i < scenes; ++i)
        out.push_back(make_scene(mix_seed(seed, 1000 + i), size, kind, times, dynamic_range));
    return out;
}

}  // namespace fuselab
