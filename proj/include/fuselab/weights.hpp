#pragma once

#include <cmath>
#include <vector>

#include "fuselab/image.hpp"

namespace fuselab {

// Floor added to the raw quality product so the per-pixel normalization
// never divides by zero; at pixels where every image is flat this yields
// uniform weights.
inline constexpr double kWeightFloor = 1e-12;

inline int clampi(int x, int lo, int hi) { return x < lo ? lo : (x > hi ? hi : x); }

// |3x3 Laplacian| of the luminance, replicate-padded.
inline Plane contrast_map(const Image& img) {
    Plane y = to_luminance(img);
    Plane out(img.w, img.h);
    for (int r = 0; r < img.h; ++r) {
        int up = clampi(r - 1, 0, img.h - 1), dn = clampi(r + 1, 0, img.h - 1);
        for (int c = 0; c < img.w; ++c) {
            int lf = clampi(c - 1, 0, img.w - 1), rt = clampi(c + 1, 0, img.w - 1);
            double lap = y.at(c, up) + y.at(c, dn) + y.at(lf, r) + y.at(rt, r) - 4.0 * y.at(c, r);
            out.at(c, r) = std::abs(lap);
        }
    }
    return out;
}

// Population standard deviation over the three channels.
inline Plane saturation_map(const Image& img) {
    Plane out(img.w, img.h);
    for (size_t p = 0; p < img.pixels(); ++p) {
        double r = img.v[3 * p], g = img.v[3 * p + 1], b = img.v[3 * p + 2];
        double mu = (r + g + b) / 3.0;
        double var = ((r - mu) * (r - mu) + (g - mu) * (g - mu) + (b - mu) * (b - mu)) / 3.0;
        out.v[p] = std::sqrt(var);
    }
    return out;
}

// Product of per-channel Gaussians centered at 0.5, width 0.2.
inline Plane well_exposedness_map(const Image& img) {
    constexpr double inv_two_sigma2 = 1.0 / (2.0 * 0.2 * 0.2);
    Plane out(img.w, img.h);
    for (size_t p = 0; p < img.pixels(); ++p) {
        double e = 1.0;
        for (int c = 0; c < 3; ++c) {
            double d = img.v[3 * p + c] - 0.5;
            e *= std::exp(-d * d * inv_two_sigma2);
        }
        out.v[p] = e;
    }
    return out;
}

inline Plane raw_weight(const Image& img) {
    Plane c = contrast_map(img);
    Plane s = saturation_map(img);
    Plane e = well_exposedness_map(img);
    Plane out(img.w, img.h);
    for (size_t p = 0; p < out.size(); ++p) out.v[p] = c.v[p] * s.v[p] * e.v[p] + kWeightFloor;
    return out;
}

// Per-pixel normalization so the maps sum to one everywhere.
inline std::vector<Plane> normalize_weights(const std::vector<Plane>& raws) {
    if (raws.empty()) throw domain_error("normalize_weights: no weight planes");
    int w = raws[0].w, h = raws[0].h;
    for (const Plane& p : raws)
        if (p.w != w || p.h != h) throw shape_error("normalize_weights: dimension mismatch");

    std::vector<Plane> out(raws.size(), Plane(w, h));
    size_t n = raws[0].size();
    for (size_t p = 0; p < n; ++p) {
        double denom = 0.0;
        for (const Plane& r : raws) denom += r.v[p];
        if (denom < 1e-300) {
            for (Plane& o : out) o.v[p] = 1.0 / static_cast<double>(raws.size());
        } else {
            for (size_t k = 0; k < raws.size(); ++k) out[k].v[p] = raws[k].v[p] / denom;
        }
    }
    return out;
}

namespace detail {

// Box mean over (2r+1)^2 windows with replicate padding, via running sums
// on a padded copy.
inline Plane box_mean(const Plane& p, int radius) {
    int w = p.w, h = p.h, r = radius;
    int pw = w + 2 * r, ph = h + 2 * r;
    std::vector<double> pad(static_cast<size_t>(pw) * ph);
    for (int y = 0; y < ph; ++y) {
        int sy = clampi(y - r, 0, h - 1);
        for (int x = 0; x < pw; ++x) pad[static_cast<size_t>(y) * pw + x] = p.at(clampi(x - r, 0, w - 1), sy);
    }
    // horizontal pass
    std::vector<double> tmp(static_cast<size_t>(w) * ph);
    for (int y = 0; y < ph; ++y) {
        const double* row = &pad[static_cast<size_t>(y) * pw];
        double s = 0.0;
        for (int x = 0; x < 2 * r + 1; ++x) s += row[x];
        tmp[static_cast<size_t>(y) * w] = s;
        for (int x = 1; x < w; ++x) {
            s += row[x + 2 * r] - row[x - 1];
            tmp[static_cast<size_t>(y) * w + x] = s;
        }
    }
    // vertical pass
    Plane out(w, h);
    double inv_area = 1.0 / ((2.0 * r + 1) * (2.0 * r + 1));
    for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int y = 0; y < 2 * r + 1; ++y) s += tmp[static_cast<size_t>(y) * w + x];
        out.at(x, 0) = s * inv_area;
        for (int y = 1; y < h; ++y) {
            s += tmp[static_cast<size_t>(y + 2 * r) * w + x] - tmp[static_cast<size_t>(y - 1) * w + x];
            out.at(x, y) = s * inv_area;
        }
    }
    return out;
}

}  // namespace detail

// Classical guided image filter (local linear model per window).
inline Plane guided_filter(const Plane& guide, const Plane& input, int radius, double eps) {
    if (guide.w != input.w || guide.h != input.h)
        throw shape_error("guided_filter: guide/input dimension mismatch");
    if (radius < 1) throw domain_error("guided_filter: radius must be >= 1");
    if (!(eps > 0.0)) throw domain_error("guided_filter: eps must be > 0");

    Plane gg(guide.w, guide.h), gi(guide.w, guide.h);
    for (size_t p = 0; p < guide.size(); ++p) {
        gg.v[p] = guide.v[p] * guide.v[p];
        gi.v[p] = guide.v[p] * input.v[p];
    }
    Plane mean_g = detail::box_mean(guide, radius);
    Plane mean_i = detail::box_mean(input, radius);
    Plane corr_gg = detail::box_mean(gg, radius);
    Plane corr_gi = detail::box_mean(gi, radius);

    Plane a(guide.w, guide.h), b(guide.w, guide.h);
    for (size_t p = 0; p < guide.size(); ++p) {
        double var = corr_gg.v[p] - mean_g.v[p] * mean_g.v[p];
        double cov = corr_gi.v[p] - mean_g.v[p] * mean_i.v[p];
        a.v[p] = cov / (var + eps);
        b.v[p] = mean_i.v[p] - a.v[p] * mean_g.v[p];
    }
    Plane mean_a = detail::box_mean(a, radius);
    Plane mean_b = detail::box_mean(b, radius);
    Plane out(guide.w, guide.h);
    for (size_t p = 0; p < guide.size(); ++p) out.v[p] = mean_a.v[p] * guide.v[p] + mean_b.v[p];
    return out;
}

inline int default_guided_radius(int w, int h) {
    int r = std::min(w, h) / 16;
    return r < 2 ? 2 : r;
}

struct WeightSet {
    std::vector<Plane> raw;         // quality products, one per measure image
    std::vector<Plane> normalized;  // sum to one per pixel
    std::vector<Plane> smoothed;    // guided-filtered and re-normalized
};

// Quality weights of the measurement set: raw product -> per-pixel
// normalization -> guided filtering (guide = each image's luminance) ->
// re-normalization, since smoothing breaks the partition of unity.
inline WeightSet smoothed_weights(const SceneSets& sets, int radius = 0, double eps = 1e-2) {
    WeightSet ws;
    const int w = sets.stack.width(), h = sets.stack.height();
    if (radius <= 0) radius = default_guided_radius(w, h);

    for (size_t k = 0; k < sets.measure_count(); ++k) ws.raw.push_back(raw_weight(sets.measure_image(k)));
    ws.normalized = normalize_weights(ws.raw);

    std::vector<Plane> filtered;
    for (size_t k = 0; k < sets.measure_count(); ++k) {
        Plane guide = to_luminance(sets.measure_image(k));
        Plane f = guided_filter(guide, ws.normalized[k], radius, eps);
        // the filter can ring slightly negative; weights must stay >= 0
        for (double& x : f.v) x = x < 0.0 ? 0.0 : x;
        filtered.push_back(std::move(f));
    }
    ws.smoothed = normalize_weights(filtered);
    return ws;
}

}  // namespace fuselab
