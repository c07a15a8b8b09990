#pragma once

#include <cmath>
#include <vector>

#include "fuselab/image.hpp"
#include "fuselab/weights.hpp"

namespace fuselab {

// Constants of the loss stack. sigma_g/sigma_l/tau parameterize the
// intensity weight; C1/C2 are the usual SSIM stabilizers for unit range.
struct LossConfig {
    double lambda = 10.0;
    int patch_size = 8;
    int stride = 4;
    double sigma_g = 0.2;
    double sigma_l = 0.5;
    double tau = 0.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;

    void validate() const {
        if (lambda < 0) throw domain_error("loss: lambda must be >= 0");
        if (patch_size < 2) throw domain_error("loss: patch_size must be >= 2");
        if (stride < 1 || stride > patch_size) throw domain_error("loss: stride must be in [1, patch_size]");
        if (!(sigma_g > 0) || !(sigma_l > 0)) throw domain_error("loss: sigma_g/sigma_l must be > 0");
        if (!(c1 > 0) || !(c2 > 0)) throw domain_error("loss: C1/C2 must be > 0");
    }
};

inline constexpr double kDegenerateContrast = 1e-12;

// Top-left corners of the row-major sliding windows.
struct PatchGrid {
    int patch = 0, stride = 0, nx = 0, ny = 0, w = 0;
    int count() const { return nx * ny; }
    int x0(int i) const { return (i % nx) * stride; }
    int y0(int i) const { return (i / nx) * stride; }
};

inline PatchGrid make_patch_grid(int w, int h, int patch, int stride) {
    if (patch > w || patch > h)
        throw domain_error("patch size " + std::to_string(patch) + " exceeds image " +
                           std::to_string(w) + "x" + std::to_string(h));
    PatchGrid g;
    g.patch = patch;
    g.stride = stride;
    g.nx = (w - patch) / stride + 1;
    g.ny = (h - patch) / stride + 1;
    g.w = w;
    return g;
}

inline std::vector<std::vector<double>> extract_patches(const Plane& p, int size, int stride) {
    PatchGrid g = make_patch_grid(p.w, p.h, size, stride);
    std::vector<std::vector<double>> out(g.count());
    for (int i = 0; i < g.count(); ++i) {
        out[i].resize(static_cast<size_t>(size) * size);
        int px = g.x0(i), py = g.y0(i);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                out[i][static_cast<size_t>(y) * size + x] = p.at(px + x, py + y);
    }
    return out;
}

// patch = c*s + l: mean intensity, centered L2 contrast, unit structure.
struct PatchStats {
    double l = 0.0;
    double c = 0.0;
    std::vector<double> s;      // unit-norm, zero vector when degenerate
    std::vector<double> patch;  // the original values
    double inf_norm = 0.0;      // max |patch - l|, the structure weight
    bool degenerate = false;
};

inline PatchStats decompose_patch(const std::vector<double>& patch) {
    PatchStats st;
    st.patch = patch;
    const size_t n = patch.size();
    double sum = 0.0;
    for (double x : patch) sum += x;
    st.l = sum / static_cast<double>(n);
    double sq = 0.0, inf = 0.0;
    st.s.resize(n);
    for (size_t i = 0; i < n; ++i) {
        double d = patch[i] - st.l;
        st.s[i] = d;
        sq += d * d;
        inf = std::max(inf, std::abs(d));
    }
    st.c = std::sqrt(sq);
    st.inf_norm = inf;
    if (st.c < kDegenerateContrast) {
        st.degenerate = true;
        st.c = 0.0;
        std::fill(st.s.begin(), st.s.end(), 0.0);
    } else {
        for (double& x : st.s) x /= st.c;
    }
    return st;
}

struct DesiredPatch {
    double c_hat = 0.0;
    double l_hat = 0.0;
    std::vector<double> s_hat;  // unit norm, or zero when all inputs degenerate
    std::vector<double> patch;  // c_hat * s_hat + l_hat
    double mean = 0.0;          // equals l_hat (s_hat has zero mean)
    double var = 0.0;           // population variance of the desired patch
};

inline double intensity_weight(double global_mean, double local_mean, const LossConfig& cfg) {
    double dg = global_mean - cfg.tau;
    double dl = local_mean - cfg.tau;
    return std::exp(-dg * dg / (2.0 * cfg.sigma_g * cfg.sigma_g) -
                    dl * dl / (2.0 * cfg.sigma_l * cfg.sigma_l));
}

// Combines the aligned patches of all measurement images: highest
// contrast, infinity-norm-weighted structure, intensity-weighted mean.
inline DesiredPatch desired_patch(const std::vector<PatchStats>& stats,
                                  const std::vector<double>& global_means,
                                  const LossConfig& cfg) {
    if (stats.empty()) throw domain_error("desired_patch: no input patches");
    const size_t n = stats[0].patch.size();

    DesiredPatch d;
    std::vector<double> s_bar(n, 0.0);
    double s_weight = 0.0, l_num = 0.0, l_den = 0.0;
    for (size_t k = 0; k < stats.size(); ++k) {
        const PatchStats& st = stats[k];
        d.c_hat = std::max(d.c_hat, st.c);
        for (size_t i = 0; i < n; ++i) s_bar[i] += st.inf_norm * st.s[i];
        s_weight += st.inf_norm;
        double wl = intensity_weight(global_means[k], st.l, cfg);
        l_num += wl * st.l;
        l_den += wl;
    }
    d.l_hat = l_num / l_den;  // w_l > 0 always

    d.s_hat.assign(n, 0.0);
    if (s_weight > 0.0) {
        double norm = 0.0;
        for (size_t i = 0; i < n; ++i) {
            s_bar[i] /= s_weight;
            norm += s_bar[i] * s_bar[i];
        }
        norm = std::sqrt(norm);
        if (norm >= kDegenerateContrast)
            for (size_t i = 0; i < n; ++i) d.s_hat[i] = s_bar[i] / norm;
    }

    d.patch.resize(n);
    double sq = 0.0;
    for (size_t i = 0; i < n; ++i) {
        d.patch[i] = d.c_hat * d.s_hat[i] + d.l_hat;
        double dd = d.patch[i] - d.l_hat;
        sq += dd * dd;
    }
    d.mean = d.l_hat;
    d.var = sq / static_cast<double>(n);
    return d;
}

// Everything the losses need that depends only on the measurement set:
// desired patches, their moments, and the smoothed weight maps.
struct LossContext {
    PatchGrid grid;
    std::vector<DesiredPatch> desired;
    std::vector<Plane> weights;      // smoothed, re-normalized, over the measure set
    std::vector<Plane> measures_y;   // luminance of each measure image
};

inline LossContext make_loss_context(const SceneSets& sets, const LossConfig& cfg,
                                     bool with_weights = true) {
    cfg.validate();
    LossContext ctx;
    const int w = sets.stack.width(), h = sets.stack.height();
    ctx.grid = make_patch_grid(w, h, cfg.patch_size, cfg.stride);

    std::vector<double> global_means;
    std::vector<std::vector<std::vector<double>>> patches;
    for (size_t k = 0; k < sets.measure_count(); ++k) {
        Plane y = to_luminance(sets.measure_image(k));
        double mean = 0.0;
        for (double x : y.v) mean += x;
        global_means.push_back(mean / static_cast<double>(y.size()));
        patches.push_back(extract_patches(y, cfg.patch_size, cfg.stride));
        ctx.measures_y.push_back(std::move(y));
    }

    for (int i = 0; i < ctx.grid.count(); ++i) {
        std::vector<PatchStats> stats;
        for (size_t k = 0; k < sets.measure_count(); ++k)
            stats.push_back(decompose_patch(patches[k][i]));
        ctx.desired.push_back(desired_patch(stats, global_means, cfg));
    }

    if (with_weights) ctx.weights = smoothed_weights(sets).smoothed;
    return ctx;
}

// SSIM of one fused patch against its precomputed desired patch.
inline double patch_ssim(const DesiredPatch& d, const std::vector<double>& fused,
                         const LossConfig& cfg) {
    const size_t n = fused.size();
    double mu_f = 0.0;
    for (double x : fused) mu_f += x;
    mu_f /= static_cast<double>(n);
    double var_f = 0.0, cov = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double df = fused[i] - mu_f;
        var_f += df * df;
        cov += df * (d.patch[i] - d.mean);
    }
    var_f /= static_cast<double>(n);
    cov /= static_cast<double>(n);

    double lum = (2.0 * d.mean * mu_f + cfg.c1) / (mu_f * mu_f + d.mean * d.mean + cfg.c1);
    double str = (2.0 * cov + cfg.c2) / (var_f + d.var + cfg.c2);
    return lum * str;
}

inline double mef_ssim_index(const LossContext& ctx, const Image& fused, const LossConfig& cfg) {
    Plane y = to_luminance(fused);
    std::vector<std::vector<double>> fpatches = extract_patches(y, cfg.patch_size, cfg.stride);
    double total = 0.0;
    for (int i = 0; i < ctx.grid.count(); ++i) total += patch_ssim(ctx.desired[i], fpatches[i], cfg);
    return total / static_cast<double>(ctx.grid.count());
}

inline double mef_ssim_index(const SceneSets& sets, const Image& fused, const LossConfig& cfg) {
    if (fused.w != sets.stack.width() || fused.h != sets.stack.height())
        throw shape_error("mef_ssim_index: fused dimensions do not match the stack");
    LossContext ctx = make_loss_context(sets, cfg, /*with_weights=*/false);
    return mef_ssim_index(ctx, fused, cfg);
}

inline double loss_S(const SceneSets& sets, const Image& fused, const LossConfig& cfg) {
    return 1.0 - mef_ssim_index(sets, fused, cfg);
}

// Weighted absolute error against every measurement image, normalized by
// pixel count so lambda keeps its meaning across resolutions. The
// per-pixel L1 norm sums over the three channels.
inline double loss_W(const LossContext& ctx, const SceneSets& sets, const Image& fused,
                     const LossConfig&) {
    const size_t npix = fused.pixels();
    double total = 0.0;
    for (size_t k = 0; k < sets.measure_count(); ++k) {
        const Image& zk = sets.measure_image(k);
        const Plane& wk = ctx.weights[k];
        double acc = 0.0;
        for (size_t p = 0; p < npix; ++p) {
            double l1 = std::abs(fused.v[3 * p] - zk.v[3 * p]) +
                        std::abs(fused.v[3 * p + 1] - zk.v[3 * p + 1]) +
                        std::abs(fused.v[3 * p + 2] - zk.v[3 * p + 2]);
            acc += wk.v[p] * l1;
        }
        total += acc;
    }
    return total / static_cast<double>(npix);
}

inline double loss_W(const SceneSets& sets, const Image& fused, const LossConfig& cfg) {
    if (fused.w != sets.stack.width() || fused.h != sets.stack.height())
        throw shape_error("loss_W: fused dimensions do not match the stack");
    cfg.validate();
    LossContext ctx;
    ctx.weights = smoothed_weights(sets).smoothed;
    return loss_W(ctx, sets, fused, cfg);
}

struct LossBreakdown {
    double s = 0.0;
    double w = 0.0;
    double total = 0.0;
    double mef_ssim = 0.0;
};

inline LossBreakdown total_loss(const SceneSets& sets, const Image& fused, const LossConfig& cfg) {
    if (fused.w != sets.stack.width() || fused.h != sets.stack.height())
        throw shape_error("total_loss: fused dimensions do not match the stack");
    LossContext ctx = make_loss_context(sets, cfg);
    LossBreakdown lb;
    lb.mef_ssim = mef_ssim_index(ctx, fused, cfg);
    lb.s = 1.0 - lb.mef_ssim;
    lb.w = loss_W(ctx, sets, fused, cfg);
    lb.total = lb.s + cfg.lambda * lb.w;
    return lb;
}

}  // namespace fuselab
