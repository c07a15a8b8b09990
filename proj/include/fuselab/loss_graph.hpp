#pragma once

#include <vector>

#include "fuselab/autodiff.hpp"
#include "fuselab/mef_ssim.hpp"
#include "fuselab/msfnet.hpp"

namespace fuselab {

// Tape-based counterparts of the scalar losses. The desired patches and
// the weight maps depend only on the measurement set, so they enter the
// graph as constants; gradients flow through the fused image alone.

inline ad::Var luminance_node(ad::Tape& t, ad::Var rgb) {
    ad::TensorData w({1, 3, 1, 1});
    w.v = {0.299, 0.587, 0.114};
    ad::TensorData b({1});
    return ad::conv2d(rgb, t.constant(std::move(w)), t.constant(std::move(b)), 0);
}

inline ad::Var loss_S_node(ad::Tape& t, const LossContext& ctx, ad::Var fused_rgb,
                           const LossConfig& cfg) {
    const PatchGrid& g = ctx.grid;
    const int ps = g.patch;
    const std::int64_t n = static_cast<std::int64_t>(ps) * ps;

    ad::Var y = luminance_node(t, fused_rgb);
    ad::Var acc = t.scalar(0.0);
    std::vector<std::int64_t> idx(n);
    for (int i = 0; i < g.count(); ++i) {
        int x0 = g.x0(i), y0 = g.y0(i);
        std::int64_t j = 0;
        for (int yy = 0; yy < ps; ++yy)
            for (int xx = 0; xx < ps; ++xx)
                idx[j++] = static_cast<std::int64_t>(y0 + yy) * g.w + (x0 + xx);

        const DesiredPatch& d = ctx.desired[i];
        ad::TensorData centered_hat({static_cast<int>(n)});
        for (std::int64_t k = 0; k < n; ++k) centered_hat.v[k] = d.patch[k] - d.mean;

        ad::Var patch = ad::gather(y, idx);
        ad::Var mu = ad::mean_all(patch);
        ad::Var centered = ad::sub(patch, mu);
        ad::Var var_f = ad::mean_all(ad::mul(centered, centered));
        ad::Var cov = ad::mean_all(ad::mul(centered, t.constant(std::move(centered_hat))));

        ad::Var lum = ad::div(ad::add_const(ad::mul_const(mu, 2.0 * d.mean), cfg.c1),
                              ad::add_const(ad::mul(mu, mu), d.mean * d.mean + cfg.c1));
        ad::Var str = ad::div(ad::add_const(ad::mul_const(cov, 2.0), cfg.c2),
                              ad::add_const(var_f, d.var + cfg.c2));
        acc = ad::add(acc, ad::mul(lum, str));
    }
    return ad::rsub_const(1.0, ad::mul_const(acc, 1.0 / static_cast<double>(g.count())));
}

inline ad::Var loss_W_node(ad::Tape& t, const LossContext& ctx, const SceneSets& sets,
                           ad::Var fused_rgb, const LossConfig&) {
    const ad::TensorData& fv = t.val(fused_rgb);
    const double inv_npix = 1.0 / (static_cast<double>(fv.dim(2)) * fv.dim(3));

    ad::Var acc = t.scalar(0.0);
    for (size_t k = 0; k < sets.measure_count(); ++k) {
        ad::Var zk = t.constant(pack_image(sets.measure_image(k)));
        const Plane& wp = ctx.weights[k];
        ad::TensorData w({1, 1, wp.h, wp.w});
        w.v = wp.v;
        ad::Var diff = ad::abs_op(ad::sub(fused_rgb, zk));
        acc = ad::add(acc, ad::sum_all(ad::mul(diff, t.constant(std::move(w)))));
    }
    return ad::mul_const(acc, inv_npix);
}

inline ad::Var total_loss_node(ad::Tape& t, const LossContext& ctx, const SceneSets& sets,
                               ad::Var fused_rgb, const LossConfig& cfg) {
    ad::Var ls = loss_S_node(t, ctx, fused_rgb, cfg);
    ad::Var lw = loss_W_node(t, ctx, sets, fused_rgb, cfg);
    return ad::add(ls, ad::mul_const(lw, cfg.lambda));
}

}  // namespace fuselab
