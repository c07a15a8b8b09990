#pragma once

#include <cmath>
#include <vector>

#include "fuselab/image.hpp"
#include "fuselab/weights.hpp"

namespace fuselab {

// Burt-Adelson style pyramid with the separable (1,4,6,4,1)/16 kernel and
// replicate padding. Level 0 is full resolution; each level halves the
// dimensions with ceil division.
struct Pyramid {
    std::vector<Plane> levels;
};

namespace detail {

inline constexpr double kPyrKernel[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

inline Plane blur5(const Plane& p) {
    int w = p.w, h = p.h;
    Plane tmp(w, h), out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = 0; k < 5; ++k) s += kPyrKernel[k] * p.at(clampi(x + k - 2, 0, w - 1), y);
            tmp.at(x, y) = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = 0; k < 5; ++k) s += kPyrKernel[k] * tmp.at(x, clampi(y + k - 2, 0, h - 1));
            out.at(x, y) = s;
        }
    return out;
}

inline Plane downsample2(const Plane& p) {
    Plane b = blur5(p);
    int ow = (p.w + 1) / 2, oh = (p.h + 1) / 2;
    Plane out(ow, oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) out.at(x, y) = b.at(2 * x, 2 * y);
    return out;
}

// Zero-insertion upsample followed by the same kernel scaled by 2,
// evaluated directly at the target resolution (which may be odd).
inline Plane upsample2(const Plane& p, int tw, int th) {
    Plane tmp(tw, p.h), out(tw, th);
    for (int y = 0; y < p.h; ++y)
        for (int x = 0; x < tw; ++x) {
            double s = 0.0;
            for (int k = 0; k < 5; ++k) {
                int t = x + k - 2;
                if ((t & 1) == 0) s += kPyrKernel[k] * p.at(clampi(t / 2, 0, p.w - 1), y);
            }
            tmp.at(x, y) = 2.0 * s;
        }
    for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x) {
            double s = 0.0;
            for (int k = 0; k < 5; ++k) {
                int t = y + k - 2;
                if ((t & 1) == 0) s += kPyrKernel[k] * tmp.at(x, clampi(t / 2, 0, p.h - 1));
            }
            out.at(x, y) = 2.0 * s;
        }
    return out;
}

}  // namespace detail

inline int max_pyramid_levels(int w, int h) {
    int levels = 1, m = std::min(w, h);
    while (m > 1) {
        m = (m + 1) / 2;
        ++levels;
    }
    return levels;
}

inline int default_fusion_levels(int w, int h) {
    int m = std::min(w, h);
    int l = static_cast<int>(std::floor(std::log2(static_cast<double>(m)))) - 1;
    return std::max(1, std::min(l, max_pyramid_levels(w, h)));
}

inline void check_levels(const Plane& p, int levels) {
    if (levels < 1) throw domain_error("pyramid: levels must be >= 1");
    if (levels > max_pyramid_levels(p.w, p.h))
        throw domain_error("pyramid: " + std::to_string(levels) +
                           " levels infeasible for " + std::to_string(p.w) + "x" +
                           std::to_string(p.h));
}

inline Pyramid gaussian_pyramid(const Plane& p, int levels) {
    check_levels(p, levels);
    Pyramid pyr;
    pyr.levels.push_back(p);
    for (int l = 1; l < levels; ++l) pyr.levels.push_back(detail::downsample2(pyr.levels.back()));
    return pyr;
}

inline Pyramid laplacian_pyramid(const Plane& p, int levels) {
    Pyramid g = gaussian_pyramid(p, levels);
    Pyramid out;
    for (int l = 0; l + 1 < levels; ++l) {
        const Plane& fine = g.levels[l];
        Plane up = detail::upsample2(g.levels[l + 1], fine.w, fine.h);
        Plane diff(fine.w, fine.h);
        for (size_t i = 0; i < diff.size(); ++i) diff.v[i] = fine.v[i] - up.v[i];
        out.levels.push_back(std::move(diff));
    }
    out.levels.push_back(g.levels.back());
    return out;
}

inline Plane collapse(const Pyramid& pyr) {
    if (pyr.levels.empty()) throw domain_error("collapse: empty pyramid");
    Plane acc = pyr.levels.back();
    for (int l = static_cast<int>(pyr.levels.size()) - 2; l >= 0; --l) {
        const Plane& lev = pyr.levels[l];
        Plane up = detail::upsample2(acc, lev.w, lev.h);
        acc = Plane(lev.w, lev.h);
        for (size_t i = 0; i < acc.size(); ++i) acc.v[i] = lev.v[i] + up.v[i];
    }
    return acc;
}

// Classical multi-scale exposure fusion over the fusion set: per channel,
// blend Laplacian pyramids of the inputs with Gaussian pyramids of the
// normalized (unsmoothed) quality weights, then collapse and clamp.
inline Image mertens_fuse(const SceneSets& sets, int levels = 0) {
    const int w = sets.stack.width(), h = sets.stack.height();
    if (levels <= 0) levels = default_fusion_levels(w, h);

    std::vector<Plane> raws;
    for (size_t k = 0; k < sets.fuse_count(); ++k) raws.push_back(raw_weight(sets.fuse_image(k)));
    std::vector<Plane> weights = normalize_weights(raws);

    std::vector<Pyramid> wpyrs;
    for (const Plane& wp : weights) wpyrs.push_back(gaussian_pyramid(wp, levels));

    Image out(w, h);
    for (int c = 0; c < 3; ++c) {
        Pyramid blended;
        for (int l = 0; l < levels; ++l)
            blended.levels.emplace_back(wpyrs[0].levels[l].w, wpyrs[0].levels[l].h);

        for (size_t k = 0; k < sets.fuse_count(); ++k) {
            const Image& img = sets.fuse_image(k);
            Plane ch(w, h);
            for (size_t p = 0; p < ch.size(); ++p) ch.v[p] = img.v[3 * p + c];
            Pyramid lp = laplacian_pyramid(ch, levels);
            for (int l = 0; l < levels; ++l)
                for (size_t i = 0; i < lp.levels[l].size(); ++i)
                    blended.levels[l].v[i] += wpyrs[k].levels[l].v[i] * lp.levels[l].v[i];
        }
        Plane fused = collapse(blended);
        for (size_t p = 0; p < fused.size(); ++p) out.v[3 * p + c] = clamp01(fused.v[p]);
    }
    return out;
}

}  // namespace fuselab
