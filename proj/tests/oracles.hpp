#pragma once

// Independent reference implementations used to cross-check the library.
// Everything here is written as direct nested-loop transcriptions and must
// not call into the code paths it verifies.

#include <algorithm>
#include <cmath>
#include <vector>

#include "fuselab/image.hpp"
#include "fuselab/mef_ssim.hpp"

namespace oracle {

using fuselab::Image;
using fuselab::LossConfig;
using fuselab::Plane;

inline int clampc(int x, int lo, int hi) { return x < lo ? lo : (x > hi ? hi : x); }

// direct per-pixel 2D convolution with replicate padding
inline Plane conv2d_replicate(const Plane& p, const std::vector<double>& kernel, int kw, int kh) {
    Plane out(p.w, p.h);
    int cx = kw / 2, cy = kh / 2;
    for (int y = 0; y < p.h; ++y)
        for (int x = 0; x < p.w; ++x) {
            double s = 0.0;
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    int sx = clampc(x + kx - cx, 0, p.w - 1);
                    int sy = clampc(y + ky - cy, 0, p.h - 1);
                    s += kernel[ky * kw + kx] * p.at(sx, sy);
                }
            out.at(x, y) = s;
        }
    return out;
}

inline Plane luminance(const Image& img) {
    Plane y(img.w, img.h);
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w; ++c)
            y.at(c, r) = 0.299 * img.at(c, r, 0) + 0.587 * img.at(c, r, 1) + 0.114 * img.at(c, r, 2);
    return y;
}

inline Plane contrast(const Image& img) {
    std::vector<double> lap = {0, 1, 0, 1, -4, 1, 0, 1, 0};
    Plane c = conv2d_replicate(luminance(img), lap, 3, 3);
    for (double& v : c.v) v = std::abs(v);
    return c;
}

inline Plane saturation(const Image& img) {
    Plane out(img.w, img.h);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double r = img.at(x, y, 0), g = img.at(x, y, 1), b = img.at(x, y, 2);
            double mu = (r + g + b) / 3.0;
            out.at(x, y) = std::sqrt(((r - mu) * (r - mu) + (g - mu) * (g - mu) + (b - mu) * (b - mu)) / 3.0);
        }
    return out;
}

inline Plane well_exposedness(const Image& img) {
    Plane out(img.w, img.h);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double e = 1.0;
            for (int c = 0; c < 3; ++c) {
                double d = img.at(x, y, c) - 0.5;
                e *= std::exp(-(d * d) / (2.0 * 0.2 * 0.2));
            }
            out.at(x, y) = e;
        }
    return out;
}

// per-window least-squares fit of out = a*g + b, then per-pixel averaging
// of the window coefficients
inline Plane guided_filter(const Plane& guide, const Plane& input, int radius, double eps) {
    int w = guide.w, h = guide.h;
    Plane a(w, h), b(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double sg = 0, si = 0;
            int n = 0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    sg += guide.at(clampc(x + dx, 0, w - 1), clampc(y + dy, 0, h - 1));
                    si += input.at(clampc(x + dx, 0, w - 1), clampc(y + dy, 0, h - 1));
                    ++n;
                }
            double mg = sg / n, mi = si / n;
            double var = 0, cov = 0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    double gv = guide.at(clampc(x + dx, 0, w - 1), clampc(y + dy, 0, h - 1));
                    double iv = input.at(clampc(x + dx, 0, w - 1), clampc(y + dy, 0, h - 1));
                    var += (gv - mg) * (gv - mg);
                    cov += (gv - mg) * (iv - mi);
                }
            var /= n;
            cov /= n;
            a.at(x, y) = cov / (var + eps);
            b.at(x, y) = mi - a.at(x, y) * mg;
        }
    Plane out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double sa = 0, sb = 0;
            int n = 0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    sa += a.at(clampc(x + dx, 0, w - 1), clampc(y + dy, 0, h - 1));
                    sb += b.at(clampc(x + dx, 0, w - 1), clampc(y + dy, 0, h - 1));
                    ++n;
                }
            out.at(x, y) = (sa / n) * guide.at(x, y) + sb / n;
        }
    return out;
}

// --- second, straightforward multi-scale fusion implementation ---

inline Plane pyr_blur(const Plane& p) {
    std::vector<double> k1 = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
    std::vector<double> k2d(25);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) k2d[i * 5 + j] = k1[i] * k1[j];
    return conv2d_replicate(p, k2d, 5, 5);
}

inline Plane pyr_down(const Plane& p) {
    Plane b = pyr_blur(p);
    Plane out((p.w + 1) / 2, (p.h + 1) / 2);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) out.at(x, y) = b.at(2 * x, 2 * y);
    return out;
}

// zero-insertion upsample + 5x5 blur scaled x4, evaluated directly on the
// source lattice (only even target offsets carry samples)
inline Plane pyr_up(const Plane& p, int tw, int th) {
    Plane out(tw, th);
    std::vector<double> k = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
    for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x) {
            double s = 0.0;
            for (int ky = 0; ky < 5; ++ky)
                for (int kx = 0; kx < 5; ++kx) {
                    int tx = x + kx - 2, ty = y + ky - 2;
                    if ((tx & 1) || (ty & 1)) continue;
                    int sx = clampc(tx / 2, 0, p.w - 1), sy = clampc(ty / 2, 0, p.h - 1);
                    s += k[ky] * k[kx] * p.at(sx, sy);
                }
            out.at(x, y) = 4.0 * s;
        }
    return out;
}

inline std::vector<Plane> gauss_pyr(const Plane& p, int levels) {
    std::vector<Plane> g = {p};
    for (int l = 1; l < levels; ++l) g.push_back(pyr_down(g.back()));
    return g;
}

inline std::vector<Plane> lap_pyr(const Plane& p, int levels) {
    std::vector<Plane> g = gauss_pyr(p, levels);
    std::vector<Plane> out;
    for (int l = 0; l + 1 < levels; ++l) {
        Plane up = pyr_up(g[l + 1], g[l].w, g[l].h);
        Plane d(g[l].w, g[l].h);
        for (size_t i = 0; i < d.size(); ++i) d.v[i] = g[l].v[i] - up.v[i];
        out.push_back(d);
    }
    out.push_back(g.back());
    return out;
}

inline Plane collapse(const std::vector<Plane>& pyr) {
    Plane acc = pyr.back();
    for (int l = static_cast<int>(pyr.size()) - 2; l >= 0; --l) {
        Plane up = pyr_up(acc, pyr[l].w, pyr[l].h);
        acc = Plane(pyr[l].w, pyr[l].h);
        for (size_t i = 0; i < acc.size(); ++i) acc.v[i] = pyr[l].v[i] + up.v[i];
    }
    return acc;
}

inline Image mertens_fuse(const std::vector<Image>& inputs, int levels) {
    size_t n = inputs.size();
    int w = inputs[0].w, h = inputs[0].h;
    std::vector<Plane> weights;
    for (const Image& img : inputs) {
        Plane c = contrast(img), s = saturation(img), e = well_exposedness(img);
        Plane wt(w, h);
        for (size_t i = 0; i < wt.size(); ++i) wt.v[i] = c.v[i] * s.v[i] * e.v[i] + 1e-12;
        weights.push_back(wt);
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double denom = 0.0;
            for (size_t k = 0; k < n; ++k) denom += weights[k].at(x, y);
            for (size_t k = 0; k < n; ++k) weights[k].at(x, y) /= denom;
        }

    Image out(w, h);
    for (int c = 0; c < 3; ++c) {
        std::vector<Plane> blended;
        for (size_t k = 0; k < n; ++k) {
            Plane ch(w, h);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) ch.at(x, y) = inputs[k].at(x, y, c);
            std::vector<Plane> lp = lap_pyr(ch, levels);
            std::vector<Plane> gp = gauss_pyr(weights[k], levels);
            if (blended.empty()) {
                for (int l = 0; l < levels; ++l) blended.emplace_back(lp[l].w, lp[l].h);
            }
            for (int l = 0; l < levels; ++l)
                for (size_t i = 0; i < lp[l].size(); ++i)
                    blended[l].v[i] += gp[l].v[i] * lp[l].v[i];
        }
        Plane fused = collapse(blended);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at(x, y, c) = std::clamp(fused.at(x, y), 0.0, 1.0);
    }
    return out;
}

// --- literal transcription of the MEF-SSIM loss over a measurement set ---

struct MefSsimOracle {
    double index = 0.0;
    double loss_s = 0.0;
};

inline MefSsimOracle mef_ssim(const std::vector<Image>& measures, const Image& fused,
                              const LossConfig& cfg) {
    size_t nimg = measures.size();
    int w = fused.w, h = fused.h;
    int ps = cfg.patch_size, stride = cfg.stride;
    size_t n = static_cast<size_t>(ps) * ps;

    std::vector<Plane> ylum;
    std::vector<double> gmeans;
    for (const Image& img : measures) {
        Plane y = luminance(img);
        double m = 0.0;
        for (double v : y.v) m += v;
        gmeans.push_back(m / y.size());
        ylum.push_back(y);
    }
    Plane fy = luminance(fused);

    double total = 0.0;
    int count = 0;
    for (int py = 0; py + ps <= h; py += stride)
        for (int px = 0; px + ps <= w; px += stride) {
            std::vector<double> chat_terms, l_vals, inf_norms;
            std::vector<std::vector<double>> structures;
            for (size_t k = 0; k < nimg; ++k) {
                std::vector<double> patch(n);
                for (int yy = 0; yy < ps; ++yy)
                    for (int xx = 0; xx < ps; ++xx)
                        patch[yy * ps + xx] = ylum[k].at(px + xx, py + yy);
                double l = 0.0;
                for (double v : patch) l += v;
                l /= n;
                double c2 = 0.0, infn = 0.0;
                std::vector<double> s(n);
                for (size_t i = 0; i < n; ++i) {
                    s[i] = patch[i] - l;
                    c2 += s[i] * s[i];
                    infn = std::max(infn, std::abs(s[i]));
                }
                double c = std::sqrt(c2);
                if (c < 1e-12) {
                    std::fill(s.begin(), s.end(), 0.0);
                    c = 0.0;
                } else {
                    for (double& v : s) v /= c;
                }
                chat_terms.push_back(c);
                l_vals.push_back(l);
                inf_norms.push_back(infn);
                structures.push_back(s);
            }

            double c_hat = *std::max_element(chat_terms.begin(), chat_terms.end());

            std::vector<double> s_bar(n, 0.0);
            double denom = 0.0;
            for (size_t k = 0; k < nimg; ++k) {
                for (size_t i = 0; i < n; ++i) s_bar[i] += inf_norms[k] * structures[k][i];
                denom += inf_norms[k];
            }
            std::vector<double> s_hat(n, 0.0);
            if (denom > 0.0) {
                double norm = 0.0;
                for (size_t i = 0; i < n; ++i) {
                    s_bar[i] /= denom;
                    norm += s_bar[i] * s_bar[i];
                }
                norm = std::sqrt(norm);
                if (norm >= 1e-12)
                    for (size_t i = 0; i < n; ++i) s_hat[i] = s_bar[i] / norm;
            }

            double lnum = 0.0, lden = 0.0;
            for (size_t k = 0; k < nimg; ++k) {
                double wg = std::exp(-(gmeans[k] - cfg.tau) * (gmeans[k] - cfg.tau) /
                                         (2.0 * cfg.sigma_g * cfg.sigma_g) -
                                     (l_vals[k] - cfg.tau) * (l_vals[k] - cfg.tau) /
                                         (2.0 * cfg.sigma_l * cfg.sigma_l));
                lnum += wg * l_vals[k];
                lden += wg;
            }
            double l_hat = lnum / lden;

            std::vector<double> zhat(n);
            for (size_t i = 0; i < n; ++i) zhat[i] = c_hat * s_hat[i] + l_hat;

            std::vector<double> fpatch(n);
            for (int yy = 0; yy < ps; ++yy)
                for (int xx = 0; xx < ps; ++xx) fpatch[yy * ps + xx] = fy.at(px + xx, py + yy);

            double mu_z = 0.0, mu_f = 0.0;
            for (size_t i = 0; i < n; ++i) {
                mu_z += zhat[i];
                mu_f += fpatch[i];
            }
            mu_z /= n;
            mu_f /= n;
            double var_z = 0.0, var_f = 0.0, cov = 0.0;
            for (size_t i = 0; i < n; ++i) {
                var_z += (zhat[i] - mu_z) * (zhat[i] - mu_z);
                var_f += (fpatch[i] - mu_f) * (fpatch[i] - mu_f);
                cov += (zhat[i] - mu_z) * (fpatch[i] - mu_f);
            }
            var_z /= n;
            var_f /= n;
            cov /= n;

            double s_val = ((2.0 * mu_z * mu_f + cfg.c1) / (mu_f * mu_f + mu_z * mu_z + cfg.c1)) *
                           ((2.0 * cov + cfg.c2) / (var_f + var_z + cfg.c2));
            total += s_val;
            ++count;
        }

    MefSsimOracle out;
    out.index = total / count;
    out.loss_s = 1.0 - out.index;
    return out;
}

// weighted absolute error, straightforward triple loop over images,
// pixels, channels; weights supplied by the caller
inline double loss_w(const std::vector<Image>& measures, const std::vector<Plane>& weights,
                     const Image& fused) {
    double total = 0.0;
    for (size_t k = 0; k < measures.size(); ++k)
        for (int y = 0; y < fused.h; ++y)
            for (int x = 0; x < fused.w; ++x) {
                double l1 = 0.0;
                for (int c = 0; c < 3; ++c) l1 += std::abs(fused.at(x, y, c) - measures[k].at(x, y, c));
                total += weights[k].at(x, y) * l1;
            }
    return total / (static_cast<double>(fused.w) * fused.h);
}

}  // namespace oracle
