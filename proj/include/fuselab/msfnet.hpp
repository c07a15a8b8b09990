#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fuselab/autodiff.hpp"
#include "fuselab/image.hpp"

namespace fuselab {

// Architecture knobs. The fusion-set size is baked in because the input
// convolution concatenates all fusion images along channels.
struct NetConfig {
    int levels = 3;
    int base_channels = 16;
    int msrrg_per_scale = 1;
    int dabs_per_msrrg = 2;
    int kernel = 3;
    double leaky_slope = 0.2;
    int ca_reduction = 4;
    int fuse_count = 2;

    // The half-resolution MSRRG branch rides with the hierarchical
    // structure: a single-level net is fully single-scale.
    bool multi_scale() const { return levels > 1; }

    void validate() const {
        if (levels < 1) throw domain_error("net: levels must be >= 1");
        if (base_channels < 4) throw domain_error("net: base_channels must be >= 4");
        if (msrrg_per_scale < 1 || dabs_per_msrrg < 1)
            throw domain_error("net: block counts must be >= 1");
        if (kernel < 1 || kernel % 2 == 0) throw domain_error("net: kernel must be odd");
        if (ca_reduction < 1 || base_channels % ca_reduction != 0)
            throw domain_error("net: ca_reduction must divide base_channels");
        if (fuse_count < 1) throw domain_error("net: fuse_count must be >= 1");
    }

    bool operator==(const NetConfig&) const = default;
};

struct NetParams {
    NetConfig cfg;
    std::map<std::string, ad::TensorData> tensors;
};

namespace detail {

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    bool is_weight;  // weights get Kaiming init, biases start at zero
};

inline void push_conv(std::vector<ParamSpec>& out, const std::string& prefix, int cout, int cin,
                      int k) {
    out.push_back({prefix + ".w", {cout, cin, k, k}, true});
    out.push_back({prefix + ".b", {cout}, false});
}

inline void push_dab(std::vector<ParamSpec>& out, const std::string& prefix, const NetConfig& c) {
    int ch = c.base_channels, k = c.kernel, r = c.ca_reduction;
    push_conv(out, prefix + "conv1", ch, ch, k);
    push_conv(out, prefix + "conv2", ch, ch, k);
    push_conv(out, prefix + "ca1", ch / r, ch, 1);
    push_conv(out, prefix + "ca2", ch, ch / r, 1);
    push_conv(out, prefix + "sa", 1, 2, k);
    push_conv(out, prefix + "compress", ch, 2 * ch, 1);
}

inline std::vector<ParamSpec> param_specs(const NetConfig& c) {
    c.validate();
    std::vector<ParamSpec> out;
    int ch = c.base_channels, k = c.kernel;
    push_conv(out, "fe.conv1", ch, 3 * c.fuse_count, k);
    push_conv(out, "fe.conv2", ch, ch, k);
    for (int l = 0; l < c.levels; ++l) {
        std::string s = "s" + std::to_string(l) + ".";
        push_conv(out, s + "merge", ch, l == 0 ? ch : 2 * ch, k);
        for (int m = 0; m < c.msrrg_per_scale; ++m) {
            std::string g = s + "g" + std::to_string(m) + ".";
            if (c.multi_scale()) {
                push_dab(out, g + "half.", c);
                push_conv(out, g + "merge1", ch, 2 * ch, 1);
            }
            for (int d = 0; d < c.dabs_per_msrrg; ++d)
                push_dab(out, g + "d" + std::to_string(d) + ".", c);
            push_conv(out, g + "gconv", ch, ch, k);
        }
        push_conv(out, s + "head", 3, ch, k);
    }
    return out;
}

}  // namespace detail

// Kaiming-style fan-in scaled uniform init: U(-b, b) with b = sqrt(6/fan_in),
// so Var(w) = 2/fan_in. Each tensor draws from its own name-derived stream,
// making the result independent of initialization order.
inline NetParams init_params(const NetConfig& cfg, std::uint64_t seed) {
    NetParams p;
    p.cfg = cfg;
    for (const detail::ParamSpec& spec : detail::param_specs(cfg)) {
        ad::TensorData t(spec.shape);
        if (spec.is_weight) {
            std::int64_t fan_in = 1;
            for (size_t i = 1; i < spec.shape.size(); ++i) fan_in *= spec.shape[i];
            double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            Rng rng(mix_seed(seed, fnv1a64(spec.name)));
            for (double& x : t.v) x = rng.next_in(-bound, bound);
        }
        p.tensors.emplace(spec.name, std::move(t));
    }
    return p;
}

// Parameters registered on a tape for one forward/backward pass.
struct NetVars {
    std::map<std::string, ad::Var> vars;

    ad::Var at(const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw domain_error("net: unknown parameter " + name);
        return it->second;
    }
};

inline NetVars stage_params(ad::Tape& tape, const NetParams& params, bool requires_grad) {
    NetVars nv;
    for (const auto& [name, tensor] : params.tensors)
        nv.vars.emplace(name, tape.leaf(tensor, requires_grad));
    return nv;
}

namespace detail {

inline ad::Var conv(ad::Tape&, const NetVars& nv, const std::string& prefix, ad::Var x, int pad) {
    return ad::conv2d(x, nv.at(prefix + ".w"), nv.at(prefix + ".b"), pad);
}

}  // namespace detail

// Dual-attention block: residual around channel- and spatial-attention
// gated features.
inline ad::Var dab_forward(ad::Tape& t, ad::Var x, const NetVars& nv, const std::string& prefix,
                           const NetConfig& cfg) {
    int pad = cfg.kernel / 2;
    ad::Var u = detail::conv(t, nv, prefix + "conv1", x, pad);
    u = ad::leaky_relu(u, cfg.leaky_slope);
    u = detail::conv(t, nv, prefix + "conv2", u, pad);

    ad::Var ca = ad::global_avg_pool(u);
    ca = detail::conv(t, nv, prefix + "ca1", ca, 0);
    ca = ad::leaky_relu(ca, cfg.leaky_slope);
    ca = detail::conv(t, nv, prefix + "ca2", ca, 0);
    ca = ad::sigmoid(ca);
    ad::Var ca_out = ad::mul(u, ca);

    ad::Var sa = ad::concat_ch(ad::channel_avg_pool(u), ad::channel_max_pool(u));
    sa = detail::conv(t, nv, prefix + "sa", sa, pad);
    sa = ad::sigmoid(sa);
    ad::Var sa_out = ad::mul(u, sa);

    ad::Var y = detail::conv(t, nv, prefix + "compress", ad::concat_ch(ca_out, sa_out), 0);
    return ad::add(x, y);
}

// Multi-scale recursive residual group: a half-resolution DAB branch is
// merged with the identity branch, refined by a DAB chain, and added back.
inline ad::Var msrrg_forward(ad::Tape& t, ad::Var x, const NetVars& nv, const std::string& prefix,
                             const NetConfig& cfg) {
    const ad::TensorData& xv = t.val(x);
    int h = xv.dim(2), w = xv.dim(3);

    ad::Var cur = x;
    if (cfg.multi_scale()) {
        ad::Var half = ad::bilinear_resample(x, (h + 1) / 2, (w + 1) / 2);
        half = dab_forward(t, half, nv, prefix + "half.", cfg);
        ad::Var up = ad::bilinear_resample(half, h, w);
        cur = detail::conv(t, nv, prefix + "merge1", ad::concat_ch(x, up), 0);
    }
    for (int d = 0; d < cfg.dabs_per_msrrg; ++d)
        cur = dab_forward(t, cur, nv, prefix + "d" + std::to_string(d) + ".", cfg);
    ad::Var y = detail::conv(t, nv, prefix + "gconv", cur, cfg.kernel / 2);
    return ad::add(x, y);
}

inline ad::Var feature_extract(ad::Tape& t, ad::Var input, const NetVars& nv,
                               const NetConfig& cfg) {
    int pad = cfg.kernel / 2;
    ad::Var f = detail::conv(t, nv, "fe.conv1", input, pad);
    f = ad::leaky_relu(f, cfg.leaky_slope);
    return detail::conv(t, nv, "fe.conv2", f, pad);
}

// Coarse-to-fine list of feature maps; index 0 is the coarsest, the last
// entry is the full-resolution input.
inline std::vector<ad::Var> build_feature_pyramid(ad::Tape& t, ad::Var features, int levels) {
    std::vector<ad::Var> pyr(levels);
    pyr[levels - 1] = features;
    for (int l = levels - 2; l >= 0; --l) pyr[l] = ad::bicubic_downsample_half(pyr[l + 1]);
    return pyr;
}

struct ScaleOutput {
    ad::Var image;  // (1,3,h,w), sigmoid range
    ad::Var carry;  // features fed to the next finer scale
};

inline ScaleOutput fuse_scale(ad::Tape& t, ad::Var feat, const ad::Var* prev_carry,
                              const NetVars& nv, const NetConfig& cfg, int scale) {
    const ad::TensorData& fv = t.val(feat);
    int h = fv.dim(2), w = fv.dim(3);
    std::string s = "s" + std::to_string(scale) + ".";

    ad::Var v = feat;
    if (prev_carry != nullptr) v = ad::concat_ch(feat, ad::bilinear_resample(*prev_carry, h, w));

    ad::Var cur = detail::conv(t, nv, s + "merge", v, cfg.kernel / 2);
    cur = ad::leaky_relu(cur, cfg.leaky_slope);
    for (int m = 0; m < cfg.msrrg_per_scale; ++m)
        cur = msrrg_forward(t, cur, nv, s + "g" + std::to_string(m) + ".", cfg);

    ScaleOutput out;
    out.carry = cur;
    out.image = ad::sigmoid(detail::conv(t, nv, s + "head", cur, cfg.kernel / 2));
    return out;
}

struct ForwardResult {
    ad::Var fused;                 // finest-scale output image tensor
    std::vector<ad::Var> scales;   // per-scale outputs, coarse to fine
};

inline ForwardResult msfnet_forward(ad::Tape& t, ad::Var input, const NetVars& nv,
                                    const NetConfig& cfg) {
    cfg.validate();
    ad::Var feats = feature_extract(t, input, nv, cfg);
    std::vector<ad::Var> pyr = build_feature_pyramid(t, feats, cfg.levels);

    ForwardResult res;
    ad::Var carry;
    for (int l = 0; l < cfg.levels; ++l) {
        ScaleOutput so = fuse_scale(t, pyr[l], l == 0 ? nullptr : &carry, nv, cfg, l);
        carry = so.carry;
        res.scales.push_back(so.image);
    }
    res.fused = res.scales.back();
    return res;
}

// --- image <-> tensor packing ---

inline ad::TensorData pack_fuse_images(const SceneSets& sets) {
    const int w = sets.stack.width(), h = sets.stack.height();
    ad::TensorData t({1, 3 * static_cast<int>(sets.fuse_count()), h, w});
    size_t plane = static_cast<size_t>(h) * w;
    for (size_t k = 0; k < sets.fuse_count(); ++k) {
        const Image& img = sets.fuse_image(k);
        for (int c = 0; c < 3; ++c)
            for (size_t p = 0; p < plane; ++p) t.v[(3 * k + c) * plane + p] = img.v[3 * p + c];
    }
    return t;
}

inline ad::TensorData pack_image(const Image& img) {
    ad::TensorData t({1, 3, img.h, img.w});
    size_t plane = img.pixels();
    for (int c = 0; c < 3; ++c)
        for (size_t p = 0; p < plane; ++p) t.v[c * plane + p] = img.v[3 * p + c];
    return t;
}

inline Image tensor_to_image(const ad::TensorData& t) {
    if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 3)
        throw shape_error("tensor_to_image: expected (1,3,H,W)");
    Image img(t.dim(3), t.dim(2));
    size_t plane = img.pixels();
    for (int c = 0; c < 3; ++c)
        for (size_t p = 0; p < plane; ++p) img.v[3 * p + c] = t.v[c * plane + p];
    return img;
}

// Inference entry point: pure function of (params, fusion images).
inline Image msfnet_fuse(const NetParams& params, const SceneSets& sets) {
    if (static_cast<int>(sets.fuse_count()) != params.cfg.fuse_count)
        throw domain_error("net: model was configured for " +
                           std::to_string(params.cfg.fuse_count) + " fusion images, got " +
                           std::to_string(sets.fuse_count()));
    ad::Tape tape;
    NetVars nv = stage_params(tape, params, false);
    ad::Var input = tape.constant(pack_fuse_images(sets));
    ForwardResult res = msfnet_forward(tape, input, nv, params.cfg);
    return tensor_to_image(tape.val(res.fused));
}

// --- parameter serialization (versioned, little-endian, named tensors) ---

namespace detail {

inline constexpr char kParamMagic[4] = {'F', 'L', 'N', 'P'};
inline constexpr std::uint32_t kParamVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t x) {
    char b[4] = {static_cast<char>(x), static_cast<char>(x >> 8), static_cast<char>(x >> 16),
                 static_cast<char>(x >> 24)};
    os.write(b, 4);
}

inline void put_f64(std::ostream& os, double d) {
    std::uint64_t x;
    std::memcpy(&x, &d, 8);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(x >> (8 * i));
    os.write(b, 8);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw format_error("truncated parameter file");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw format_error("truncated parameter file");
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= std::uint64_t(b[i]) << (8 * i);
    double d;
    std::memcpy(&d, &x, 8);
    return d;
}

}  // namespace detail

inline void save_params(const NetParams& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open for writing: " + path);
    os.write(detail::kParamMagic, 4);
    detail::put_u32(os, detail::kParamVersion);
    const NetConfig& c = params.cfg;
    for (int x : {c.levels, c.base_channels, c.msrrg_per_scale, c.dabs_per_msrrg, c.kernel,
                  c.ca_reduction, c.fuse_count})
        detail::put_u32(os, static_cast<std::uint32_t>(x));
    detail::put_f64(os, c.leaky_slope);
    detail::put_u32(os, static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& [name, t] : params.tensors) {
        detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
        for (double x : t.v) detail::put_f64(os, x);
    }
    if (!os) throw io_error("write failed: " + path);
}

inline NetParams load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open parameter file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kParamMagic, 4) != 0)
        throw format_error("bad parameter file magic: " + path);
    std::uint32_t version = detail::get_u32(is);
    if (version != detail::kParamVersion)
        throw format_error("unsupported parameter file version " + std::to_string(version));

    NetParams p;
    p.cfg.levels = static_cast<int>(detail::get_u32(is));
    p.cfg.base_channels = static_cast<int>(detail::get_u32(is));
    p.cfg.msrrg_per_scale = static_cast<int>(detail::get_u32(is));
    p.cfg.dabs_per_msrrg = static_cast<int>(detail::get_u32(is));
    p.cfg.kernel = static_cast<int>(detail::get_u32(is));
    p.cfg.ca_reduction = static_cast<int>(detail::get_u32(is));
    p.cfg.fuse_count = static_cast<int>(detail::get_u32(is));
    p.cfg.leaky_slope = detail::get_f64(is);

    std::uint32_t count = detail::get_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = detail::get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw format_error("truncated parameter file: " + path);
        std::uint32_t rank = detail::get_u32(is);
        std::vector<int> shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(detail::get_u32(is));
        ad::TensorData t(shape);
        for (double& x : t.v) x = detail::get_f64(is);
        p.tensors.emplace(std::move(name), std::move(t));
    }

    // the stored tensors must exactly realize the stored config
    std::vector<detail::ParamSpec> specs = detail::param_specs(p.cfg);
    if (specs.size() != p.tensors.size())
        throw format_error("parameter file tensor count does not match its config: " + path);
    for (const detail::ParamSpec& s : specs) {
        auto it = p.tensors.find(s.name);
        if (it == p.tensors.end())
            throw format_error("parameter file missing tensor " + s.name + ": " + path);
        if (it->second.shape != s.shape)
            throw format_error("parameter tensor " + s.name + " has wrong shape: " + path);
    }
    return p;
}

inline NetParams load_params(const std::string& path, const NetConfig& expected) {
    NetParams p = load_params(path);
    if (!(p.cfg == expected))
        throw domain_error("parameter file config does not match the requested config: " + path);
    return p;
}

}  // namespace fuselab
