#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "fuselab/common.hpp"

namespace fuselab::ad {

// Dense 64-bit tensor, rank <= 4, shapes interpreted as (N, C, H, W) with
// lower ranks right-aligned for broadcasting.
struct TensorData {
    std::vector<int> shape;
    std::vector<double> v;

    TensorData() = default;
    explicit TensorData(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
        v.assign(static_cast<size_t>(numel_of(shape)), fill);
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d < 1) throw shape_error("tensor dims must be >= 1");
            n *= d;
        }
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[i]; }
};

inline bool same_shape(const TensorData& a, const TensorData& b) { return a.shape == b.shape; }

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + ")";
}

inline void check_finite(const TensorData& t, const char* op) {
    double acc = 0.0;
    for (double x : t.v) acc += std::abs(x);
    if (!std::isfinite(acc))
        throw error(std::string("non-finite value produced by op '") + op + "'");
}

// Recorded computation graph. Nodes are appended in execution order, so
// reverse id order is a topological order for the backward sweep.
class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;
};

class Tape {
public:
    struct Node {
        TensorData val;
        std::vector<double> grad;  // allocated lazily during backward
        bool requires_grad = false;
        std::function<void(Tape&)> back;  // accumulates into parent grads
    };

    Var leaf(TensorData val, bool requires_grad) {
        check_finite(val, "leaf");
        Node n;
        n.val = std::move(val);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    Var constant(TensorData val) { return leaf(std::move(val), false); }

    Var scalar(double x, bool requires_grad = false) {
        TensorData t({1});
        t.v[0] = x;
        return leaf(std::move(t), requires_grad);
    }

    Var record(TensorData val, const std::vector<int>& parents, std::function<void(Tape&)> back,
               const char* op) {
        check_finite(val, op);
        Node n;
        n.val = std::move(val);
        for (int p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
        if (n.requires_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    const TensorData& val(Var x) const { return nodes_[x.id].val; }
    const TensorData& val(int id) const { return nodes_[id].val; }
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }

    // Gradient buffer of a node, allocated zeroed on first touch.
    std::vector<double>& grad_buf(int id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(n.val.v.size(), 0.0);
        return n.grad;
    }
    bool has_grad(int id) const { return !nodes_[id].grad.empty(); }

    // Reverse sweep from a scalar output. Each node is visited exactly
    // once, in reverse creation order.
    void backward(Var out) {
        if (nodes_[out.id].val.numel() != 1)
            throw shape_error("backward: output must be a scalar");
        if (!nodes_[out.id].requires_grad)
            throw domain_error("backward: output does not depend on any parameter");
        grad_buf(out.id)[0] = 1.0;
        for (int i = out.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty() || !n.back) continue;
            n.back(*this);
        }
    }

    TensorData grad_of(Var x) const {
        TensorData g(nodes_[x.id].val.shape);
        if (!nodes_[x.id].grad.empty()) g.v = nodes_[x.id].grad;
        return g;
    }

    void clear() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

namespace detail {

inline std::vector<int> pad4(const std::vector<int>& s) {
    std::vector<int> out(4, 1);
    for (size_t i = 0; i < s.size(); ++i) out[4 - s.size() + i] = s[i];
    return out;
}

struct Bcast {
    std::vector<int> out_shape;       // original rank preserved
    int od[4];                        // padded output dims
    std::int64_t sa[4], sb[4];        // strides, 0 on broadcast dims
};

inline Bcast broadcast_shapes(const TensorData& a, const TensorData& b, const char* op) {
    std::vector<int> pa = pad4(a.shape), pb = pad4(b.shape);
    Bcast bc;
    std::vector<int> po(4);
    for (int i = 0; i < 4; ++i) {
        if (pa[i] == pb[i]) po[i] = pa[i];
        else if (pa[i] == 1) po[i] = pb[i];
        else if (pb[i] == 1) po[i] = pa[i];
        else
            throw shape_error(std::string(op) + ": incompatible shapes " + shape_str(a.shape) +
                              " and " + shape_str(b.shape));
    }
    std::int64_t stra = 1, strb = 1;
    for (int i = 3; i >= 0; --i) {
        bc.sa[i] = pa[i] == 1 ? 0 : stra;
        bc.sb[i] = pb[i] == 1 ? 0 : strb;
        stra *= pa[i];
        strb *= pb[i];
        bc.od[i] = po[i];
    }
    size_t rank = std::max(a.shape.size(), b.shape.size());
    bc.out_shape.assign(po.end() - rank, po.end());
    return bc;
}

}  // namespace detail

// --- elementwise binaries with broadcasting ---

template <class FwdFn, class BackFn>
inline Var binary_broadcast(Var a, Var b, FwdFn fwd, BackFn bck, const char* op) {
    Tape& t = *a.tape;
    const TensorData& av = t.val(a);
    const TensorData& bv = t.val(b);
    detail::Bcast bc = detail::broadcast_shapes(av, bv, op);

    TensorData out(bc.out_shape);
    std::int64_t i = 0;
    for (int d0 = 0; d0 < bc.od[0]; ++d0)
        for (int d1 = 0; d1 < bc.od[1]; ++d1)
            for (int d2 = 0; d2 < bc.od[2]; ++d2) {
                std::int64_t ia = d0 * bc.sa[0] + d1 * bc.sa[1] + d2 * bc.sa[2];
                std::int64_t ib = d0 * bc.sb[0] + d1 * bc.sb[1] + d2 * bc.sb[2];
                for (int d3 = 0; d3 < bc.od[3]; ++d3)
                    out.v[i++] = fwd(av.v[ia + d3 * bc.sa[3]], bv.v[ib + d3 * bc.sb[3]]);
            }

    int aid = a.id, bid = b.id;
    int self_id = static_cast<int>(t.size());
    auto backfn = [aid, bid, bc, bck, self_id](Tape& tp) {
        const std::vector<double>& g = tp.grad_buf(self_id);
        const TensorData& av2 = tp.val(aid);
        const TensorData& bv2 = tp.val(bid);
        bool need_a = tp.requires_grad(aid), need_b = tp.requires_grad(bid);
        std::vector<double>* ga = need_a ? &tp.grad_buf(aid) : nullptr;
        std::vector<double>* gb = need_b ? &tp.grad_buf(bid) : nullptr;
        std::int64_t i = 0;
        for (int d0 = 0; d0 < bc.od[0]; ++d0)
            for (int d1 = 0; d1 < bc.od[1]; ++d1)
                for (int d2 = 0; d2 < bc.od[2]; ++d2) {
                    std::int64_t ia = d0 * bc.sa[0] + d1 * bc.sa[1] + d2 * bc.sa[2];
                    std::int64_t ib = d0 * bc.sb[0] + d1 * bc.sb[1] + d2 * bc.sb[2];
                    for (int d3 = 0; d3 < bc.od[3]; ++d3, ++i) {
                        double va = av2.v[ia + d3 * bc.sa[3]];
                        double vb = bv2.v[ib + d3 * bc.sb[3]];
                        double da = 0.0, db = 0.0;
                        bck(va, vb, g[i], da, db);
                        if (ga) (*ga)[ia + d3 * bc.sa[3]] += da;
                        if (gb) (*gb)[ib + d3 * bc.sb[3]] += db;
                    }
                }
    };
    return t.record(std::move(out), {aid, bid}, std::move(backfn), op);
}

inline Var add(Var a, Var b) {
    return binary_broadcast(
        a, b, [](double x, double y) { return x + y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = g;
        },
        "add");
}

inline Var sub(Var a, Var b) {
    return binary_broadcast(
        a, b, [](double x, double y) { return x - y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = -g;
        },
        "sub");
}

inline Var mul(Var a, Var b) {
    return binary_broadcast(
        a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& da, double& db) {
            da = g * y;
            db = g * x;
        },
        "mul");
}

inline Var div(Var a, Var b) {
    return binary_broadcast(
        a, b, [](double x, double y) { return x / y; },
        [](double x, double y, double g, double& da, double& db) {
            da = g / y;
            db = -g * x / (y * y);
        },
        "div");
}

// --- elementwise unaries ---

template <class FwdFn, class BackFn>
inline Var unary_op(Var a, FwdFn fwd, BackFn bck, const char* op) {
    Tape& t = *a.tape;
    const TensorData& av = t.val(a);
    TensorData out(av.shape);
    for (size_t i = 0; i < av.v.size(); ++i) out.v[i] = fwd(av.v[i]);

    int aid = a.id;
    int self_id = static_cast<int>(t.size());
    auto backfn = [aid, self_id, bck](Tape& tp) {
        const std::vector<double>& g = tp.grad_buf(self_id);
        const TensorData& av2 = tp.val(aid);
        const TensorData& ov = tp.val(self_id);
        std::vector<double>& ga = tp.grad_buf(aid);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bck(av2.v[i], ov.v[i]);
    };
    return t.record(std::move(out), {aid}, std::move(backfn), op);
}

inline Var abs_op(Var a) {
    return unary_op(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }, "abs");
}

inline Var leaky_relu(Var a, double slope) {
    return unary_op(
        a, [slope](double x) { return x >= 0.0 ? x : slope * x; },
        [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; }, "leaky_relu");
}

inline Var sigmoid(Var a) {
    return unary_op(
        a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

inline Var add_const(Var a, double c) {
    return unary_op(
        a, [c](double x) { return x + c; }, [](double, double) { return 1.0; }, "add_const");
}

inline Var mul_const(Var a, double c) {
    return unary_op(
        a, [c](double x) { return x * c; }, [c](double, double) { return c; }, "mul_const");
}

// c - x
inline Var rsub_const(double c, Var a) {
    return unary_op(
        a, [c](double x) { return c - x; }, [](double, double) { return -1.0; }, "rsub_const");
}

// --- reductions ---

inline Var sum_all(Var a) {
    Tape& t = *a.tape;
    const TensorData& av = t.val(a);
    TensorData out({1});
    double s = 0.0;
    for (double x : av.v) s += x;
    out.v[0] = s;
    int aid = a.id;
    int self_id = static_cast<int>(t.size());
    auto backfn = [aid, self_id](Tape& tp) {
        double g = tp.grad_buf(self_id)[0];
        std::vector<double>& ga = tp.grad_buf(aid);
        for (double& x : ga) x += g;
    };
    return t.record(std::move(out), {aid}, std::move(backfn), "sum");
}

inline Var mean_all(Var a) {
    Tape& t = *a.tape;
    double inv_n = 1.0 / static_cast<double>(t.val(a).numel());
    return mul_const(sum_all(a), inv_n);
}

// out[i] = flat(a)[indices[i]]
inline Var gather(Var a, std::vector<std::int64_t> indices) {
    Tape& t = *a.tape;
    const TensorData& av = t.val(a);
    TensorData out({static_cast<int>(indices.size())});
    for (size_t i = 0; i < indices.size(); ++i) out.v[i] = av.v[indices[i]];
    int aid = a.id;
    int self_id = static_cast<int>(t.size());
    auto backfn = [aid, self_id, idx = std::move(indices)](Tape& tp) {
        const std::vector<double>& g = tp.grad_buf(self_id);
        std::vector<double>& ga = tp.grad_buf(aid);
        for (size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
    };
    return t.record(std::move(out), {aid}, std::move(backfn), "gather");
}

// --- rank-4 structured ops ---

inline void expect_rank4(const TensorData& t, const char* op) {
    if (t.rank() != 4) throw shape_error(std::string(op) + ": expected rank-4 tensor");
}

inline Var concat_ch(Var a, Var b) {
    Tape& t = *a.tape;
    const TensorData& av = t.val(a);
    const TensorData& bv = t.val(b);
    expect_rank4(av, "concat");
    expect_rank4(bv, "concat");
    if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
        throw shape_error("concat: spatial/batch dims differ");
    int ca = av.dim(1), cb = bv.dim(1);
    TensorData out({av.dim(0), ca + cb, av.dim(2), av.dim(3)});
    size_t plane = static_cast<size_t>(av.dim(2)) * av.dim(3);
    for (int n = 0; n < av.dim(0); ++n) {
        std::copy(av.v.begin() + n * ca * plane, av.v.begin() + (n + 1) * ca * plane,
                  out.v.begin() + n * (ca + cb) * plane);
        std::copy(bv.v.begin() + n * cb * plane, bv.v.begin() + (n + 1) * cb * plane,
                  out.v.begin() + n * (ca + cb) * plane + ca * plane);
    }
    int aid = a.id, bid = b.id;
    int self_id = static_cast<int>(t.size());
    auto backfn = [aid, bid, self_id, ca, cb, plane](Tape& tp) {
        const std::vector<double>& g = tp.grad_buf(self_id);
        int n_batch = tp.val(self_id).dim(0);
        if (tp.requires_grad(aid)) {
            std::vector<double>& ga = tp.grad_buf(aid);
            for (int n = 0; n < n_batch; ++n)
                for (size_t i = 0; i < static_cast<size_t>(ca) * plane; ++i)
                    ga[n * ca * plane + i] += g[n * (ca + cb) * plane + i];
        }
        if (tp.requires_grad(bid)) {
            std::vector<double>& gb = tp.grad_buf(bid);
            for (int n = 0; n < n_batch; ++n)
                for (size_t i = 0; i < static_cast<size_t>(cb) * plane; ++i)
                    gb[n * cb * plane + i] += g[n * (ca + cb) * plane + ca * plane + i];
        }
    };
    return t.record(std::move(out), {aid, bid}, std::move(backfn), "concat");
}

inline Var global_avg_pool(Var a) {
    Tape& t = *a.tape;
    const TensorData& av = t.val(a);
    expect_rank4(av, "global_avg_pool");
    int n = av.dim(0), c = av.dim(1), h = av.dim(2), w = av.dim(3);
    TensorData out({n, c, 1, 1});
    size_t plane = static_cast<size_t>(h) * w;
    double inv = 1.0 / static_cast<double>(plane);
    for (int i = 0; i < n * c; ++i) {
        double s = 0.0;
        for (size_t p = 0; p < plane; ++p) s += av.v[i * plane + p];
        out.v[i] = s * inv;
    }
    int aid = a.id;
    int self_id = static_cast<int>(t.size());
    auto backfn = [aid, self_id, plane, inv](Tape& tp) {
        const std::vector<double>& g = tp.grad_buf(self_id);
        std::vector<double>& ga = tp.grad_buf(aid);
        for (size_t i = 0; i < g.size(); ++i) {
            double gi = g[i] * inv;
            for (size_t p = 0; p < plane; ++p) ga[i * plane + p] += gi;
        }
    };
    return t.record(std::move(out), {aid}, std::move(backfn), "global_avg_pool");
}

// max over channels; ties routed to the lowest channel index
inline Var channel_max_pool(Var a) {
    Tape& t = *a.tape;
    const TensorData& av = t.val(a);
    expect_rank4(av, "channel_max_pool");
    int c = av.dim(1), h = av.dim(2), w = av.dim(3);
    size_t plane = static_cast<size_t>(h) * w;
    TensorData out({av.dim(0), 1, h, w});
    std::vector<int> argmax(plane);
    for (size_t p = 0; p < plane; ++p) {
        double best = av.v[p];
        int bc = 0;
        for (int ch = 1; ch < c; ++ch) {
            double x = av.v[ch * plane + p];
            if (x > best) {
                best = x;
                bc = ch;
            }
        }
        out.v[p] = best;
        argmax[p] = bc;
    }
    int aid = a.id;
    int self_id = static_cast<int>(t.size());
    auto backfn = [aid, self_id, plane, am = std::move(argmax)](Tape& tp) {
        const std::vector<double>& g = tp.grad_buf(self_id);
        std::vector<double>& ga = tp.grad_buf(aid);
        for (size_t p = 0; p < plane; ++p) ga[am[p] * plane + p] += g[p];
    };
    return t.record(std::move(out), {aid}, std::move(backfn), "channel_max_pool");
}

inline Var channel_avg_pool(Var a) {
    Tape& t = *a.tape;
    const TensorData& av = t.val(a);
    expect_rank4(av, "channel_avg_pool");
    int c = av.dim(1), h = av.dim(2), w = av.dim(3);
    size_t plane = static_cast<size_t>(h) * w;
    TensorData out({av.dim(0), 1, h, w});
    double inv = 1.0 / c;
    for (size_t p = 0; p < plane; ++p) {
        double s = 0.0;
        for (int ch = 0; ch < c; ++ch) s += av.v[ch * plane + p];
        out.v[p] = s * inv;
    }
    int aid = a.id;
    int self_id = static_cast<int>(t.size());
    auto backfn = [aid, self_id, plane, c, inv](Tape& tp) {
        const std::vector<double>& g = tp.grad_buf(self_id);
        std::vector<double>& ga = tp.grad_buf(aid);
        for (size_t p = 0; p < plane; ++p) {
            double gi = g[p] * inv;
            for (int ch = 0; ch < c; ++ch) ga[ch * plane + p] += gi;
        }
    };
    return t.record(std::move(out), {aid}, std::move(backfn), "channel_avg_pool");
}

// --- resampling ---

namespace detail {

// Per-output-index taps of a 1-D linear resampler.
struct AxisMap {
    int taps = 0;
    std::vector<int> idx;     // out_n * taps source indices (clamped)
    std::vector<double> wt;   // matching weights
    int out_n = 0;
};

inline double cubic_kernel(double t) {  // Catmull-Rom, a = -0.5
    t = std::abs(t);
    if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
    if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
    return 0.0;
}

inline AxisMap make_axis_map(int in_n, int out_n, bool cubic) {
    AxisMap m;
    m.taps = cubic ? 4 : 2;
    m.out_n = out_n;
    m.idx.resize(static_cast<size_t>(out_n) * m.taps);
    m.wt.resize(static_cast<size_t>(out_n) * m.taps);
    double scale = static_cast<double>(in_n) / out_n;
    for (int o = 0; o < out_n; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        int base = static_cast<int>(std::floor(src));
        double t = src - base;
        if (cubic) {
            double w[4] = {cubic_kernel(t + 1.0), cubic_kernel(t), cubic_kernel(1.0 - t),
                           cubic_kernel(2.0 - t)};
            for (int k = 0; k < 4; ++k) {
                m.idx[o * 4 + k] = std::clamp(base - 1 + k, 0, in_n - 1);
                m.wt[o * 4 + k] = w[k];
            }
        } else {
            m.idx[o * 2] = std::clamp(base, 0, in_n - 1);
            m.idx[o * 2 + 1] = std::clamp(base + 1, 0, in_n - 1);
            m.wt[o * 2] = 1.0 - t;
            m.wt[o * 2 + 1] = t;
        }
    }
    return m;
}

}  // namespace detail

// Resample one spatial axis of a (N,C,H,W) tensor through a fixed linear
// map; the backward pass is the transpose (scatter with the same taps).
inline Var axis_resample(Var a, bool along_w, detail::AxisMap map) {
    Tape& t = *a.tape;
    const TensorData& av = t.val(a);
    expect_rank4(av, "resample");
    int n = av.dim(0), c = av.dim(1), h = av.dim(2), w = av.dim(3);
    int oh = along_w ? h : map.out_n;
    int ow = along_w ? map.out_n : w;
    TensorData out({n, c, oh, ow});
    const int taps = map.taps;
    for (int img = 0; img < n * c; ++img) {
        const double* src = &av.v[static_cast<size_t>(img) * h * w];
        double* dst = &out.v[static_cast<size_t>(img) * oh * ow];
        if (along_w) {
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < ow; ++x) {
                    double s = 0.0;
                    for (int k = 0; k < taps; ++k)
                        s += map.wt[x * taps + k] * src[y * w + map.idx[x * taps + k]];
                    dst[y * ow + x] = s;
                }
        } else {
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < w; ++x) {
                    double s = 0.0;
                    for (int k = 0; k < taps; ++k)
                        s += map.wt[y * taps + k] * src[map.idx[y * taps + k] * w + x];
                    dst[y * ow + x] = s;
                }
        }
    }
    int aid = a.id;
    int self_id = static_cast<int>(t.size());
    auto backfn = [aid, self_id, along_w, m = std::move(map), h, w](Tape& tp) {
        const std::vector<double>& g = tp.grad_buf(self_id);
        std::vector<double>& ga = tp.grad_buf(aid);
        const TensorData& ov = tp.val(self_id);
        int n2 = ov.dim(0), c2 = ov.dim(1), oh2 = ov.dim(2), ow2 = ov.dim(3);
        const int taps = m.taps;
        for (int img = 0; img < n2 * c2; ++img) {
            const double* gsrc = &g[static_cast<size_t>(img) * oh2 * ow2];
            double* gdst = &ga[static_cast<size_t>(img) * h * w];
            if (along_w) {
                for (int y = 0; y < oh2; ++y)
                    for (int x = 0; x < ow2; ++x)
                        for (int k = 0; k < taps; ++k)
                            gdst[y * w + m.idx[x * taps + k]] += m.wt[x * taps + k] * gsrc[y * ow2 + x];
            } else {
                for (int y = 0; y < oh2; ++y)
                    for (int x = 0; x < ow2; ++x)
                        for (int k = 0; k < taps; ++k)
                            gdst[m.idx[y * taps + k] * w + x] += m.wt[y * taps + k] * gsrc[y * ow2 + x];
            }
        }
    };
    return t.record(std::move(out), {aid}, std::move(backfn), "resample");
}

inline Var bilinear_resample(Var a, int out_h, int out_w) {
    const TensorData& av = a.tape->val(a);
    expect_rank4(av, "bilinear_resample");
    Var x = axis_resample(a, true, detail::make_axis_map(av.dim(3), out_w, false));
    return axis_resample(x, false, detail::make_axis_map(av.dim(2), out_h, false));
}

inline Var bicubic_resample(Var a, int out_h, int out_w) {
    const TensorData& av = a.tape->val(a);
    expect_rank4(av, "bicubic_resample");
    Var x = axis_resample(a, true, detail::make_axis_map(av.dim(3), out_w, true));
    return axis_resample(x, false, detail::make_axis_map(av.dim(2), out_h, true));
}

inline Var bicubic_downsample_half(Var a) {
    const TensorData& av = a.tape->val(a);
    expect_rank4(av, "bicubic_downsample");
    return bicubic_resample(a, (av.dim(2) + 1) / 2, (av.dim(3) + 1) / 2);
}

// --- convolution (stride 1, zero padding) ---

inline Var conv2d(Var x, Var w, Var b, int pad) {
    Tape& t = *x.tape;
    const TensorData& xv = t.val(x);
    const TensorData& wv = t.val(w);
    const TensorData& bv = t.val(b);
    expect_rank4(xv, "conv2d");
    expect_rank4(wv, "conv2d");
    if (xv.dim(0) != 1) throw shape_error("conv2d: batch must be 1");
    int cin = xv.dim(1), h = xv.dim(2), win = xv.dim(3);
    int cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (wv.dim(1) != cin)
        throw shape_error("conv2d: weight expects " + std::to_string(wv.dim(1)) +
                          " input channels, got " + std::to_string(cin));
    if (bv.numel() != cout) throw shape_error("conv2d: bias size mismatch");
    int oh = h + 2 * pad - kh + 1, ow = win + 2 * pad - kw + 1;
    if (oh < 1 || ow < 1) throw shape_error("conv2d: kernel larger than padded input");

    TensorData out({1, cout, oh, ow});
    const size_t iplane = static_cast<size_t>(h) * win;
    const size_t oplane = static_cast<size_t>(oh) * ow;
    for (int oc = 0; oc < cout; ++oc) {
        double* op = &out.v[oc * oplane];
        double bias = bv.v[oc];
        for (size_t i = 0; i < oplane; ++i) op[i] = bias;
        for (int ic = 0; ic < cin; ++ic) {
            const double* ip = &xv.v[ic * iplane];
            const double* wp = &wv.v[(static_cast<size_t>(oc) * cin + ic) * kh * kw];
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    double wval = wp[ky * kw + kx];
                    if (wval == 0.0) continue;
                    int xs = std::max(0, pad - kx);
                    int xe = std::min(ow, win + pad - kx);
                    if (xs >= xe) continue;
                    for (int oy = 0; oy < oh; ++oy) {
                        int iy = oy + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        const double* irow = ip + static_cast<size_t>(iy) * win + (xs + kx - pad);
                        double* orow = op + static_cast<size_t>(oy) * ow + xs;
                        for (int i = 0; i < xe - xs; ++i) orow[i] += wval * irow[i];
                    }
                }
        }
    }

    int xid = x.id, wid = w.id, bid = b.id;
    int self_id = static_cast<int>(t.size());
    auto backfn = [xid, wid, bid, self_id, pad, cin, cout, h, win, kh, kw, oh, ow, iplane,
                   oplane](Tape& tp) {
        const std::vector<double>& g = tp.grad_buf(self_id);
        const TensorData& xv2 = tp.val(xid);
        const TensorData& wv2 = tp.val(wid);

        if (tp.requires_grad(bid)) {
            std::vector<double>& gb = tp.grad_buf(bid);
            for (int oc = 0; oc < cout; ++oc) {
                double s = 0.0;
                const double* gp = &g[oc * oplane];
                for (size_t i = 0; i < oplane; ++i) s += gp[i];
                gb[oc] += s;
            }
        }
        if (tp.requires_grad(wid)) {
            std::vector<double>& gw = tp.grad_buf(wid);
            for (int oc = 0; oc < cout; ++oc) {
                const double* gp = &g[oc * oplane];
                for (int ic = 0; ic < cin; ++ic) {
                    const double* ip = &xv2.v[ic * iplane];
                    double* gwp = &gw[(static_cast<size_t>(oc) * cin + ic) * kh * kw];
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            int xs = std::max(0, pad - kx);
                            int xe = std::min(ow, win + pad - kx);
                            if (xs >= xe) continue;
                            double acc = 0.0;
                            for (int oy = 0; oy < oh; ++oy) {
                                int iy = oy + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                const double* irow =
                                    ip + static_cast<size_t>(iy) * win + (xs + kx - pad);
                                const double* grow = gp + static_cast<size_t>(oy) * ow + xs;
                                for (int i = 0; i < xe - xs; ++i) acc += grow[i] * irow[i];
                            }
                            gwp[ky * kw + kx] += acc;
                        }
                }
            }
        }
        if (tp.requires_grad(xid)) {
            std::vector<double>& gx = tp.grad_buf(xid);
            for (int ic = 0; ic < cin; ++ic) {
                double* gxp = &gx[ic * iplane];
                for (int oc = 0; oc < cout; ++oc) {
                    const double* gp = &g[oc * oplane];
                    const double* wp = &wv2.v[(static_cast<size_t>(oc) * cin + ic) * kh * kw];
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            double wval = wp[ky * kw + kx];
                            if (wval == 0.0) continue;
                            int xs = std::max(0, pad - kx);
                            int xe = std::min(ow, win + pad - kx);
                            if (xs >= xe) continue;
                            for (int oy = 0; oy < oh; ++oy) {
                                int iy = oy + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                double* gxrow =
                                    gxp + static_cast<size_t>(iy) * win + (xs + kx - pad);
                                const double* grow = gp + static_cast<size_t>(oy) * ow + xs;
                                for (int i = 0; i < xe - xs; ++i) gxrow[i] += wval * grow[i];
                            }
                        }
                }
            }
        }
    };
    return t.record(std::move(out), {xid, wid, bid}, std::move(backfn), "conv2d");
}

// --- finite-difference checking ---

// f builds a scalar graph from a single leaf on the given tape.
template <class F>
inline double grad_check(F&& f, const TensorData& x0, double eps = 1e-3, int max_coords = -1,
                         std::uint64_t pick_seed = 17) {
    TensorData analytic;
    {
        Tape t;
        Var x = t.leaf(x0, true);
        Var y = f(t, x);
        t.backward(y);
        analytic = t.grad_of(x);
    }
    auto eval = [&](const TensorData& xv) {
        Tape t;
        Var x = t.leaf(xv, false);
        // the output may not depend on requires_grad inputs; evaluate only
        Var y = f(t, x);
        return t.val(y).v[0];
    };

    std::vector<std::int64_t> coords;
    std::int64_t n = x0.numel();
    if (max_coords > 0 && n > max_coords) {
        Rng rng(pick_seed);
        std::vector<std::int64_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        rng.shuffle(all);
        coords.assign(all.begin(), all.begin() + max_coords);
    } else {
        coords.resize(n);
        std::iota(coords.begin(), coords.end(), 0);
    }

    double worst = 0.0;
    for (std::int64_t i : coords) {
        TensorData xp = x0, xm = x0;
        xp.v[i] += eps;
        xm.v[i] -= eps;
        double numeric = (eval(xp) - eval(xm)) / (2.0 * eps);
        double a = analytic.v[i];
        double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace fuselab::ad
