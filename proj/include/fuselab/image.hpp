#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "fuselab/common.hpp"

namespace fuselab {

// Single-channel raster, row major. Values are nominally in [0,1] but
// intermediate maps (weights, Laplacian levels) may leave that range.
struct Plane {
    int w = 0;
    int h = 0;
    std::vector<double> v;

    Plane() = default;
    Plane(int width, int height, double fill = 0.0)
        : w(width), h(height), v(static_cast<size_t>(width) * height, fill) {
        if (width < 1 || height < 1) throw shape_error("Plane dimensions must be >= 1");
    }

    double& at(int x, int y) { return v[static_cast<size_t>(y) * w + x]; }
    double at(int x, int y) const { return v[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return v.size(); }
};

// 3-channel RGB raster, row major, interleaved.
struct Image {
    int w = 0;
    int h = 0;
    std::vector<double> v;

    Image() = default;
    Image(int width, int height, double fill = 0.0)
        : w(width), h(height), v(static_cast<size_t>(width) * height * 3, fill) {
        if (width < 1 || height < 1) throw shape_error("Image dimensions must be >= 1");
    }

    double& at(int x, int y, int c) { return v[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    double at(int x, int y, int c) const { return v[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    size_t pixels() const { return static_cast<size_t>(w) * h; }
};

// BT.601 luma; the inputs are gamma-encoded 8-bit captures.
inline Plane to_luminance(const Image& img) {
    Plane out(img.w, img.h);
    for (size_t p = 0; p < img.pixels(); ++p) {
        out.v[p] = 0.299 * img.v[3 * p] + 0.587 * img.v[3 * p + 1] + 0.114 * img.v[3 * p + 2];
    }
    return out;
}

// Ordered bracket {Z_k, dt_k}, times strictly increasing.
struct ExposureStack {
    std::vector<Image> images;
    std::vector<double> times;

    void validate() const {
        if (images.empty()) throw domain_error("exposure stack is empty");
        if (images.size() != times.size())
            throw domain_error("exposure stack: image/time count mismatch");
        for (size_t k = 0; k < images.size(); ++k) {
            if (images[k].w != images[0].w || images[k].h != images[0].h)
                throw shape_error("exposure stack: image " + std::to_string(k) +
                                  " has mismatched dimensions");
            if (times[k] <= 0.0) throw domain_error("exposure times must be positive");
            if (k > 0 && !(times[k - 1] < times[k]))
                throw domain_error("exposure times must be strictly increasing");
        }
    }

    int width() const { return images.at(0).w; }
    int height() const { return images.at(0).h; }
    size_t count() const { return images.size(); }
};

// A bracket plus the index lists realizing the fusion set and the
// measurement set. Indices are zero based and must satisfy
// fuse_idx subset-of measure_idx subset-of {0..K-1}.
struct SceneSets {
    ExposureStack stack;
    std::vector<int> fuse_idx;
    std::vector<int> measure_idx;

    const Image& fuse_image(size_t i) const { return stack.images[fuse_idx[i]]; }
    const Image& measure_image(size_t i) const { return stack.images[measure_idx[i]]; }
    size_t fuse_count() const { return fuse_idx.size(); }
    size_t measure_count() const { return measure_idx.size(); }
};

inline void check_index_list(const std::vector<int>& idx, size_t k, const char* name) {
    if (idx.empty()) throw domain_error(std::string(name) + " index list is empty");
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<size_t>(idx[i]) >= k)
            throw domain_error(std::string(name) + " index " + std::to_string(idx[i]) +
                               " out of range for stack of size " + std::to_string(k));
        if (i > 0 && idx[i - 1] >= idx[i])
            throw domain_error(std::string(name) + " indices must be strictly increasing");
    }
}

inline SceneSets make_scene_sets(ExposureStack stack, std::vector<int> fuse_idx,
                                 std::vector<int> measure_idx) {
    stack.validate();
    check_index_list(fuse_idx, stack.count(), "fuse");
    check_index_list(measure_idx, stack.count(), "measure");
    // fuse set must be contained in the measure set
    for (int f : fuse_idx) {
        if (!std::binary_search(measure_idx.begin(), measure_idx.end(), f))
            throw domain_error("fuse index " + std::to_string(f) +
                               " is not contained in the measure set");
    }
    return SceneSets{std::move(stack), std::move(fuse_idx), std::move(measure_idx)};
}

inline Image clamp_image(Image img) {
    for (double& x : img.v) x = clamp01(x);
    return img;
}

}  // namespace fuselab
