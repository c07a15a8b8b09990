#include <catch2/catch_amalgamated.hpp>

#include "fuselab/pyramid.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace fuselab;

TEST_CASE("gaussian pyramid of a constant plane stays constant", "[pyramid]") {
    Plane p(20, 14, 0.63);
    Pyramid g = gaussian_pyramid(p, 4);
    REQUIRE(g.levels.size() == 4);
    for (const Plane& lev : g.levels)
        for (double v : lev.v) REQUIRE(v == Catch::Approx(0.63).margin(1e-12));
}

TEST_CASE("pyramid level dimensions use ceil halving", "[pyramid]") {
    Rng rng(1);
    Plane p = testutil::random_plane(rng, 17, 9);
    Pyramid g = gaussian_pyramid(p, 3);
    CHECK(g.levels[0].w == 17);
    CHECK(g.levels[0].h == 9);
    CHECK(g.levels[1].w == 9);
    CHECK(g.levels[1].h == 5);
    CHECK(g.levels[2].w == 5);
    CHECK(g.levels[2].h == 3);
}

TEST_CASE("single-level pyramid is the input", "[pyramid]") {
    Rng rng(2);
    Plane p = testutil::random_plane(rng, 8, 8);
    Pyramid g = gaussian_pyramid(p, 1);
    REQUIRE(g.levels.size() == 1);
    CHECK(g.levels[0].v == p.v);
    Pyramid l = laplacian_pyramid(p, 1);
    CHECK(l.levels[0].v == p.v);
    CHECK(collapse(l).v == p.v);
}

TEST_CASE("infeasible level counts are rejected", "[pyramid]") {
    Plane p(8, 8);
    CHECK_THROWS_AS(gaussian_pyramid(p, 0), domain_error);
    CHECK_THROWS_AS(gaussian_pyramid(p, 10), domain_error);
    CHECK_NOTHROW(gaussian_pyramid(p, max_pyramid_levels(8, 8)));
}

TEST_CASE("laplacian round trip reconstructs the input", "[pyramid]") {
    Rng rng(3);
    SECTION("32x32, 4 levels") {
        Plane p = testutil::random_plane(rng, 32, 32);
        Plane r = collapse(laplacian_pyramid(p, 4));
        double max_err = 0.0;
        for (size_t i = 0; i < p.size(); ++i) max_err = std::max(max_err, std::abs(p.v[i] - r.v[i]));
        CHECK(max_err < 1e-6);
    }
    SECTION("odd dimensions") {
        Plane p = testutil::random_plane(rng, 21, 13);
        Plane r = collapse(laplacian_pyramid(p, 3));
        for (size_t i = 0; i < p.size(); ++i) REQUIRE(r.v[i] == Catch::Approx(p.v[i]).margin(1e-9));
    }
    SECTION("constant plane: detail levels vanish") {
        Plane p(16, 16, 0.4);
        Pyramid l = laplacian_pyramid(p, 3);
        for (size_t lev = 0; lev + 1 < l.levels.size(); ++lev)
            for (double v : l.levels[lev].v) REQUIRE(v == Catch::Approx(0.0).margin(1e-12));
        for (double v : l.levels.back().v) REQUIRE(v == Catch::Approx(0.4).margin(1e-12));
        CHECK(collapse(l).v[0] == Catch::Approx(0.4).margin(1e-12));
    }
}

TEST_CASE("pyramids match the straightforward oracle", "[pyramid]") {
    Rng rng(4);
    Plane p = testutil::random_plane(rng, 19, 11);
    Pyramid g = gaussian_pyramid(p, 3);
    std::vector<Plane> go = oracle::gauss_pyr(p, 3);
    for (int l = 0; l < 3; ++l)
        for (size_t i = 0; i < g.levels[l].size(); ++i)
            REQUIRE(g.levels[l].v[i] == Catch::Approx(go[l].v[i]).margin(1e-12));

    Pyramid lp = laplacian_pyramid(p, 3);
    std::vector<Plane> lo = oracle::lap_pyr(p, 3);
    for (int l = 0; l < 3; ++l)
        for (size_t i = 0; i < lp.levels[l].size(); ++i)
            REQUIRE(lp.levels[l].v[i] == Catch::Approx(lo[l].v[i]).margin(1e-12));

    // collapse of an arbitrary (non-laplacian) pyramid matches too
    Pyramid arb;
    arb.levels.push_back(testutil::random_plane(rng, 9, 9));
    arb.levels.push_back(testutil::random_plane(rng, 5, 5));
    arb.levels.push_back(testutil::random_plane(rng, 3, 3));
    Plane c = collapse(arb);
    Plane co = oracle::collapse({arb.levels[0], arb.levels[1], arb.levels[2]});
    for (size_t i = 0; i < c.size(); ++i) REQUIRE(c.v[i] == Catch::Approx(co.v[i]).margin(1e-12));
}

static ExposureStack two_exposure_stack(int w, int h, std::uint64_t seed) {
    // smooth synthetic pair resembling a short/long exposure of one scene
    ExposureStack stack;
    Rng rng(seed);
    double fx = 2.0 * M_PI / w, fy = 2.0 * M_PI / h;
    double ph = rng.next_unit() * 6.28;
    for (double gain : {0.35, 1.9}) {
        Image img(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double base = 0.5 + 0.45 * std::sin(fx * x + ph) * std::cos(fy * y);
                for (int c = 0; c < 3; ++c)
                    img.at(x, y, c) = clamp01(gain * base * (0.9 + 0.05 * c));
            }
        stack.images.push_back(img);
        stack.times.push_back(gain);
    }
    return stack;
}

TEST_CASE("fusing a single image returns it", "[pyramid]") {
    Rng rng(6);
    ExposureStack stack = testutil::random_stack(rng, 32, 32, 1);
    SceneSets sets = make_scene_sets(stack, {0}, {0});
    Image fused = mertens_fuse(sets);
    for (size_t i = 0; i < fused.v.size(); ++i)
        REQUIRE(fused.v[i] == Catch::Approx(stack.images[0].v[i]).margin(1e-6));
}

TEST_CASE("fusing two identical images returns the image", "[pyramid]") {
    Rng rng(7);
    Image img = testutil::random_image(rng, 32, 32);
    ExposureStack stack;
    stack.images = {img, img};
    stack.times = {1.0, 2.0};
    SceneSets sets = make_scene_sets(stack, {0, 1}, {0, 1});
    Image fused = mertens_fuse(sets);
    for (size_t i = 0; i < fused.v.size(); ++i)
        REQUIRE(fused.v[i] == Catch::Approx(img.v[i]).margin(1e-6));
}

TEST_CASE("fusion matches the independent oracle on a synthetic pair", "[pyramid]") {
    ExposureStack stack = two_exposure_stack(64, 64, 123);
    SceneSets sets = make_scene_sets(stack, {0, 1}, {0, 1});
    int levels = default_fusion_levels(64, 64);
    Image fused = mertens_fuse(sets, levels);
    Image ref = oracle::mertens_fuse({stack.images[0], stack.images[1]}, levels);
    double max_err = 0.0;
    for (size_t i = 0; i < fused.v.size(); ++i)
        max_err = std::max(max_err, std::abs(fused.v[i] - ref.v[i]));
    CHECK(max_err < 1e-6);
}

TEST_CASE("fused output stays in range and clamping is mild", "[pyramid]") {
    ExposureStack stack = two_exposure_stack(48, 48, 321);
    SceneSets sets = make_scene_sets(stack, {0, 1}, {0, 1});
    Image fused = mertens_fuse(sets);
    for (double v : fused.v) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
    // unclamped collapse should not stray far outside the range
    Image ref = oracle::mertens_fuse({stack.images[0], stack.images[1]},
                                     default_fusion_levels(48, 48));
    for (size_t i = 0; i < fused.v.size(); ++i)
        REQUIRE(std::abs(fused.v[i] - ref.v[i]) < 0.1);
}
