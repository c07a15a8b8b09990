#include <catch2/catch_amalgamated.hpp>

#include "fuselab/weights.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace fuselab;

TEST_CASE("contrast of a constant image is zero", "[weights]") {
    Image img(8, 6, 0.37);
    Plane c = contrast_map(img);
    for (double v : c.v) CHECK(v == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("contrast impulse response", "[weights]") {
    Image img(7, 7, 0.0);
    for (int ch = 0; ch < 3; ++ch) img.at(3, 3, ch) = 1.0;
    Plane c = contrast_map(img);
    CHECK(c.at(3, 3) == Catch::Approx(4.0).margin(1e-12));
    CHECK(c.at(2, 3) == Catch::Approx(1.0).margin(1e-12));
    CHECK(c.at(3, 2) == Catch::Approx(1.0).margin(1e-12));
    CHECK(c.at(4, 3) == Catch::Approx(1.0).margin(1e-12));
    CHECK(c.at(3, 4) == Catch::Approx(1.0).margin(1e-12));
    CHECK(c.at(5, 5) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("quality maps equal their naive oracles", "[weights]") {
    Rng rng(21);
    Image img = testutil::random_image(rng, 8, 8);
    Plane c = contrast_map(img), co = oracle::contrast(img);
    Plane s = saturation_map(img), so = oracle::saturation(img);
    Plane e = well_exposedness_map(img), eo = oracle::well_exposedness(img);
    for (size_t i = 0; i < c.size(); ++i) {
        REQUIRE(c.v[i] == Catch::Approx(co.v[i]).margin(1e-14));
        REQUIRE(s.v[i] == Catch::Approx(so.v[i]).margin(1e-14));
        REQUIRE(e.v[i] == Catch::Approx(eo.v[i]).margin(1e-14));
    }
}

TEST_CASE("saturation frozen values", "[weights]") {
    Image img(3, 1);
    img.at(0, 0, 0) = img.at(0, 0, 1) = img.at(0, 0, 2) = 0.42;  // gray
    img.at(1, 0, 0) = 1.0;                                       // (1,0,0)
    img.at(2, 0, 0) = img.at(2, 0, 1) = 1.0;                     // (1,1,0)
    Plane s = saturation_map(img);
    CHECK(s.at(0, 0) == 0.0);
    CHECK(s.at(1, 0) == Catch::Approx(0.4714045207910317).margin(1e-12));
    CHECK(s.at(2, 0) == Catch::Approx(0.4714045207910317).margin(1e-12));
}

TEST_CASE("well-exposedness frozen values", "[weights]") {
    Image img(3, 1);
    for (int c = 0; c < 3; ++c) img.at(0, 0, c) = 0.5;
    img.at(1, 0, 0) = 0.7;
    img.at(1, 0, 1) = img.at(1, 0, 2) = 0.5;
    // (2,0) stays (0,0,0)
    Plane e = well_exposedness_map(img);
    CHECK(e.at(0, 0) == Catch::Approx(1.0).margin(1e-15));
    CHECK(e.at(1, 0) == Catch::Approx(0.6065306597126334).margin(1e-12));
    CHECK(e.at(2, 0) == Catch::Approx(8.481823524646916e-05).margin(1e-16));
}

TEST_CASE("raw weight is the product of the three maps plus the floor", "[weights]") {
    Rng rng(33);
    Image img = testutil::random_image(rng, 9, 7);
    Plane w = raw_weight(img);
    Plane c = oracle::contrast(img), s = oracle::saturation(img), e = oracle::well_exposedness(img);
    for (size_t i = 0; i < w.size(); ++i)
        REQUIRE(w.v[i] == Catch::Approx(c.v[i] * s.v[i] * e.v[i] + 1e-12).margin(1e-15));

    // gray image: saturation 0 everywhere, so the floor is all that's left
    Image gray(4, 4, 0.6);
    Plane wg = raw_weight(gray);
    for (double v : wg.v) CHECK(v == Catch::Approx(1e-12).margin(1e-18));
}

TEST_CASE("weight normalization", "[weights]") {
    SECTION("two constant planes") {
        std::vector<Plane> raws = {Plane(4, 3, 0.2), Plane(4, 3, 0.6)};
        std::vector<Plane> n = normalize_weights(raws);
        for (size_t i = 0; i < n[0].size(); ++i) {
            CHECK(n[0].v[i] == Catch::Approx(0.25).margin(1e-12));
            CHECK(n[1].v[i] == Catch::Approx(0.75).margin(1e-12));
        }
    }
    SECTION("single plane normalizes to one") {
        Rng rng(4);
        std::vector<Plane> raws = {testutil::random_plane(rng, 5, 5)};
        for (double& v : raws[0].v) v += 1e-12;
        std::vector<Plane> n = normalize_weights(raws);
        for (double v : n[0].v) CHECK(v == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("floored all-zero raws become uniform") {
        std::vector<Plane> raws = {Plane(3, 3, 1e-12), Plane(3, 3, 1e-12), Plane(3, 3, 1e-12)};
        std::vector<Plane> n = normalize_weights(raws);
        for (const Plane& p : n)
            for (double v : p.v) CHECK(v == Catch::Approx(1.0 / 3.0).margin(1e-9));
    }
    SECTION("dimension mismatch") {
        std::vector<Plane> raws = {Plane(3, 3, 0.1), Plane(4, 3, 0.1)};
        CHECK_THROWS_AS(normalize_weights(raws), shape_error);
    }
}

TEST_CASE("normalized weights sum to one for random stacks", "[weights]") {
    Rng rng(55);
    for (int trial = 0; trial < 5; ++trial) {
        int k = 1 + static_cast<int>(rng.next_below(4));
        std::vector<Plane> raws;
        for (int i = 0; i < k; ++i) {
            Plane p = testutil::random_plane(rng, 12, 9);
            for (double& v : p.v) v += 1e-12;
            raws.push_back(p);
        }
        std::vector<Plane> n = normalize_weights(raws);
        for (size_t px = 0; px < n[0].size(); ++px) {
            double sum = 0.0;
            for (const Plane& p : n) {
                sum += p.v[px];
                REQUIRE(p.v[px] >= 0.0);
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
        }
    }
}

TEST_CASE("guided filter matches the windowed-regression oracle", "[weights]") {
    Rng rng(66);
    Plane guide = testutil::random_plane(rng, 16, 16);
    Plane input = testutil::random_plane(rng, 16, 16);
    Plane out = guided_filter(guide, input, 2, 0.01);
    Plane ref = oracle::guided_filter(guide, input, 2, 0.01);
    for (size_t i = 0; i < out.size(); ++i)
        REQUIRE(out.v[i] == Catch::Approx(ref.v[i]).margin(1e-10));

    // odd sizes and a bigger radius
    Plane g2 = testutil::random_plane(rng, 13, 9);
    Plane i2 = testutil::random_plane(rng, 13, 9);
    Plane o2 = guided_filter(g2, i2, 3, 0.04);
    Plane r2 = oracle::guided_filter(g2, i2, 3, 0.04);
    for (size_t i = 0; i < o2.size(); ++i)
        REQUIRE(o2.v[i] == Catch::Approx(r2.v[i]).margin(1e-10));
}

TEST_CASE("guided filter limits", "[weights]") {
    Rng rng(77);
    SECTION("constant input passes through exactly") {
        Plane guide = testutil::random_plane(rng, 10, 10);
        Plane input(10, 10, 0.42);
        Plane out = guided_filter(guide, input, 2, 0.01);
        for (double v : out.v) CHECK(v == Catch::Approx(0.42).margin(1e-12));
    }
    SECTION("huge eps degenerates into double box blur") {
        Plane p = testutil::random_plane(rng, 12, 12);
        Plane out = guided_filter(p, p, 2, 1e8);
        Plane ref = detail::box_mean(detail::box_mean(p, 2), 2);
        for (size_t i = 0; i < out.size(); ++i)
            CHECK(out.v[i] == Catch::Approx(ref.v[i]).margin(1e-6));
    }
    SECTION("input validation") {
        Plane a(4, 4), b(5, 4);
        CHECK_THROWS_AS(guided_filter(a, b, 2, 0.01), shape_error);
        CHECK_THROWS_AS(guided_filter(a, a, 0, 0.01), domain_error);
        CHECK_THROWS_AS(guided_filter(a, a, 2, 0.0), domain_error);
    }
}

TEST_CASE("smoothed weights keep the partition of unity", "[weights]") {
    Rng rng(88);
    SECTION("single-image measure set is identically one") {
        ExposureStack stack = testutil::random_stack(rng, 16, 16, 1);
        SceneSets sets = make_scene_sets(stack, {0}, {0});
        WeightSet ws = smoothed_weights(sets);
        for (double v : ws.smoothed[0].v) CHECK(v == Catch::Approx(1.0).margin(1e-9));
    }
    SECTION("two identical images split evenly") {
        Image img = testutil::random_image(rng, 16, 16);
        ExposureStack stack;
        stack.images = {img, img};
        stack.times = {1.0, 2.0};
        SceneSets sets = make_scene_sets(stack, {0, 1}, {0, 1});
        WeightSet ws = smoothed_weights(sets);
        for (const Plane& p : ws.smoothed)
            for (double v : p.v) CHECK(v == Catch::Approx(0.5).margin(1e-9));
    }
    SECTION("random stack sums to one per pixel") {
        ExposureStack stack = testutil::random_stack(rng, 24, 18, 3);
        SceneSets sets = make_scene_sets(stack, {0, 2}, {0, 1, 2});
        WeightSet ws = smoothed_weights(sets);
        for (size_t px = 0; px < ws.smoothed[0].size(); ++px) {
            double sum = 0.0;
            for (const Plane& p : ws.smoothed) {
                sum += p.v[px];
                REQUIRE(p.v[px] >= 0.0);
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
        }
        for (const Plane& p : ws.raw)
            for (double v : p.v) REQUIRE(v >= 0.0);
    }
}
