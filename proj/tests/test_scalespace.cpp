#include "blobsurrogate/error.hpp"
#include "blobsurrogate/phantom.hpp"
#include "blobsurrogate/scalespace.hpp"

#include "golden/log_golden.hpp"
#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

using namespace blobsurrogate;
using Catch::Approx;

namespace {

Volume3D bump_volume(std::size_t n, double diameter, Point3 c) {
    Volume3D v({n, n, n}, 1.0f, 100.0f);
    const double s = lesion_profile_sigma(diameter);
    for (std::size_t z = 0; z < n; ++z)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const double r2 = (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y) + (z - c.z) * (z - c.z);
                v.at(x, y, z) += static_cast<float>(80.0 * std::exp(-r2 / (2 * s * s)));
            }
    return v;
}

Volume3D noise_volume(Dims d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    Volume3D v(d, 1.0f);
    for (auto& x : v.data()) x = n(rng);
    return v;
}

}  // namespace

TEST_CASE("Gaussian kernel radius") {
    CHECK(gaussian_radius(4.0, 1.0) == 7);
    CHECK(gaussian_radius(5.0, 1.0) == 9);
    CHECK(gaussian_radius(1.0, 1.0) == 2);
    CHECK(gaussian_radius(2.0, 0.5) == 7);
    const auto k = gaussian_kernel(4.0, 1.0);
    CHECK(k.size() == 15);
    CHECK(std::accumulate(k.begin(), k.end(), 0.0) == Approx(1.0).margin(1e-6));
    CHECK(k[7] > k[6]);
    CHECK(k[6] == k[8]);
}

TEST_CASE("Gaussian filter") {
    SECTION("constant volume is unchanged") {
        const Volume3D c({12, 10, 11}, 1.0f, 3.5f);
        const auto g = gaussian_filter_3d(c, 2.0);
        for (float x : g.data()) CHECK(x == Approx(3.5f).epsilon(1e-6));
    }
    SECTION("impulse mass is preserved") {
        Volume3D v({41, 41, 41}, 1.0f);
        v.at(20, 20, 20) = 1.0f;
        const auto g = gaussian_filter_3d(v, 3.0);
        double sum = 0.0;
        for (float x : g.data()) sum += x;
        CHECK(std::abs(sum - 1.0) < 1e-5);
        CHECK(g.at(20, 20, 20) == g.min_max().second);
    }
    SECTION("output stays within the input range") {
        const auto v = noise_volume({16, 13, 15}, 4);
        const auto [lo, hi] = v.min_max();
        const auto g = gaussian_filter_3d(v, 1.5);
        for (float x : g.data()) {
            CHECK(x >= lo - 1e-5f);
            CHECK(x <= hi + 1e-5f);
        }
    }
    SECTION("shift equivariance away from the borders") {
        Volume3D a({40, 40, 40}, 1.0f), b({40, 40, 40}, 1.0f);
        a.at(18, 19, 20) = 1.0f;
        a.at(16, 20, 21) = 2.0f;
        b.at(21, 19, 18) = 1.0f;
        b.at(19, 20, 19) = 2.0f;
        const auto ga = gaussian_filter_3d(a, 2.0), gb = gaussian_filter_3d(b, 2.0);
        for (std::size_t z = 10; z < 28; ++z)
            for (std::size_t y = 10; y < 30; ++y)
                for (std::size_t x = 10; x < 27; ++x) CHECK(ga.at(x, y, z + 2) == Approx(gb.at(x + 3, y, z)).margin(1e-7));
    }
    SECTION("errors") {
        const Volume3D v({10, 20, 20}, 1.0f);
        CHECK_THROWS_AS(gaussian_filter_3d(v, 0.0), InvalidArgument);
        CHECK_THROWS_AS(gaussian_filter_3d(v, 6.0), KernelTooLarge);  // radius 11 on a 10-voxel axis
    }
}

TEST_CASE("LoG response") {
    const Volume3D c({14, 14, 14}, 1.0f, 9.0f);
    const auto r = log_response(c, 2.0);
    for (float x : r.data()) CHECK(std::abs(x) < 1e-4f);

    Volume3D impulse({15, 15, 15}, 1.0f);
    impulse.at(7, 7, 7) = 1.0f;
    CHECK(log_response(impulse, 0.5).at(7, 7, 7) > 0.0f);
    CHECK(log_response(impulse, 1.0).at(7, 7, 7) > 0.0f);
    // dark blobs give negative responses
    impulse.at(7, 7, 7) = -1.0f;
    CHECK(log_response(impulse, 1.0).at(7, 7, 7) < 0.0f);
}

TEST_CASE("LoG peak scale matches the frozen sweep") {
    for (const auto& g : kLogPeakScales) {
        const auto v = bump_volume(64, g.diameter_mm, {32, 32, 32});
        double best = 0.0, best_r = -1e30;
        for (int i = 5; i <= 100; ++i) {
            const double s = i / 10.0;
            const double r = log_response(v, s).at(32, 32, 32);
            if (r > best_r) {
                best_r = r;
                best = s;
            }
        }
        INFO("diameter " << g.diameter_mm);
        CHECK(best == Approx(g.sigma_mm).margin(0.05));
    }
}

TEST_CASE("candidate detection") {
    SECTION("constant volume has no candidates") {
        const Volume3D c({20, 20, 20}, 1.0f, 4.0f);
        CHECK(detect_candidates(c, {1, 3, 1, 0}, 100).empty());
    }
    SECTION("one lesion") {
        const auto v = bump_volume(32, 6.0, {15.3, 16.0, 14.6});
        const auto c = detect_candidates(v, {1, 4, 1, 1.0}, 100);
        REQUIRE_FALSE(c.empty());
        CHECK(distance(c.points[0].position, {15.3, 16.0, 14.6}) <= 1.5);
        CHECK(c.points[0].scale_mm == 2.0);
    }
    SECTION("two separated lesions") {
        auto v = bump_volume(40, 5.0, {10, 10, 10});
        const auto w = bump_volume(40, 5.0, {28, 27, 29});
        for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] += w.data()[i] - 100.0f;
        const auto c = detect_candidates(v, {1, 3, 1, 1.0}, 100);
        REQUIRE(c.size() >= 2);
        GroundTruth t;
        t.lesions = {{{10, 10, 10}, 5}, {{28, 27, 29}, 5}};
        CHECK(sensitivity(c, t, 1.5) == 1.0);
    }
    SECTION("output contract on noise") {
        const auto v = noise_volume({24, 20, 22}, 7);
        const LoGParams p{1, 2, 0.5, 0.3};
        const auto all = detect_candidates(v, p, 1000000);
        REQUIRE(all.size() > 10);
        for (std::size_t i = 0; i < all.size(); ++i) {
            CHECK(all.points[i].score > 0.3);
            CHECK(v.contains(all.points[i].position));
            if (i > 0) CHECK(all.points[i].score <= all.points[i - 1].score);
        }
        const auto few = detect_candidates(v, p, 5);
        REQUIRE(few.size() == 5);
        for (std::size_t i = 0; i < 5; ++i) CHECK(few.points[i].position == all.points[i].position);
        // a higher threshold keeps a prefix
        LoGParams q = p;
        q.response_threshold = 0.6;
        const auto fewer = detect_candidates(v, q, 1000000);
        CHECK(fewer.size() <= all.size());
        for (std::size_t i = 0; i < fewer.size(); ++i) CHECK(fewer.points[i].position == all.points[i].position);
    }
    SECTION("parameter validation") {
        const Volume3D c({20, 20, 20}, 1.0f);
        CHECK_THROWS_AS(detect_candidates(c, {2, 1, 1, 0}, 10), InvalidArgument);
        CHECK_THROWS_AS(detect_candidates(c, {1, 2, 0, 0}, 10), InvalidArgument);
        CHECK_THROWS_AS(detect_candidates(c, {1, 2, 1, -1}, 10), InvalidArgument);
    }
}

TEST_CASE("sensitivity") {
    GroundTruth t;
    t.lesions = {{{0, 0, 0}, 3}, {{10, 0, 0}, 3}};
    const std::vector<Point3> one{{0, 0, 0}};
    CHECK(sensitivity(one, t, 1.5) == 0.5);
    const std::vector<Point3> all{{0, 0, 0}, {10, 0, 0}, {5, 5, 5}};
    CHECK(sensitivity(all, t, 1.5) == 1.0);
    GroundTruth single;
    single.lesions = {{{0, 0, 0}, 3}};
    const std::vector<Point3> near{{1.6, 0, 0}};
    CHECK(sensitivity(near, single, 1.5) == 0.0);
    CHECK(sensitivity(near, single, 1.6) == 1.0);
    CHECK_THROWS_AS(sensitivity(near, GroundTruth{}, 1.5), UndefinedSensitivity);
    CHECK_THROWS_AS(sensitivity(near, single, 0.0), InvalidArgument);
    // one point between two close lesions hits both
    GroundTruth pair;
    pair.lesions = {{{0, 0, 0}, 1}, {{2, 0, 0}, 1}};
    const std::vector<Point3> mid{{1, 0, 0}};
    CHECK(sensitivity(mid, pair, 1.5) == 1.0);
}

TEST_CASE("LoG optimizer small cases") {
    PhantomConfig cfg;
    cfg.dims = {24, 24, 24};
    cfg.diameter_mean_mm = 4.0;
    cfg.diameter_sd_mm = 1.5;
    cfg.diameter_max_mm = 8.0;
    cfg.seed = 3;
    const auto ph = generate_phantom(cfg);
    const std::vector<LabeledVolume> train{{ph.volume, ph.truth}};
    SECTION("one-point grid") {
        LogSearchSpace s;
        s.sigma_lo = s.sigma_hi = 2.0;
        s.thresholds = {1.0};
        const auto r = optimize_log_params(train, s, 0.5);
        CHECK(r.params == LoGParams{2, 2, 1, 1});
        CHECK(r.cells.size() == 1);
    }
    SECTION("fewer candidates win among passing cells") {
        LogSearchSpace s;
        s.sigma_lo = s.sigma_hi = 2.0;
        s.thresholds = {0.0, 1.0};
        const auto r = optimize_log_params(train, s, 0.01);
        if (r.cells[0].mean_sensitivity >= 0.01 && r.cells[1].mean_sensitivity >= 0.01) {
            CHECK(r.params.response_threshold == 1.0);
        }
    }
    SECTION("errors") {
        LogSearchSpace s;
        CHECK_THROWS_AS(optimize_log_params({}, s, 0.9), InvalidArgument);
        CHECK_THROWS_AS(optimize_log_params(train, s, 0.0), InvalidArgument);
        s.thresholds.clear();
        CHECK_THROWS_AS(optimize_log_params(train, s, 0.9), InvalidArgument);
    }
}

TEST_CASE("LoG optimizer matches exhaustive evaluation") {
    std::mt19937_64 rng(99);
    for (int instance = 0; instance < 20; ++instance) {
        const auto inst = oracle::random_log_instance(rng);
        const auto got = optimize_log_params(inst.training, inst.search, inst.theta);
        const auto want = oracle::brute_force_log(inst.training, inst.search, inst.theta);
        INFO("instance " << instance);
        CHECK(got.params == want.params);
        CHECK(got.reached_theta == want.reached);
        CHECK(got.mean_sensitivity == want.mean_sensitivity);
        CHECK(got.mean_candidates * inst.training.size() == Approx(want.total_candidates));
    }
}

TEST_CASE("candidate CSV and parameter JSON") {
    CandidateSet c;
    c.points = {{{1.5, 2, 3}, 9.25, 2}, {{0.1, 0, 7}, 1.0 / 3.0, 1}};
    const auto back = candidates_from_csv(candidates_to_csv(c));
    REQUIRE(back.size() == 2);
    CHECK(back.points[1].position == c.points[1].position);
    CHECK(back.points[1].score == c.points[1].score);
    CHECK(candidates_to_csv(c).rfind("x_mm,y_mm,z_mm,score\n", 0) == 0);
    CHECK_THROWS_AS(candidates_from_csv("x,y\n"), FormatError);
    CHECK_THROWS_AS(candidates_from_csv("x_mm,y_mm,z_mm,score\n1,2\n"), FormatError);

    const LoGParams p{1, 4.5, 0.5, 2.25};
    CHECK(log_params_from_json(log_params_to_json(p)) == p);
    const auto path = std::filesystem::temp_directory_path() / "bs_test_log.json";
    save_log_params(p, path);
    CHECK(load_log_params(path) == p);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(log_params_from_json(R"({"sigma_min": 1})"), FormatError);
}
