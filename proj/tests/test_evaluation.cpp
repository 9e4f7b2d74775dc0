#include "blobsurrogate/error.hpp"
#include "blobsurrogate/evaluation.hpp"

#include <catch_amalgamated.hpp>

#include <random>
#include <set>

using namespace blobsurrogate;
using Catch::Approx;

namespace {

GroundTruth truth_at(std::vector<Point3> centers) {
    GroundTruth t;
    for (const auto& c : centers) t.lesions.push_back({c, 5.0});
    return t;
}

}  // namespace

TEST_CASE("detections on the truth centers are all hits") {
    const auto truth = truth_at({{1, 1, 1}, {10, 10, 10}, {20, 5, 5}});
    std::vector<Detection> d;
    for (const auto& l : truth.lesions) d.push_back({l.center, 0.9});
    const auto m = match_detections(d, truth, 1.5, 0.5);
    CHECK(m == MatchCounts{3, 0, 0});
}

TEST_CASE("an equidistant detection claims one lesion") {
    const auto truth = truth_at({{0, 0, 0}, {2, 0, 0}});
    const std::vector<Detection> d{{{1, 0, 0}, 0.8}};
    const auto m = match_detections(d, truth, 1.5, 0.0);
    CHECK(m == MatchCounts{1, 0, 1});
}

TEST_CASE("two detections near one lesion: one hit, one false positive") {
    const auto truth = truth_at({{5, 5, 5}});
    const std::vector<Detection> d{{{5, 5, 6}, 0.7}, {{5, 6, 5}, 0.9}};
    CHECK(match_detections(d, truth, 1.5, 0.0) == MatchCounts{1, 1, 0});
    // the higher-probability detection is the one that claims
    const auto flags = match_flags(d, truth, 1.5);
    CHECK_FALSE(flags[0]);
    CHECK(flags[1]);
}

TEST_CASE("threshold admits detections at or above it") {
    const auto truth = truth_at({{0, 0, 0}});
    const std::vector<Detection> d{{{0, 0, 0}, 0.5}, {{9, 9, 9}, 0.4}};
    CHECK(match_detections(d, truth, 1.5, 0.5) == MatchCounts{1, 0, 0});
    CHECK(match_detections(d, truth, 1.5, 0.4) == MatchCounts{1, 1, 0});
    CHECK(match_detections(d, truth, 1.5, 0.51) == MatchCounts{0, 0, 1});
    CHECK_THROWS_AS(match_detections(d, truth, 0.0, 0.5), InvalidArgument);
}

TEST_CASE("perfect detector reaches (1, 0)") {
    std::vector<VolumeDetections> vols(2);
    vols[0].truth = truth_at({{1, 1, 1}, {9, 9, 9}});
    vols[1].truth = truth_at({{4, 4, 4}});
    for (auto& v : vols) {
        for (const auto& l : v.truth.lesions) v.detections.push_back({l.center, 0.95});
        v.detections.push_back({{30, 30, 30}, 0.1});
    }
    const auto c = froc(vols, 1.5);
    REQUIRE_FALSE(c.points.empty());
    CHECK(c.points.front() == FrocPoint{0.95, 1.0, 0.0});
    CHECK(afp_at_sensitivity(c, 0.9) == 0.0);
    CHECK(c.points.back() == FrocPoint{0.1, 1.0, 1.0});
}

TEST_CASE("k decoys per volume give (0, k)") {
    const std::size_t k = 3;
    std::vector<VolumeDetections> vols(4);
    for (auto& v : vols) {
        v.truth = truth_at({{0, 0, 0}});
        for (std::size_t i = 0; i < k; ++i) v.detections.push_back({{20.0 + i * 5, 20, 20}, 1.0});
    }
    const auto c = froc(vols, 1.5);
    REQUIRE(c.points.size() == 1);
    CHECK(c.points[0] == FrocPoint{1.0, 0.0, static_cast<double>(k)});
    CHECK_FALSE(afp_at_sensitivity(c, 0.9).has_value());
}

TEST_CASE("froc errors") {
    CHECK_THROWS_AS(froc(std::vector<VolumeDetections>{}, 1.5), InvalidArgument);
    std::vector<VolumeDetections> none(2);
    CHECK_THROWS_AS(froc(none, 1.5), UndefinedSensitivity);
}

TEST_CASE("froc matches brute-force rematching at every threshold") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> pos(0.0, 12.0);
    std::uniform_int_distribution<int> prob_level(0, 6);
    std::uniform_int_distribution<int> count(0, 5);
    for (int instance = 0; instance < 40; ++instance) {
        std::vector<VolumeDetections> vols(1 + instance % 4);
        std::set<double> probs;
        std::size_t lesions = 0;
        for (auto& v : vols) {
            const int nl = count(rng);
            for (int i = 0; i < nl; ++i) v.truth.lesions.push_back({{pos(rng), pos(rng), pos(rng)}, 4.0});
            lesions += nl;
            const int nd = 2 * count(rng);
            for (int i = 0; i < nd; ++i) {
                Point3 p{pos(rng), pos(rng), pos(rng)};
                // half the detections land near a lesion
                if (nl > 0 && i % 2 == 0) {
                    p = v.truth.lesions[i % nl].center;
                    p.x += pos(rng) / 8.0;
                }
                const double pr = prob_level(rng) / 6.0;  // coarse levels force ties
                v.detections.push_back({p, pr});
                probs.insert(pr);
            }
        }
        if (lesions == 0) continue;
        const auto curve = froc(vols, 1.5);
        REQUIRE(curve.points.size() == probs.size());
        double last_s = -1, last_a = -1;
        for (const auto& pt : curve.points) {
            std::size_t tp = 0, fp = 0;
            for (const auto& v : vols) {
                const auto m = match_detections(v.detections, v.truth, 1.5, pt.threshold);
                tp += m.true_positives;
                fp += m.false_positives;
                CHECK(m.true_positives + m.missed == v.truth.size());
            }
            CHECK(pt.sensitivity == static_cast<double>(tp) / static_cast<double>(lesions));
            CHECK(pt.afp == static_cast<double>(fp) / static_cast<double>(vols.size()));
            // thresholds fall, so both coordinates are nondecreasing along the list
            CHECK(pt.sensitivity >= last_s);
            CHECK(pt.afp >= last_a);
            last_s = pt.sensitivity;
            last_a = pt.afp;
        }
    }
}

TEST_CASE("operating point nearest a sensitivity") {
    FrocCurve c;
    c.points = {{0.9, 0.5, 0.0}, {0.7, 0.75, 1.0}, {0.5, 1.0, 3.0}};
    CHECK(operating_point_near(c, 0.875)->afp == 1.0);  // 0.75 and 1.0 tie, lower AFP wins
    CHECK(operating_point_near(c, 0.95)->afp == 3.0);
    CHECK(afp_at_sensitivity(c, 0.9) == 3.0);
    CHECK(max_sensitivity(c) == 1.0);
}

TEST_CASE("froc csv round-trip") {
    FrocCurve c;
    c.points = {{0.875, 0.25, 0.0}, {0.1, 1.0, 2.5}};
    const auto csv = froc_to_csv(c);
    CHECK(csv.rfind("threshold,sensitivity,afp\n", 0) == 0);
    CHECK(froc_points_from_csv(csv) == c.points);
    CHECK_THROWS_AS(froc_points_from_csv("a,b\n1,2\n"), FormatError);
}

TEST_CASE("dice coefficient") {
    std::vector<std::uint8_t> a(300, 0), b(300, 0);
    CHECK(dice_coefficient(a, b) == 1.0);
    for (int i = 0; i < 100; ++i) {
        a[i] = 1;
        b[50 + i] = 1;
    }
    CHECK(dice_coefficient(a, b) == Approx(0.5));
    CHECK(dice_coefficient(a, a) == 1.0);
    std::vector<std::uint8_t> c(300, 0);
    for (int i = 200; i < 250; ++i) c[i] = 1;
    CHECK(dice_coefficient(a, c) == 0.0);
    CHECK_THROWS_AS(dice_coefficient(a, std::vector<std::uint8_t>(5)), ShapeMismatch);
}
