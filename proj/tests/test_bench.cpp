#include "blobsurrogate/bench.hpp"
#include "blobsurrogate/error.hpp"
#include "blobsurrogate/phantom.hpp"

#include <catch_amalgamated.hpp>

#include <chrono>
#include <thread>

using namespace blobsurrogate;
using Catch::Approx;

namespace {

void sleep_ms(int ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); }

}  // namespace

TEST_CASE("sleep stub timing") {
    const auto t = time_stage("sleep", [] { sleep_ms(10); }, 1, 5);
    CHECK(t.name == "sleep");
    CHECK(t.runs == 5);
    CHECK(t.samples_s.size() == 5);
    CHECK(t.median_s >= 0.009);
    CHECK(t.median_s <= 0.030);
    CHECK(t.min_s <= t.median_s);
    CHECK(t.min_s > 0.0);
}

TEST_CASE("warmups change nothing but the warmup count") {
    int calls = 0;
    const auto a = time_stage("a", [&] { ++calls; }, 0, 3);
    CHECK(calls == 3);
    const auto b = time_stage("b", [&] { ++calls; }, 2, 3);
    CHECK(calls == 8);
    CHECK(a.runs == b.runs);
    CHECK(a.warmups == 0);
    CHECK(b.warmups == 2);
}

TEST_CASE("identical stages time alike") {
    const auto a = time_stage("a", [] { sleep_ms(5); }, 1, 5);
    const auto b = time_stage("b", [] { sleep_ms(5); }, 1, 5);
    CHECK(a.median_s / b.median_s == Approx(1.0).margin(0.4));
}

TEST_CASE("timing preconditions") {
    CHECK_THROWS_AS(time_stage("x", [] {}, 0, 0), InvalidArgument);
    CHECK_THROWS_AS(time_stage("x", [] {}, 0, 2), InvalidArgument);
    CHECK_THROWS_AS(time_stage("x", std::function<void()>{}, 0, 3), InvalidArgument);
    CHECK_THROWS_AS(time_stage("x", [] { throw ShapeMismatch("boom"); }, 0, 3), ShapeMismatch);
}

TEST_CASE("pipeline comparison leaves outputs unchanged") {
    PhantomConfig cfg;
    cfg.dims = {24, 24, 24};
    cfg.diameter_mean_mm = 4.0;
    cfg.diameter_sd_mm = 1.5;
    cfg.diameter_max_mm = 8.0;
    std::vector<Volume3D> volumes;
    for (std::uint64_t s = 1; s <= 2; ++s) {
        cfg.seed = s;
        volumes.push_back(generate_phantom(cfg).volume);
    }
    const LoGParams log{1, 3, 1, 2.0};
    CdcnnModel model{CdcnnSpec::for_receptive_field(7), {}};
    model.spec.tau = 0.45;
    model.network = build_cdcnn(model.spec);
    model.network.initialize(3);
    CropSpec crop;
    auto cls = build_crop_net(crop);
    cls.initialize(4);

    BenchOptions opt;
    opt.warmups = 0;
    opt.runs = 3;
    const auto r = compare_pipelines(volumes, log, model, opt, ClassifierStage{&cls, crop});
    REQUIRE(r.log_candidates.size() == 2);
    for (std::size_t i = 0; i < volumes.size(); ++i) {
        const auto a = detect_candidates(volumes[i], log, opt.max_log_candidates);
        const auto b = detect_candidates_cdcnn(model.network, volumes[i], model.spec.tau);
        REQUIRE(r.log_candidates[i].size() == a.size());
        REQUIRE(r.cdcnn_candidates[i].size() == b.size());
        for (std::size_t k = 0; k < a.size(); ++k) {
            CHECK(r.log_candidates[i].points[k].position == a.points[k].position);
            CHECK(r.log_candidates[i].points[k].score == a.points[k].score);
        }
        for (std::size_t k = 0; k < b.size(); ++k) CHECK(r.cdcnn_candidates[i].points[k].position == b.points[k].position);
    }
    const auto& rep = r.report;
    CHECK(rep.dims == cfg.dims);
    CHECK(rep.volumes == 2);
    CHECK(rep.receptive_field == 7);
    CHECK(rep.log_scales == 3);
    CHECK(rep.threads >= 1);
    REQUIRE(rep.stages.size() == 3);
    REQUIRE(rep.find(kStageLog));
    REQUIRE(rep.find(kStageCdcnn));
    REQUIRE(rep.find(kStageClassifier));
    CHECK_FALSE(rep.find("missing"));
    CHECK(rep.speedup == rep.find(kStageLog)->median_s / rep.find(kStageCdcnn)->median_s);
    for (const auto& s : rep.stages) {
        CHECK(s.runs == 3);
        CHECK(s.min_s > 0.0);
    }

    const auto back = timing_report_from_json(timing_report_to_json(rep));
    CHECK(back == rep);
    CHECK_THROWS_AS(timing_report_from_json("{}"), FormatError);
    CHECK_THROWS_AS(timing_report_from_json("not json"), FormatError);
}
