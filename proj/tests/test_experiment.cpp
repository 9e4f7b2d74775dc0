#include "blobsurrogate/error.hpp"
#include "blobsurrogate/experiment.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>

using namespace blobsurrogate;

namespace {

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.phantom.dims = {24, 24, 24};
    cfg.phantom.diameter_mean_mm = 4.0;
    cfg.phantom.diameter_sd_mm = 1.5;
    cfg.phantom.diameter_max_mm = 8.0;
    cfg.phantom.lesion_count_min = 2;
    cfg.phantom.lesion_count_max = 3;
    cfg.n_train = 2;
    cfg.n_test = 1;
    cfg.log_search.sigma_hi = 2.0;
    cfg.log_search.thresholds = {0.0, 4.0};
    cfg.cdcnn_epochs = 3;
    cfg.classifier_iterations = 4;
    cfg.classifier_batch_pairs = 2;
    return cfg;
}

}  // namespace

TEST_CASE("config validation") {
    auto cfg = small_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.n_test = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    CHECK_THROWS_AS(run_experiment(cfg), InvalidArgument);
    cfg = small_config();
    cfg.bench_runs = 2;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = small_config();
    cfg.target_sensitivity = 1.5;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("config JSON") {
    auto cfg = small_config();
    cfg.tau_rule = TauRule::theta;
    cfg.classifier_learning_rate = 1.0 / 3.0;
    const auto text = experiment_config_to_json(cfg);
    const auto back = experiment_config_from_json(text);
    CHECK(experiment_config_to_json(back) == text);
    CHECK(back.tau_rule == TauRule::theta);
    CHECK(back.classifier_learning_rate == cfg.classifier_learning_rate);
    CHECK(back.phantom.dims == cfg.phantom.dims);

    const auto partial = experiment_config_from_json(R"({"n_train": 5})", cfg);
    CHECK(partial.n_train == 5);
    CHECK(partial.n_test == cfg.n_test);
    CHECK_THROWS_AS(experiment_config_from_json(R"({"n_trian": 5})"), FormatError);
    CHECK_THROWS_AS(experiment_config_from_json(R"({"log_search": {"sigma": 1}})"), FormatError);
    CHECK_THROWS_AS(experiment_config_from_json(R"({"tau_rule": "median"})"), FormatError);
    CHECK_THROWS_AS(experiment_config_from_json("[]"), FormatError);
}

TEST_CASE("small experiment is deterministic") {
    const auto cfg = small_config();
    std::vector<std::string> stages;
    ExperimentHooks hooks;
    hooks.on_stage = [&](const ExperimentReport& r) { stages.push_back(experiment_report_to_json(r)); };
    ExperimentTiming timing;
    const auto a = run_experiment(cfg, &timing, hooks);
    const auto b = run_experiment(cfg);
    CHECK(a.complete);
    CHECK(stages.size() >= 2);
    CHECK(stages.back() == experiment_report_to_json(a));
    CHECK(experiment_report_to_json(a) == experiment_report_to_json(b));

    CHECK(a.train_seeds.size() == 2);
    CHECK(a.test_seeds.size() == 1);
    REQUIRE(a.log);
    REQUIRE(a.cdcnn_spec);
    REQUIRE(a.threshold);
    CHECK(a.cdcnn_loss.size() == cfg.cdcnn_epochs);
    // receptive field matched to the chosen LoG scales
    CHECK(a.cdcnn_spec->receptive_field == receptive_field_for_log(a.log->params, cfg.phantom.spacing_mm));
    CHECK(a.cdcnn_spec->tau == a.threshold->budget_tau.value_or(a.threshold->grid.back().tau));
    REQUIRE(a.pipeline("log"));
    REQUIRE(a.pipeline("cdcnn"));
    CHECK_FALSE(a.pipeline("other"));
    for (const auto& p : a.pipelines) {
        CHECK(p.candidate_sensitivity >= 0.0);
        CHECK(p.candidate_sensitivity <= 1.0);
        CHECK(p.classifier_loss.size() == cfg.classifier_iterations);
        CHECK_FALSE(p.froc.points.empty());
    }
    CHECK_FALSE(timing.stage_seconds.empty());
    CHECK(experiment_timing_to_json(timing).find("stage") != std::string::npos);
}

TEST_CASE("c sweep shape and CSV") {
    auto cfg = small_config();
    const std::vector<double> cs{1.0, 0.1};
    const auto r = run_c_sweep(cfg, cs, 5.0);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].c == 1.0);
    CHECK(r.rows[1].c == 0.1);
    CHECK(r.budget == 5.0);
    for (const auto& row : r.rows) {
        CHECK(row.test_sensitivity >= 0.0);
        CHECK(row.test_sensitivity <= 1.0);
        if (row.budget_met) CHECK(row.train_mean_candidates <= 5.0);
    }
    const auto back = c_sweep_from_json(c_sweep_to_json(r));
    CHECK(c_sweep_to_json(back) == c_sweep_to_json(r));
    const auto csv = c_sweep_to_csv(r);
    CHECK(csv.rfind("c,tau,budget_met,train_mean_candidates,test_sensitivity,test_mean_candidates", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

    const std::vector<double> bad{0.0};
    CHECK_THROWS_AS(run_c_sweep(cfg, bad), InvalidArgument);
    CHECK_THROWS_AS(run_c_sweep(cfg, {}), InvalidArgument);
    CHECK_THROWS_AS(run_c_sweep(cfg, cs, -1.0), InvalidArgument);
    CHECK_THROWS_AS(c_sweep_from_json(R"({"kind": "experiment"})"), FormatError);
}
