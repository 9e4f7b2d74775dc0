#pragma once

#include "blobsurrogate/bench.hpp"
#include "blobsurrogate/cdcnn.hpp"
#include "blobsurrogate/classifier.hpp"
#include "blobsurrogate/evaluation.hpp"
#include "blobsurrogate/phantom.hpp"
#include "blobsurrogate/scalespace.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace blobsurrogate {

enum class TauRule {
    theta,   // largest tau whose training sensitivity reaches cdcnn_theta
    budget,  // smallest tau whose training candidate count fits the LoG count
};

struct ExperimentConfig {
    PhantomConfig phantom;
    std::size_t n_train = 8;
    std::size_t n_test = 4;
    std::uint64_t seed = 1;

    LogSearchSpace log_search;
    double log_theta = 0.95;

    /// Receptive field and depth are replaced by the LoG-matched values when
    /// match_receptive_field is set.
    CdcnnSpec cdcnn;
    bool match_receptive_field = true;
    std::size_t cdcnn_epochs = 60;
    double cdcnn_learning_rate = 5e-4;
    double cdcnn_theta = 0.95;
    TauRule tau_rule = TauRule::budget;

    CropSpec crop;
    std::size_t classifier_iterations = 1000;
    std::size_t classifier_batch_pairs = 16;
    double classifier_learning_rate = 5e-4;

    double hit_radius_mm = 1.5;
    double target_sensitivity = 0.9;

    std::size_t bench_warmups = 1;
    std::size_t bench_runs = 3;

    void validate() const;
};

std::string experiment_config_to_json(const ExperimentConfig& cfg);
/// Fields absent from the JSON keep the values from `base`.
ExperimentConfig experiment_config_from_json(std::string_view text, const ExperimentConfig& base = {});

struct PipelineResult {
    std::string name;
    double candidate_sensitivity = 0.0;  // pooled over test lesions
    double mean_candidates = 0.0;        // per test volume
    std::vector<double> classifier_loss;
    FrocCurve froc;
    std::optional<double> afp_at_target;
    std::optional<FrocPoint> operating_point;
};

struct ExperimentReport {
    bool complete = false;
    ExperimentConfig config;
    std::vector<std::uint64_t> train_seeds;
    std::vector<std::uint64_t> test_seeds;
    std::size_t train_lesions = 0;
    std::size_t test_lesions = 0;

    std::optional<LogOptimizationResult> log;
    std::optional<CdcnnSpec> cdcnn_spec;  // tau is the selected threshold
    std::vector<double> cdcnn_loss;
    std::optional<ThresholdSelection> threshold;
    std::vector<PipelineResult> pipelines;

    const PipelineResult* pipeline(std::string_view name) const;
};

/// Deterministic for a fixed config: holds no timing.
std::string experiment_report_to_json(const ExperimentReport& report);

/// Wall-clock side of an experiment, kept out of the report.
struct ExperimentTiming {
    std::vector<std::pair<std::string, double>> stage_seconds;
    std::optional<TimingReport> bench;
};

std::string experiment_timing_to_json(const ExperimentTiming& timing);

struct ExperimentHooks {
    std::function<void(std::string_view)> log;
    /// Called with the report so far after every stage.
    std::function<void(const ExperimentReport&)> on_stage;
};

/// Phantom split, LoG optimization, cdCNN training and threshold selection,
/// one classifier per pipeline trained on that pipeline's candidates, and FROC
/// of both pipelines on the test split.
ExperimentReport run_experiment(const ExperimentConfig& cfg, ExperimentTiming* timing = nullptr,
                                const ExperimentHooks& hooks = {});

struct CSweepRow {
    double c = 0.0;
    double tau = 0.0;
    bool budget_met = false;
    double train_mean_candidates = 0.0;
    double test_sensitivity = 0.0;  // pooled candidate sensitivity
    double test_mean_candidates = 0.0;
    double test_mean_voxels = 0.0;
    double final_loss = 0.0;
};

struct CSweepReport {
    LoGParams log_params;
    double log_test_sensitivity = 0.0;
    double log_train_mean_candidates = 0.0;
    double budget = 0.0;  // candidates per volume
    int receptive_field = 0;
    std::vector<CSweepRow> rows;
};

inline const std::vector<double> kDefaultCValues{1.0, 0.1, 0.01, 0.001};

/// Trains one cdCNN per c with identical seeds and reports the test candidate
/// sensitivity at the tau that brings the training candidate count within the
/// budget (the LoG training mean when not given).
CSweepReport run_c_sweep(const ExperimentConfig& cfg, std::span<const double> c_values,
                         std::optional<double> budget = std::nullopt,
                         const ExperimentHooks& hooks = {});

std::string c_sweep_to_json(const CSweepReport& report);
CSweepReport c_sweep_from_json(std::string_view text);
/// CSV `c,tau,budget_met,train_mean_candidates,test_sensitivity,test_mean_candidates`.
std::string c_sweep_to_csv(const CSweepReport& report);

}  // namespace blobsurrogate
