#pragma once

#include "blobsurrogate/cdcnn.hpp"
#include "blobsurrogate/classifier.hpp"
#include "blobsurrogate/scalespace.hpp"
#include "blobsurrogate/volume.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace blobsurrogate {

struct StageTiming {
    std::string name;
    std::size_t warmups = 0;
    std::size_t runs = 0;
    // Seconds per run.
    double median_s = 0.0;
    double mean_s = 0.0;
    double min_s = 0.0;
    std::vector<double> samples_s;

    bool operator==(const StageTiming&) const = default;
};

/// Runs `stage` warmups + runs times on a monotonic clock and keeps the last
/// `runs` measurements. Requires runs >= 3.
StageTiming time_stage(const std::string& name, const std::function<void()>& stage,
                       std::size_t warmups, std::size_t runs);

struct TimingReport {
    Dims dims;
    std::size_t volumes = 0;
    int threads = 1;
    int receptive_field = 0;
    std::size_t log_scales = 0;
    /// Stage times are per volume: each run processes the whole set once and
    /// its duration is divided by the volume count.
    std::vector<StageTiming> stages;
    /// median(candidate-log) / median(candidate-cdcnn).
    double speedup = 0.0;

    const StageTiming* find(std::string_view name) const;
    bool operator==(const TimingReport&) const = default;
};

inline constexpr const char* kStageLog = "candidate-log";
inline constexpr const char* kStageCdcnn = "candidate-cdcnn";
inline constexpr const char* kStageClassifier = "classifier";

struct BenchOptions {
    std::size_t warmups = 1;
    std::size_t runs = 5;
    std::size_t max_log_candidates = 100000;
};

struct ClassifierStage {
    const nn::Network<float>* network = nullptr;
    CropSpec spec;
};

struct BenchResult {
    TimingReport report;
    // Outputs of the last measured run, one set per volume.
    std::vector<CandidateSet> log_candidates;
    std::vector<CandidateSet> cdcnn_candidates;
};

/// Times LoG candidate detection against cdCNN inference on the same volumes.
/// The classifier, when given, is timed on the cdCNN candidates only, since it
/// is the same network in both pipelines.
BenchResult compare_pipelines(std::span<const Volume3D> volumes, const LoGParams& log,
                              const CdcnnModel& cdcnn, const BenchOptions& options,
                              const std::optional<ClassifierStage>& classifier = std::nullopt);

std::string timing_report_to_json(const TimingReport& report);
TimingReport timing_report_from_json(std::string_view text);

}  // namespace blobsurrogate
