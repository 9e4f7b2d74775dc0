#include "blobsurrogate/bench.hpp"

#include "blobsurrogate/error.hpp"
#include "blobsurrogate/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "json.hpp"

namespace blobsurrogate {

using nlohmann::json;

StageTiming time_stage(const std::string& name, const std::function<void()>& stage,
                       std::size_t warmups, std::size_t runs) {
    if (runs < 3) throw InvalidArgument("time_stage needs at least 3 measured runs");
    if (!stage) throw InvalidArgument("time_stage: empty stage");
    using clock = std::chrono::steady_clock;
    for (std::size_t i = 0; i < warmups; ++i) stage();
    StageTiming t;
    t.name = name;
    t.warmups = warmups;
    t.runs = runs;
    for (std::size_t i = 0; i < runs; ++i) {
        const auto start = clock::now();
        stage();
        const std::chrono::duration<double> dt = clock::now() - start;
        t.samples_s.push_back(dt.count());
    }
    std::vector<double> sorted = t.samples_s;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    t.median_s = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    t.mean_s = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
    t.min_s = sorted.front();
    return t;
}

const StageTiming* TimingReport::find(std::string_view name) const {
    for (const auto& s : stages) {
        if (s.name == name) return &s;
    }
    return nullptr;
}

namespace {

void scale_timing(StageTiming& t, double factor) {
    for (double& s : t.samples_s) s *= factor;
    t.median_s *= factor;
    t.mean_s *= factor;
    t.min_s *= factor;
}

}  // namespace

BenchResult compare_pipelines(std::span<const Volume3D> volumes, const LoGParams& log,
                              const CdcnnModel& cdcnn, const BenchOptions& options,
                              const std::optional<ClassifierStage>& classifier) {
    if (volumes.empty()) throw InvalidArgument("compare_pipelines needs at least one volume");
    log.validate();
    cdcnn.spec.validate();
    for (const auto& v : volumes) {
        if (!(v.dims() == volumes.front().dims())) throw ShapeMismatch("benchmark volumes differ in size");
    }
    if (classifier && !classifier->network) throw InvalidArgument("classifier stage without a network");

    BenchResult result;
    auto& r = result.report;
    r.dims = volumes.front().dims();
    r.volumes = volumes.size();
    r.threads = thread_count();
    r.receptive_field = cdcnn.spec.receptive_field;
    r.log_scales = log.scales().size();
    result.log_candidates.resize(volumes.size());
    result.cdcnn_candidates.resize(volumes.size());
    const double per_volume = 1.0 / static_cast<double>(volumes.size());

    // Serial stages, one after another, so they never share the cores.
    r.stages.push_back(time_stage(
        kStageLog,
        [&] {
            for (std::size_t i = 0; i < volumes.size(); ++i) {
                result.log_candidates[i] = detect_candidates(volumes[i], log, options.max_log_candidates);
            }
        },
        options.warmups, options.runs));
    r.stages.push_back(time_stage(
        kStageCdcnn,
        [&] {
            for (std::size_t i = 0; i < volumes.size(); ++i) {
                result.cdcnn_candidates[i] = detect_candidates_cdcnn(cdcnn.network, volumes[i], cdcnn.spec.tau);
            }
        },
        options.warmups, options.runs));
    if (classifier) {
        std::vector<std::vector<Detection>> sink(volumes.size());
        r.stages.push_back(time_stage(
            kStageClassifier,
            [&] {
                for (std::size_t i = 0; i < volumes.size(); ++i) {
                    sink[i] = classify_candidates(*classifier->network, classifier->spec, volumes[i],
                                                  result.cdcnn_candidates[i]);
                }
            },
            options.warmups, options.runs));
    }
    for (auto& s : r.stages) scale_timing(s, per_volume);
    r.speedup = r.stages[0].median_s / r.stages[1].median_s;
    return result;
}

std::string timing_report_to_json(const TimingReport& r) {
    json j;
    j["dims"] = {r.dims.nx, r.dims.ny, r.dims.nz};
    j["volumes"] = r.volumes;
    j["threads"] = r.threads;
    j["receptive_field"] = r.receptive_field;
    j["log_scales"] = r.log_scales;
    j["speedup"] = r.speedup;
    j["stages"] = json::array();
    for (const auto& s : r.stages) {
        j["stages"].push_back({{"name", s.name},
                               {"warmups", s.warmups},
                               {"runs", s.runs},
                               {"median_s", s.median_s},
                               {"mean_s", s.mean_s},
                               {"min_s", s.min_s},
                               {"samples_s", s.samples_s}});
    }
    return j.dump(2) + "\n";
}

TimingReport timing_report_from_json(std::string_view text) {
    try {
        const json j = json::parse(text);
        TimingReport r;
        const auto d = j.at("dims");
        r.dims = {d.at(0).get<std::size_t>(), d.at(1).get<std::size_t>(), d.at(2).get<std::size_t>()};
        r.volumes = j.at("volumes").get<std::size_t>();
        r.threads = j.at("threads").get<int>();
        r.receptive_field = j.at("receptive_field").get<int>();
        r.log_scales = j.at("log_scales").get<std::size_t>();
        r.speedup = j.at("speedup").get<double>();
        for (const auto& s : j.at("stages")) {
            StageTiming t;
            t.name = s.at("name").get<std::string>();
            t.warmups = s.at("warmups").get<std::size_t>();
            t.runs = s.at("runs").get<std::size_t>();
            t.median_s = s.at("median_s").get<double>();
            t.mean_s = s.at("mean_s").get<double>();
            t.min_s = s.at("min_s").get<double>();
            t.samples_s = s.at("samples_s").get<std::vector<double>>();
            r.stages.push_back(std::move(t));
        }
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("timing report: ") + e.what());
    }
}

}  // namespace blobsurrogate
