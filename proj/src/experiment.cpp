#include "blobsurrogate/experiment.hpp"

#include "blobsurrogate/error.hpp"
#include "blobsurrogate/io.hpp"

#include <chrono>
#include <cmath>

#include "json.hpp"

namespace blobsurrogate {

using nlohmann::json;

void ExperimentConfig::validate() const {
    phantom.validate();
    if (n_test == 0) throw InvalidArgument("experiment needs at least one test volume");
    if (n_train == 0) throw InvalidArgument("experiment needs at least one training volume");
    auto unit = [](double v, const char* name) {
        if (!(v > 0.0 && v <= 1.0)) throw InvalidArgument(std::string(name) + " must lie in (0, 1]");
    };
    unit(log_theta, "log_theta");
    unit(cdcnn_theta, "cdcnn_theta");
    unit(target_sensitivity, "target_sensitivity");
    if (!(hit_radius_mm > 0.0)) throw InvalidArgument("hit_radius_mm must be positive");
    if (cdcnn_epochs == 0) throw InvalidArgument("cdcnn_epochs must be positive");
    if (!(cdcnn_learning_rate > 0.0) || !(classifier_learning_rate > 0.0)) {
        throw InvalidArgument("learning rates must be positive");
    }
    if (classifier_batch_pairs == 0) throw InvalidArgument("classifier_batch_pairs must be positive");
    if (bench_runs < 3) throw InvalidArgument("bench_runs must be at least 3");
    if (log_search.sigma_values().empty() || log_search.thresholds.empty()) {
        throw InvalidArgument("empty LoG search space");
    }
    if (!match_receptive_field) cdcnn.validate();
    crop.validate();
}

namespace {

const char* tau_rule_name(TauRule r) { return r == TauRule::theta ? "theta" : "budget"; }

TauRule tau_rule_from_name(const std::string& s) {
    if (s == "theta") return TauRule::theta;
    if (s == "budget") return TauRule::budget;
    throw FormatError("tau_rule must be \"theta\" or \"budget\"");
}

json log_search_json(const LogSearchSpace& s) {
    return {{"sigma_lo", s.sigma_lo},
            {"sigma_hi", s.sigma_hi},
            {"sigma_step", s.sigma_step},
            {"thresholds", s.thresholds},
            {"max_candidates", s.max_candidates}};
}

json config_json(const ExperimentConfig& c) {
    return {{"phantom", json::parse(phantom_config_to_json(c.phantom))},
            {"n_train", c.n_train},
            {"n_test", c.n_test},
            {"seed", c.seed},
            {"log_search", log_search_json(c.log_search)},
            {"log_theta", c.log_theta},
            {"cdcnn", json::parse(cdcnn_spec_to_json(c.cdcnn))},
            {"match_receptive_field", c.match_receptive_field},
            {"cdcnn_epochs", c.cdcnn_epochs},
            {"cdcnn_learning_rate", c.cdcnn_learning_rate},
            {"cdcnn_theta", c.cdcnn_theta},
            {"tau_rule", tau_rule_name(c.tau_rule)},
            {"crop", json::parse(crop_spec_to_json(c.crop))},
            {"classifier_iterations", c.classifier_iterations},
            {"classifier_batch_pairs", c.classifier_batch_pairs},
            {"classifier_learning_rate", c.classifier_learning_rate},
            {"hit_radius_mm", c.hit_radius_mm},
            {"target_sensitivity", c.target_sensitivity},
            {"bench_warmups", c.bench_warmups},
            {"bench_runs", c.bench_runs}};
}

std::string csv_column(const char* header, const std::vector<double>& values) {
    std::string out = std::string("index,") + header + "\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        out += std::to_string(i) + ',' + io::format_double(values[i]) + '\n';
    }
    return out;
}

std::size_t lesions_hit(const CandidateSet& c, const GroundTruth& truth, double radius) {
    std::size_t hits = 0;
    for (const auto& l : truth.lesions) {
        for (const auto& p : c.points) {
            if (distance(p.position, l.center) <= radius) {
                ++hits;
                break;
            }
        }
    }
    return hits;
}

double mean_size(const std::vector<CandidateSet>& sets) {
    double n = 0.0;
    for (const auto& s : sets) n += static_cast<double>(s.size());
    return sets.empty() ? 0.0 : n / static_cast<double>(sets.size());
}

double pooled_sensitivity(const std::vector<CandidateSet>& sets, std::span<const Phantom> phantoms,
                          double radius) {
    std::size_t hits = 0, lesions = 0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        hits += lesions_hit(sets[i], phantoms[i].truth, radius);
        lesions += phantoms[i].truth.size();
    }
    if (lesions == 0) throw UndefinedSensitivity("no lesions in the evaluation set");
    return static_cast<double>(hits) / static_cast<double>(lesions);
}

class StageClock {
public:
    StageClock(ExperimentTiming* timing, const ExperimentHooks& hooks) : timing_(timing), hooks_(hooks) {}

    void begin(std::string name) {
        name_ = std::move(name);
        if (hooks_.log) hooks_.log(name_);
        start_ = std::chrono::steady_clock::now();
    }
    void end() {
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start_;
        if (timing_) timing_->stage_seconds.emplace_back(name_, dt.count());
    }

private:
    ExperimentTiming* timing_;
    const ExperimentHooks& hooks_;
    std::string name_;
    std::chrono::steady_clock::time_point start_;
};

// Everything both the experiment and the c sweep need before cdCNN training.
struct Prepared {
    PhantomSplit split;
    LogOptimizationResult log;
    std::vector<CandidateSet> train_log;
    std::vector<CandidateSet> test_log;
    CdcnnSpec spec;
};

Prepared prepare(const ExperimentConfig& cfg, StageClock& clock) {
    Prepared p;
    clock.begin("phantoms");
    p.split = generate_split(cfg.phantom, cfg.n_train, cfg.n_test, cfg.seed);
    clock.end();

    clock.begin("optimize-log");
    std::vector<LabeledVolume> labeled;
    for (const auto& ph : p.split.train) labeled.push_back({ph.volume, ph.truth});
    LogSearchSpace search = cfg.log_search;
    search.hit_radius_mm = cfg.hit_radius_mm;
    p.log = optimize_log_params(labeled, search, cfg.log_theta);
    clock.end();

    clock.begin("log-candidates");
    for (const auto& ph : p.split.train) {
        p.train_log.push_back(detect_candidates(ph.volume, p.log.params, search.max_candidates));
    }
    for (const auto& ph : p.split.test) {
        p.test_log.push_back(detect_candidates(ph.volume, p.log.params, search.max_candidates));
    }
    clock.end();

    p.spec = cfg.cdcnn;
    if (cfg.match_receptive_field) {
        const int rf = receptive_field_for_log(p.log.params, cfg.phantom.spacing_mm, cfg.cdcnn.kernel);
        p.spec.receptive_field = rf;
        p.spec.depth = depth_for_receptive_field(rf, cfg.cdcnn.kernel);
    }
    p.spec.validate();
    return p;
}

struct TrainedCdcnn {
    CdcnnTrainResult trained;
    ThresholdSelection selection;
};

TrainedCdcnn train_and_select(const ExperimentConfig& cfg, const Prepared& p, const CdcnnSpec& spec,
                              std::optional<double> budget, StageClock& clock) {
    clock.begin("cdcnn-train c=" + io::format_double(spec.c));
    std::vector<CdcnnSample> samples;
    for (std::size_t i = 0; i < p.split.train.size(); ++i) {
        const auto& ph = p.split.train[i];
        const Volume3D q = build_target(ph.volume.dims(), ph.volume.spacing(), p.train_log[i], ph.truth,
                                        spec.c, cfg.hit_radius_mm);
        samples.push_back({ph.volume, smooth_target(q, spec.sigma_smooth_mm)});
    }
    CdcnnTrainOptions opts;
    opts.epochs = cfg.cdcnn_epochs;
    opts.learning_rate = cfg.cdcnn_learning_rate;
    opts.seed = io::derive_seed(cfg.seed, 100);
    TrainedCdcnn out{train_cdcnn(samples, spec, opts), {}};
    clock.end();

    clock.begin("cdcnn-threshold c=" + io::format_double(spec.c));
    std::vector<ResponseSample> responses;
    for (const auto& ph : p.split.train) {
        responses.push_back({cdcnn_response(out.trained.network, ph.volume), ph.truth});
    }
    out.selection = select_threshold(responses, cfg.cdcnn_theta, budget, cfg.hit_radius_mm);
    clock.end();
    return out;
}

PipelineResult evaluate_pipeline(const ExperimentConfig& cfg, const std::string& name,
                                 const PhantomSplit& split, const std::vector<CandidateSet>& train_candidates,
                                 const std::vector<CandidateSet>& test_candidates, std::uint64_t stream,
                                 StageClock& clock, nn::Network<float>* trained = nullptr) {
    PipelineResult r;
    r.name = name;
    r.candidate_sensitivity = pooled_sensitivity(test_candidates, split.test, cfg.hit_radius_mm);
    r.mean_candidates = mean_size(test_candidates);

    clock.begin("classifier-train " + name);
    std::vector<ClassifierSource> sources;
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        sources.push_back({split.train[i].volume, split.train[i].truth, train_candidates[i]});
    }
    ClassifierTrainOptions opts;
    opts.iterations = cfg.classifier_iterations;
    opts.batch_pairs = cfg.classifier_batch_pairs;
    opts.learning_rate = cfg.classifier_learning_rate;
    opts.seed = io::derive_seed(cfg.seed, stream);
    auto cls = train_classifier(sources, cfg.crop, opts);
    r.classifier_loss = std::move(cls.loss);
    clock.end();

    clock.begin("classifier-eval " + name);
    std::vector<VolumeDetections> dets;
    for (std::size_t i = 0; i < split.test.size(); ++i) {
        dets.push_back({classify_candidates(cls.network, cfg.crop, split.test[i].volume, test_candidates[i]),
                        split.test[i].truth});
    }
    r.froc = froc(dets, cfg.hit_radius_mm);
    r.afp_at_target = afp_at_sensitivity(r.froc, cfg.target_sensitivity);
    r.operating_point = operating_point_near(r.froc, cfg.target_sensitivity);
    clock.end();
    if (trained) *trained = std::move(cls.network);
    return r;
}

}  // namespace

std::string experiment_config_to_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

ExperimentConfig experiment_config_from_json(std::string_view text, const ExperimentConfig& base) {
    ExperimentConfig c = base;
    try {
        const json doc = json::parse(text);
        if (!doc.is_object()) throw FormatError("experiment config must be a JSON object");
        for (const auto& [key, v] : doc.items()) {
            if (key == "phantom") c.phantom = phantom_config_from_json(v.dump(), c.phantom);
            else if (key == "n_train") c.n_train = v.get<std::size_t>();
            else if (key == "n_test") c.n_test = v.get<std::size_t>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "log_search") {
                for (const auto& [k, x] : v.items()) {
                    if (k == "sigma_lo") c.log_search.sigma_lo = x.get<double>();
                    else if (k == "sigma_hi") c.log_search.sigma_hi = x.get<double>();
                    else if (k == "sigma_step") c.log_search.sigma_step = x.get<double>();
                    else if (k == "thresholds") c.log_search.thresholds = x.get<std::vector<double>>();
                    else if (k == "max_candidates") c.log_search.max_candidates = x.get<std::size_t>();
                    else throw FormatError("unknown log_search field: " + k);
                }
            } else if (key == "log_theta") c.log_theta = v.get<double>();
            else if (key == "cdcnn") c.cdcnn = cdcnn_spec_from_json(v.dump(), c.cdcnn);
            else if (key == "match_receptive_field") c.match_receptive_field = v.get<bool>();
            else if (key == "cdcnn_epochs") c.cdcnn_epochs = v.get<std::size_t>();
            else if (key == "cdcnn_learning_rate") c.cdcnn_learning_rate = v.get<double>();
            else if (key == "cdcnn_theta") c.cdcnn_theta = v.get<double>();
            else if (key == "tau_rule") c.tau_rule = tau_rule_from_name(v.get<std::string>());
            else if (key == "crop") c.crop = crop_spec_from_json(v.dump(), c.crop);
            else if (key == "classifier_iterations") c.classifier_iterations = v.get<std::size_t>();
            else if (key == "classifier_batch_pairs") c.classifier_batch_pairs = v.get<std::size_t>();
            else if (key == "classifier_learning_rate") c.classifier_learning_rate = v.get<double>();
            else if (key == "hit_radius_mm") c.hit_radius_mm = v.get<double>();
            else if (key == "target_sensitivity") c.target_sensitivity = v.get<double>();
            else if (key == "bench_warmups") c.bench_warmups = v.get<std::size_t>();
            else if (key == "bench_runs") c.bench_runs = v.get<std::size_t>();
            else throw FormatError("unknown experiment config field: " + key);
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("experiment config: ") + e.what());
    }
    return c;
}

const PipelineResult* ExperimentReport::pipeline(std::string_view name) const {
    for (const auto& p : pipelines) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

std::string experiment_report_to_json(const ExperimentReport& r) {
    json j;
    j["kind"] = "experiment";
    j["complete"] = r.complete;
    j["config"] = config_json(r.config);
    j["split"] = {{"train_seeds", r.train_seeds},
                  {"test_seeds", r.test_seeds},
                  {"train_lesions", r.train_lesions},
                  {"test_lesions", r.test_lesions}};
    if (r.log) {
        j["log"] = {{"params", json::parse(log_params_to_json(r.log->params))},
                    {"train_mean_sensitivity", r.log->mean_sensitivity},
                    {"train_mean_candidates", r.log->mean_candidates},
                    {"reached_theta", r.log->reached_theta}};
    }
    if (r.cdcnn_spec) {
        json cd;
        cd["spec"] = json::parse(cdcnn_spec_to_json(*r.cdcnn_spec));
        cd["epoch_loss_csv"] = csv_column("loss", r.cdcnn_loss);
        if (r.threshold) {
            const auto& t = *r.threshold;
            cd["threshold"] = {{"tau", t.tau},
                               {"train_mean_sensitivity", t.mean_sensitivity},
                               {"train_mean_candidates", t.mean_candidates},
                               {"train_mean_voxels", t.mean_voxels},
                               {"reached_theta", t.reached_theta},
                               {"budget_tau", t.budget_tau ? json(*t.budget_tau) : json(nullptr)}};
            std::string grid = "tau,mean_sensitivity,mean_candidates,mean_voxels\n";
            for (const auto& g : t.grid) {
                grid += io::format_double(g.tau) + ',' + io::format_double(g.mean_sensitivity) + ',' +
                        io::format_double(g.mean_candidates) + ',' + io::format_double(g.mean_voxels) + '\n';
            }
            cd["threshold_grid_csv"] = grid;
        }
        j["cdcnn"] = cd;
    }
    j["pipelines"] = json::array();
    for (const auto& p : r.pipelines) {
        json pj = {{"name", p.name},
                   {"candidate_sensitivity", p.candidate_sensitivity},
                   {"mean_candidates", p.mean_candidates},
                   {"classifier_loss_csv", csv_column("loss", p.classifier_loss)},
                   {"froc_csv", froc_to_csv(p.froc)},
                   {"max_sensitivity", max_sensitivity(p.froc)},
                   {"afp_at_target", p.afp_at_target ? json(*p.afp_at_target) : json(nullptr)}};
        if (p.operating_point) {
            pj["operating_point"] = {{"threshold", p.operating_point->threshold},
                                     {"sensitivity", p.operating_point->sensitivity},
                                     {"afp", p.operating_point->afp}};
        }
        j["pipelines"].push_back(pj);
    }
    return j.dump(2) + "\n";
}

std::string experiment_timing_to_json(const ExperimentTiming& t) {
    json j;
    j["stages"] = json::array();
    for (const auto& [name, s] : t.stage_seconds) j["stages"].push_back({{"name", name}, {"seconds", s}});
    if (t.bench) j["bench"] = json::parse(timing_report_to_json(*t.bench));
    return j.dump(2) + "\n";
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, ExperimentTiming* timing,
                                const ExperimentHooks& hooks) {
    cfg.validate();
    StageClock clock(timing, hooks);
    ExperimentReport report;
    report.config = cfg;
    auto checkpoint = [&] {
        if (hooks.on_stage) hooks.on_stage(report);
    };

    const Prepared p = prepare(cfg, clock);
    report.train_seeds = p.split.train_seeds;
    report.test_seeds = p.split.test_seeds;
    for (const auto& ph : p.split.train) report.train_lesions += ph.truth.size();
    for (const auto& ph : p.split.test) report.test_lesions += ph.truth.size();
    report.log = p.log;
    report.log->cells.clear();
    checkpoint();

    auto cd = train_and_select(cfg, p, p.spec, p.log.mean_candidates, clock);
    CdcnnModel model{p.spec, std::move(cd.trained.network)};
    if (cfg.tau_rule == TauRule::budget) {
        // Without a tau meeting the budget, the largest grid tau is the closest.
        model.spec.tau = cd.selection.budget_tau.value_or(cd.selection.grid.back().tau);
    } else {
        model.spec.tau = cd.selection.tau;
    }
    report.cdcnn_spec = model.spec;
    report.cdcnn_loss = cd.trained.epoch_loss;
    report.threshold = cd.selection;
    checkpoint();

    clock.begin("cdcnn-candidates");
    std::vector<CandidateSet> train_cd, test_cd;
    for (const auto& ph : p.split.train) train_cd.push_back(detect_candidates_cdcnn(model.network, ph.volume, model.spec.tau));
    for (const auto& ph : p.split.test) test_cd.push_back(detect_candidates_cdcnn(model.network, ph.volume, model.spec.tau));
    clock.end();

    report.pipelines.push_back(evaluate_pipeline(cfg, "log", p.split, p.train_log, p.test_log, 200, clock));
    checkpoint();
    nn::Network<float> cd_classifier;
    report.pipelines.push_back(
        evaluate_pipeline(cfg, "cdcnn", p.split, train_cd, test_cd, 300, clock, &cd_classifier));
    report.complete = true;
    checkpoint();

    if (timing) {
        clock.begin("bench");
        std::vector<Volume3D> volumes;
        for (const auto& ph : p.split.test) volumes.push_back(ph.volume);
        BenchOptions bo;
        bo.warmups = cfg.bench_warmups;
        bo.runs = cfg.bench_runs;
        bo.max_log_candidates = cfg.log_search.max_candidates;
        timing->bench = compare_pipelines(volumes, p.log.params, model, bo, ClassifierStage{&cd_classifier, cfg.crop}).report;
        clock.end();
    }
    return report;
}

CSweepReport run_c_sweep(const ExperimentConfig& cfg, std::span<const double> c_values,
                         std::optional<double> budget, const ExperimentHooks& hooks) {
    cfg.validate();
    if (c_values.empty()) throw InvalidArgument("c sweep needs at least one c value");
    for (double c : c_values) {
        if (!(c > 0.0 && c <= 1.0)) throw InvalidArgument("c values must lie in (0, 1]");
    }
    if (budget && !(*budget > 0.0)) throw InvalidArgument("candidate budget must be positive");
    StageClock clock(nullptr, hooks);
    const Prepared p = prepare(cfg, clock);

    CSweepReport report;
    report.log_params = p.log.params;
    report.log_test_sensitivity = pooled_sensitivity(p.test_log, p.split.test, cfg.hit_radius_mm);
    report.log_train_mean_candidates = mean_size(p.train_log);
    report.budget = budget.value_or(report.log_train_mean_candidates);
    report.receptive_field = p.spec.receptive_field;

    for (double c : c_values) {
        CdcnnSpec spec = p.spec;
        spec.c = c;
        const auto cd = train_and_select(cfg, p, spec, report.budget, clock);
        CSweepRow row;
        row.c = c;
        row.budget_met = cd.selection.budget_tau.has_value();
        row.tau = cd.selection.budget_tau.value_or(cd.selection.grid.back().tau);
        for (const auto& g : cd.selection.grid) {
            if (g.tau == row.tau) row.train_mean_candidates = g.mean_candidates;
        }
        row.final_loss = cd.trained.epoch_loss.empty() ? 0.0 : cd.trained.epoch_loss.back();
        std::vector<CandidateSet> test;
        double voxels = 0.0;
        for (const auto& ph : p.split.test) {
            const Volume3D resp = cdcnn_response(cd.trained.network, ph.volume);
            for (float x : resp.data()) voxels += x > row.tau ? 1.0 : 0.0;
            test.push_back(extract_candidates_from_response(resp, row.tau));
        }
        row.test_sensitivity = pooled_sensitivity(test, p.split.test, cfg.hit_radius_mm);
        row.test_mean_candidates = mean_size(test);
        row.test_mean_voxels = voxels / static_cast<double>(p.split.test.size());
        report.rows.push_back(row);
        if (hooks.log) {
            hooks.log("c=" + io::format_double(c) + " sensitivity=" + io::format_double(row.test_sensitivity));
        }
    }
    return report;
}

std::string c_sweep_to_json(const CSweepReport& r) {
    json j;
    j["kind"] = "c-sweep";
    j["log_params"] = json::parse(log_params_to_json(r.log_params));
    j["log_test_sensitivity"] = r.log_test_sensitivity;
    j["log_train_mean_candidates"] = r.log_train_mean_candidates;
    j["budget"] = r.budget;
    j["receptive_field"] = r.receptive_field;
    j["rows"] = json::array();
    for (const auto& row : r.rows) {
        j["rows"].push_back({{"c", row.c},
                             {"tau", row.tau},
                             {"budget_met", row.budget_met},
                             {"train_mean_candidates", row.train_mean_candidates},
                             {"test_sensitivity", row.test_sensitivity},
                             {"test_mean_candidates", row.test_mean_candidates},
                             {"test_mean_voxels", row.test_mean_voxels},
                             {"final_loss", row.final_loss}});
    }
    j["table_csv"] = c_sweep_to_csv(r);
    return j.dump(2) + "\n";
}

CSweepReport c_sweep_from_json(std::string_view text) {
    try {
        const json j = json::parse(text);
        if (j.value("kind", "") != "c-sweep") throw FormatError("not a c-sweep report");
        CSweepReport r;
        r.log_params = log_params_from_json(j.at("log_params").dump());
        r.log_test_sensitivity = j.at("log_test_sensitivity").get<double>();
        r.log_train_mean_candidates = j.at("log_train_mean_candidates").get<double>();
        r.budget = j.at("budget").get<double>();
        r.receptive_field = j.at("receptive_field").get<int>();
        for (const auto& row : j.at("rows")) {
            CSweepRow x;
            x.c = row.at("c").get<double>();
            x.tau = row.at("tau").get<double>();
            x.budget_met = row.at("budget_met").get<bool>();
            x.train_mean_candidates = row.at("train_mean_candidates").get<double>();
            x.test_sensitivity = row.at("test_sensitivity").get<double>();
            x.test_mean_candidates = row.at("test_mean_candidates").get<double>();
            x.test_mean_voxels = row.at("test_mean_voxels").get<double>();
            x.final_loss = row.at("final_loss").get<double>();
            r.rows.push_back(x);
        }
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("c-sweep report: ") + e.what());
    }
}

std::string c_sweep_to_csv(const CSweepReport& r) {
    std::string out = "c,tau,budget_met,train_mean_candidates,test_sensitivity,test_mean_candidates\n";
    for (const auto& row : r.rows) {
        out += io::format_double(row.c) + ',' + io::format_double(row.tau) + ',' + (row.budget_met ? "1" : "0") +
               ',' + io::format_double(row.train_mean_candidates) + ',' + io::format_double(row.test_sensitivity) +
               ',' + io::format_double(row.test_mean_candidates) + '\n';
    }
    return out;
}

}  // namespace blobsurrogate
