#include "blobsurrogate/cli.hpp"

#include "blobsurrogate/bench.hpp"
#include "blobsurrogate/cdcnn.hpp"
#include "blobsurrogate/classifier.hpp"
#include "blobsurrogate/error.hpp"
#include "blobsurrogate/evaluation.hpp"
#include "blobsurrogate/experiment.hpp"
#include "blobsurrogate/io.hpp"
#include "blobsurrogate/nn/serialize.hpp"
#include "blobsurrogate/parallel.hpp"
#include "blobsurrogate/phantom.hpp"
#include "blobsurrogate/plot.hpp"
#include "blobsurrogate/scalespace.hpp"
#include "blobsurrogate/volume.hpp"

#include <iostream>
#include <optional>

#include "CLI11.hpp"

namespace blobsurrogate {

namespace fs = std::filesystem;

namespace {

fs::path default_truth_path(const fs::path& volume) { return fs::path(volume.string() + ".truth.json"); }

// Truth files default to <volume>.truth.json.
std::vector<LabeledVolume> load_labeled(const std::vector<std::string>& volumes,
                                        const std::vector<std::string>& truths) {
    if (!truths.empty() && truths.size() != volumes.size()) {
        throw InvalidArgument("--truths must list one file per volume");
    }
    std::vector<LabeledVolume> out;
    for (std::size_t i = 0; i < volumes.size(); ++i) {
        const fs::path t = truths.empty() ? default_truth_path(volumes[i]) : fs::path(truths[i]);
        out.push_back({load_volume(volumes[i]), load_truth(t)});
    }
    return out;
}

void check_truth_files(const std::vector<std::string>& volumes, const std::vector<std::string>& truths) {
    if (!truths.empty()) return;  // validated by CLI11
    for (const auto& v : volumes) {
        if (!fs::is_regular_file(default_truth_path(v))) {
            throw InvalidArgument("missing truth file " + default_truth_path(v).string());
        }
    }
}

std::vector<double> parse_thresholds(const std::vector<double>& given, const std::vector<double>& fallback) {
    return given.empty() ? fallback : given;
}

struct PhantomArgs {
    std::uint64_t seed = 0;
    std::string out, truth, config;
    std::optional<std::size_t> size;
    std::optional<double> noise, diameter;
    std::optional<int> lesions;
};

struct LogArgs {
    std::vector<std::string> volumes, truths;
    double theta = 0.95;
    double sigma_lo = 1.0, sigma_hi = 6.0, sigma_step = 1.0;
    std::vector<double> thresholds;
    std::size_t max_candidates = 100000;
    double hit_radius = 1.5;
    std::string out;
};

struct TrainCdArgs {
    std::vector<std::string> volumes, truths;
    std::string log, out;
    std::uint64_t seed = 0;
    double c = 0.001, sigma_smooth = 1.0, theta = 0.95, lr = 0.002, hit_radius = 1.5;
    std::size_t epochs = 60;
    int hidden = 3;
    std::optional<int> receptive_field;
    std::optional<double> budget;
};

struct TrainClsArgs {
    std::vector<std::string> volumes, truths;
    std::string log, cdcnn, out, config;
    std::uint64_t seed = 0;
    std::size_t iterations = 500, batch_pairs = 16;
    double lr = 5e-5;
    bool no_augment = false;
};

struct DetectArgs {
    std::string volume, log, cdcnn, classifier, out;
    std::optional<double> tau;
    std::size_t max_candidates = 100000;
};

struct EvalArgs {
    std::vector<std::string> detections, truths;
    double hit_radius = 1.5, target = 0.9;
    std::string out;
};

struct BenchArgs {
    std::vector<std::string> volumes;
    std::size_t count = 4, size = 64, runs = 5, warmups = 1;
    std::optional<std::uint64_t> seed;
    std::string log, cdcnn, classifier, out;
};

struct ExperimentArgs {
    std::string config, out, timing;
    std::uint64_t seed = 0;
    std::vector<double> c_values{kDefaultCValues};
    std::optional<double> budget;
};

struct PlotArgs {
    std::string report, kind, out;
    bool deterministic = false;
};

CandidateSet candidates_for(const Volume3D& v, const std::optional<LoGParams>& log,
                            const std::optional<CdcnnModel>& cd, std::size_t max_candidates) {
    if (log) return detect_candidates(v, *log, max_candidates);
    return detect_candidates_cdcnn(cd->network, v, cd->spec.tau);
}

int run_phantom(const PhantomArgs& a, std::ostream& out) {
    PhantomConfig cfg;
    if (!a.config.empty()) cfg = phantom_config_from_json(io::read_file(a.config));
    if (a.size) cfg.dims = {*a.size, *a.size, *a.size};
    if (a.noise) cfg.noise_sigma = static_cast<float>(*a.noise);
    if (a.diameter) cfg.fixed_diameter_mm = *a.diameter;
    if (a.lesions) {
        cfg.lesion_count_mean = *a.lesions;
        cfg.lesion_count_min = *a.lesions;
        cfg.lesion_count_max = *a.lesions;
    }
    cfg.seed = a.seed;
    const Phantom p = generate_phantom(cfg);
    const fs::path truth = a.truth.empty() ? default_truth_path(a.out) : fs::path(a.truth);
    save_volume(p.volume, a.out);
    save_truth(p.truth, truth);
    out << "wrote " << a.out << " with " << p.truth.size() << " lesions\n";
    return kExitOk;
}

int run_optimize_log(const LogArgs& a, std::ostream& out) {
    check_truth_files(a.volumes, a.truths);
    const auto training = load_labeled(a.volumes, a.truths);
    LogSearchSpace search;
    search.sigma_lo = a.sigma_lo;
    search.sigma_hi = a.sigma_hi;
    search.sigma_step = a.sigma_step;
    search.thresholds = parse_thresholds(a.thresholds, search.thresholds);
    search.max_candidates = a.max_candidates;
    search.hit_radius_mm = a.hit_radius;
    const auto r = optimize_log_params(training, search, a.theta);
    save_log_params(r.params, a.out);
    out << "sigma " << r.params.sigma_min << ".." << r.params.sigma_max << " threshold "
        << r.params.response_threshold << " sensitivity " << r.mean_sensitivity << " candidates "
        << r.mean_candidates << (r.reached_theta ? "" : " (theta not reached)") << '\n';
    return kExitOk;
}

int run_train_cd(const TrainCdArgs& a, std::ostream& out) {
    check_truth_files(a.volumes, a.truths);
    const auto training = load_labeled(a.volumes, a.truths);
    const LoGParams log = load_log_params(a.log);
    CdcnnSpec spec = CdcnnSpec::for_receptive_field(
        a.receptive_field.value_or(receptive_field_for_log(log, training.front().volume.spacing())));
    spec.hidden_channels = a.hidden;
    spec.c = a.c;
    spec.sigma_smooth_mm = a.sigma_smooth;
    spec.validate();

    std::vector<CdcnnSample> samples;
    for (const auto& t : training) {
        const auto cands = detect_candidates(t.volume, log, 100000);
        const auto q = build_target(t.volume.dims(), t.volume.spacing(), cands, t.truth, spec.c, a.hit_radius);
        samples.push_back({t.volume, smooth_target(q, spec.sigma_smooth_mm)});
    }
    CdcnnTrainOptions opts;
    opts.epochs = a.epochs;
    opts.learning_rate = a.lr;
    opts.seed = a.seed;
    opts.on_epoch = [&](std::size_t e, double loss) { out << "epoch " << e << " loss " << loss << '\n'; };
    auto trained = train_cdcnn(samples, spec, opts);

    std::vector<ResponseSample> responses;
    for (const auto& t : training) responses.push_back({cdcnn_response(trained.network, t.volume), t.truth});
    const auto sel = select_threshold(responses, a.theta, a.budget, a.hit_radius);
    spec.tau = a.budget && sel.budget_tau ? *sel.budget_tau : sel.tau;
    save_cdcnn_model({spec, std::move(trained.network)}, a.out);
    out << "rf " << spec.receptive_field << " depth " << spec.depth << " tau " << spec.tau << " sensitivity "
        << sel.mean_sensitivity << " candidates " << sel.mean_candidates << '\n';
    return kExitOk;
}

int run_train_cls(const TrainClsArgs& a, std::ostream& out) {
    if (a.log.empty() == a.cdcnn.empty()) throw InvalidArgument("give exactly one of --log or --cdcnn");
    check_truth_files(a.volumes, a.truths);
    const auto training = load_labeled(a.volumes, a.truths);
    std::optional<LoGParams> log;
    std::optional<CdcnnModel> cd;
    if (!a.log.empty()) log = load_log_params(a.log);
    else cd = load_cdcnn_model(a.cdcnn);
    CropSpec spec;
    if (!a.config.empty()) spec = crop_spec_from_json(io::read_file(a.config));
    std::vector<ClassifierSource> sources;
    for (const auto& t : training) sources.push_back({t.volume, t.truth, candidates_for(t.volume, log, cd, 100000)});
    ClassifierTrainOptions opts;
    opts.iterations = a.iterations;
    opts.batch_pairs = a.batch_pairs;
    opts.learning_rate = a.lr;
    opts.augment = !a.no_augment;
    opts.seed = a.seed;
    opts.on_iteration = [&](std::size_t it, double loss, double acc) {
        if ((it + 1) % 50 == 0) out << "iteration " << it + 1 << " loss " << loss << " accuracy " << acc << '\n';
    };
    auto trained = train_classifier(sources, spec, opts);
    save_classifier_model({spec, std::move(trained.network)}, a.out);
    return kExitOk;
}

int run_detect(const DetectArgs& a, std::ostream& out) {
    if (a.log.empty() == a.cdcnn.empty()) throw InvalidArgument("give exactly one of --log or --cdcnn");
    const Volume3D v = load_volume(a.volume);
    std::optional<LoGParams> log;
    std::optional<CdcnnModel> cd;
    if (!a.log.empty()) log = load_log_params(a.log);
    else {
        cd = load_cdcnn_model(a.cdcnn);
        if (a.tau) cd->spec.tau = *a.tau;
    }
    const CandidateSet cands = candidates_for(v, log, cd, a.max_candidates);
    if (a.classifier.empty()) {
        io::write_file_atomic(a.out, candidates_to_csv(cands));
        out << cands.size() << " candidates\n";
        return kExitOk;
    }
    const auto model = load_classifier_model(a.classifier);
    const auto dets = classify_candidates(model.network, model.spec, v, cands);
    io::write_file_atomic(a.out, detections_to_csv(dets));
    out << dets.size() << " detections\n";
    return kExitOk;
}

int run_eval(const EvalArgs& a, std::ostream& out) {
    if (a.truths.size() != a.detections.size()) throw InvalidArgument("--truths must list one file per detection file");
    std::vector<VolumeDetections> vols;
    for (std::size_t i = 0; i < a.detections.size(); ++i) {
        vols.push_back({detections_from_csv(io::read_file(a.detections[i])), load_truth(a.truths[i])});
    }
    const FrocCurve curve = froc(vols, a.hit_radius);
    if (!a.out.empty()) io::write_file_atomic(a.out, froc_to_csv(curve));
    const auto afp = afp_at_sensitivity(curve, a.target);
    out << "lesions " << curve.lesions << " max_sensitivity " << max_sensitivity(curve) << " afp_at_"
        << a.target << ' ';
    if (afp) out << *afp << '\n';
    else out << "unreached\n";
    return kExitOk;
}

int run_bench(const BenchArgs& a, std::ostream& out) {
    std::vector<Volume3D> volumes;
    if (!a.volumes.empty()) {
        for (const auto& p : a.volumes) volumes.push_back(load_volume(p));
    } else {
        if (!a.seed) throw InvalidArgument("bench needs --seed when generating volumes");
        PhantomConfig cfg;
        cfg.dims = {a.size, a.size, a.size};
        const auto split = generate_split(cfg, 0, a.count, *a.seed);
        for (const auto& p : split.test) volumes.push_back(p.volume);
    }
    const LoGParams log = load_log_params(a.log);
    const CdcnnModel cd = load_cdcnn_model(a.cdcnn);
    std::optional<ClassifierModel> cls;
    std::optional<ClassifierStage> stage;
    if (!a.classifier.empty()) {
        cls = load_classifier_model(a.classifier);
        stage = ClassifierStage{&cls->network, cls->spec};
    }
    BenchOptions opts;
    opts.runs = a.runs;
    opts.warmups = a.warmups;
    const auto r = compare_pipelines(volumes, log, cd, opts, stage).report;
    if (!a.out.empty()) io::write_file_atomic(a.out, timing_report_to_json(r));
    for (const auto& s : r.stages) out << s.name << " median " << s.median_s << " s\n";
    out << "speedup " << r.speedup << '\n';
    return kExitOk;
}

ExperimentConfig load_experiment_config(const ExperimentArgs& a) {
    ExperimentConfig cfg;
    if (!a.config.empty()) cfg = experiment_config_from_json(io::read_file(a.config));
    cfg.seed = a.seed;
    return cfg;
}

int run_experiment_cmd(const ExperimentArgs& a, std::ostream& out) {
    const ExperimentConfig cfg = load_experiment_config(a);
    ExperimentHooks hooks;
    hooks.log = [&](std::string_view s) { out << s << std::endl; };
    // Each stage rewrites the report, so a failure leaves the finished stages behind.
    hooks.on_stage = [&](const ExperimentReport& r) { io::write_file_atomic(a.out, experiment_report_to_json(r)); };
    ExperimentTiming timing;
    const auto report = run_experiment(cfg, a.timing.empty() ? nullptr : &timing, hooks);
    if (!a.timing.empty()) io::write_file_atomic(a.timing, experiment_timing_to_json(timing));
    for (const auto& p : report.pipelines) {
        out << p.name << " candidate_sensitivity " << p.candidate_sensitivity << " max_sensitivity "
            << max_sensitivity(p.froc) << " afp_at_target ";
        if (p.afp_at_target) out << *p.afp_at_target << '\n';
        else out << "unreached\n";
    }
    return kExitOk;
}

int run_sweep_c(const ExperimentArgs& a, std::ostream& out) {
    const ExperimentConfig cfg = load_experiment_config(a);
    ExperimentHooks hooks;
    hooks.log = [&](std::string_view s) { out << s << std::endl; };
    const auto report = run_c_sweep(cfg, a.c_values, a.budget, hooks);
    io::write_file_atomic(a.out, c_sweep_to_json(report));
    out << c_sweep_to_csv(report);
    return kExitOk;
}

int run_plot(const PlotArgs& a, std::ostream& out) {
    PlotOptions opts;
    opts.deterministic = a.deterministic;
    plot_emit(a.report, plot_kind_from_name(a.kind), a.out, opts);
    out << "wrote " << a.out << '\n';
    return kExitOk;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Blob candidate detection with a LoG detector and its CNN surrogate", "blobsurrogate"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    app.fallthrough();
    int threads = 0;
    app.add_option("--threads", threads, "Worker threads (0: BLOBSURROGATE_THREADS or all cores)")
        ->check(CLI::NonNegativeNumber);

    const auto existing = CLI::ExistingFile;

    PhantomArgs ph;
    auto* phantom = app.add_subcommand("phantom", "Generate one synthetic phantom");
    phantom->add_option("--seed", ph.seed, "Random seed")->required();
    phantom->add_option("--out", ph.out, "Volume output (BSV1)")->required();
    phantom->add_option("--truth", ph.truth, "Truth output (default <out>.truth.json)");
    phantom->add_option("--config", ph.config, "Phantom config JSON")->check(existing);
    phantom->add_option("--size", ph.size, "Cubic edge in voxels")->check(CLI::PositiveNumber);
    phantom->add_option("--noise", ph.noise, "Noise standard deviation");
    phantom->add_option("--diameter", ph.diameter, "Fixed lesion diameter in mm");
    phantom->add_option("--lesions", ph.lesions, "Fixed lesion count");

    LogArgs lg;
    auto* optimize = app.add_subcommand("optimize-log", "Grid-search LoG parameters on labeled volumes");
    optimize->add_option("--volumes", lg.volumes, "Training volumes")->required()->check(existing);
    optimize->add_option("--truths", lg.truths, "Truth files (default <volume>.truth.json)")->check(existing);
    optimize->add_option("--theta", lg.theta, "Minimum mean sensitivity");
    optimize->add_option("--sigma-lo", lg.sigma_lo, "Smallest sigma in mm");
    optimize->add_option("--sigma-hi", lg.sigma_hi, "Largest sigma in mm");
    optimize->add_option("--sigma-step", lg.sigma_step, "Sigma step in mm");
    optimize->add_option("--thresholds", lg.thresholds, "Response thresholds to search");
    optimize->add_option("--max-candidates", lg.max_candidates, "Candidate cap per volume");
    optimize->add_option("--hit-radius", lg.hit_radius, "Hit radius in mm");
    optimize->add_option("--out", lg.out, "LoG parameter JSON output")->required();

    TrainCdArgs cd;
    auto* train_cd = app.add_subcommand("train-cd", "Train the candidate detection network");
    train_cd->add_option("--volumes", cd.volumes, "Training volumes")->required()->check(existing);
    train_cd->add_option("--truths", cd.truths, "Truth files")->check(existing);
    train_cd->add_option("--log", cd.log, "LoG parameter JSON")->required()->check(existing);
    train_cd->add_option("--seed", cd.seed, "Random seed")->required();
    train_cd->add_option("--c", cd.c, "Target value at non-lesion LoG candidates");
    train_cd->add_option("--sigma-smooth", cd.sigma_smooth, "Target smoothing in mm");
    train_cd->add_option("--epochs", cd.epochs, "Training epochs");
    train_cd->add_option("--lr", cd.lr, "Adam learning rate");
    train_cd->add_option("--hidden", cd.hidden, "Hidden channels");
    train_cd->add_option("--receptive-field", cd.receptive_field, "Override the LoG-matched receptive field");
    train_cd->add_option("--theta", cd.theta, "Minimum training sensitivity for tau");
    train_cd->add_option("--budget", cd.budget, "Pick tau by mean candidate budget instead");
    train_cd->add_option("--hit-radius", cd.hit_radius, "Hit radius in mm");
    train_cd->add_option("--out", cd.out, "Model weights (BSW1, spec in <out>.json)")->required();

    TrainClsArgs cl;
    auto* train_cls = app.add_subcommand("train-cls", "Train the crop classifier");
    train_cls->add_option("--volumes", cl.volumes, "Training volumes")->required()->check(existing);
    train_cls->add_option("--truths", cl.truths, "Truth files")->check(existing);
    train_cls->add_option("--log", cl.log, "Draw negatives from LoG candidates")->check(existing);
    train_cls->add_option("--cdcnn", cl.cdcnn, "Draw negatives from cdCNN candidates")->check(existing);
    train_cls->add_option("--config", cl.config, "Crop spec JSON")->check(existing);
    train_cls->add_option("--seed", cl.seed, "Random seed")->required();
    train_cls->add_option("--iterations", cl.iterations, "Batch iterations");
    train_cls->add_option("--batch-pairs", cl.batch_pairs, "Positive/negative pairs per batch");
    train_cls->add_option("--lr", cl.lr, "Adam learning rate");
    train_cls->add_flag("--no-augment", cl.no_augment, "Disable crop augmentation");
    train_cls->add_option("--out", cl.out, "Model weights (BSW1, spec in <out>.json)")->required();

    DetectArgs de;
    auto* detect = app.add_subcommand("detect", "Detect candidates, optionally classified");
    detect->add_option("--volume", de.volume, "Input volume")->required()->check(existing);
    detect->add_option("--log", de.log, "LoG parameter JSON")->check(existing);
    detect->add_option("--cdcnn", de.cdcnn, "cdCNN weights")->check(existing);
    detect->add_option("--tau", de.tau, "Override the model's tau");
    detect->add_option("--classifier", de.classifier, "Classifier weights")->check(existing);
    detect->add_option("--max-candidates", de.max_candidates, "LoG candidate cap");
    detect->add_option("--out", de.out, "CSV output")->required();

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "FROC of detection CSVs against truth");
    eval->add_option("--detections", ev.detections, "Detection CSVs")->required()->check(existing);
    eval->add_option("--truths", ev.truths, "Truth files, one per CSV")->required()->check(existing);
    eval->add_option("--hit-radius", ev.hit_radius, "Hit radius in mm");
    eval->add_option("--target", ev.target, "Sensitivity for the AFP summary");
    eval->add_option("--out", ev.out, "FROC CSV output");

    BenchArgs be;
    auto* bench = app.add_subcommand("bench", "Time LoG against cdCNN candidate detection");
    bench->add_option("--volumes", be.volumes, "Volumes to time on")->check(existing);
    bench->add_option("--count", be.count, "Phantoms to generate without --volumes");
    bench->add_option("--size", be.size, "Edge of generated phantoms");
    bench->add_option("--seed", be.seed, "Seed for generated phantoms");
    bench->add_option("--runs", be.runs, "Measured runs")->check(CLI::Range(3, 1000000));
    bench->add_option("--warmups", be.warmups, "Discarded runs");
    bench->add_option("--log", be.log, "LoG parameter JSON")->required()->check(existing);
    bench->add_option("--cdcnn", be.cdcnn, "cdCNN weights")->required()->check(existing);
    bench->add_option("--classifier", be.classifier, "Classifier weights")->check(existing);
    bench->add_option("--out", be.out, "Timing report JSON");

    ExperimentArgs ex;
    auto* experiment = app.add_subcommand("experiment", "Run the full two-pipeline experiment");
    experiment->add_option("--config", ex.config, "Experiment config JSON")->check(existing);
    experiment->add_option("--seed", ex.seed, "Master seed")->required();
    experiment->add_option("--out", ex.out, "Report JSON")->required();
    experiment->add_option("--timing", ex.timing, "Timing JSON");

    ExperimentArgs sw;
    auto* sweep = app.add_subcommand("sweep-c", "Candidate sensitivity of the cdCNN for several c");
    sweep->add_option("--config", sw.config, "Experiment config JSON")->check(existing);
    sweep->add_option("--seed", sw.seed, "Master seed")->required();
    sweep->add_option("--c", sw.c_values, "c values");
    sweep->add_option("--budget", sw.budget, "Candidates per volume (default: LoG training mean)");
    sweep->add_option("--out", sw.out, "Report JSON")->required();

    PlotArgs pl;
    auto* plot = app.add_subcommand("plot", "Render a report as SVG");
    plot->add_option("--report", pl.report, "Report JSON")->required()->check(existing);
    plot->add_option("--kind", pl.kind, "froc, timing or c-sweep")
        ->required()
        ->check(CLI::IsMember({"froc", "timing", "c-sweep"}));
    plot->add_option("--out", pl.out, "SVG output")->required();
    plot->add_flag("--deterministic", pl.deterministic, "Omit the timestamp comment");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n\n";
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return kExitUsage;
    }

    try {
        set_thread_count(threads);
        if (phantom->parsed()) return run_phantom(ph, out);
        if (optimize->parsed()) return run_optimize_log(lg, out);
        if (train_cd->parsed()) return run_train_cd(cd, out);
        if (train_cls->parsed()) return run_train_cls(cl, out);
        if (detect->parsed()) return run_detect(de, out);
        if (eval->parsed()) return run_eval(ev, out);
        if (bench->parsed()) return run_bench(be, out);
        if (experiment->parsed()) return run_experiment_cmd(ex, out);
        if (sweep->parsed()) return run_sweep_c(sw, out);
        if (plot->parsed()) return run_plot(pl, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitDomainError;
    }
    err << app.help();
    return kExitUsage;
}

int cli_dispatch(int argc, const char* const* argv) {
    std::vector<std::string> args(argv, argv + argc);
    return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace blobsurrogate
