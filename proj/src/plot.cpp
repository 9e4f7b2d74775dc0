#include "blobsurrogate/plot.hpp"

#include "blobsurrogate/bench.hpp"
#include "blobsurrogate/error.hpp"
#include "blobsurrogate/evaluation.hpp"
#include "blobsurrogate/experiment.hpp"
#include "blobsurrogate/io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>

#include "json.hpp"

namespace blobsurrogate {

using nlohmann::json;

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 56;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string escape(std::string_view s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

std::string color(std::size_t i) { return kColors[i % std::size(kColors)]; }

// Rounds the range out to a "nice" step and returns the ticks.
std::vector<double> nice_ticks(double& lo, double& hi) {
    if (!(hi > lo)) {
        const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
        lo -= pad;
        hi += pad;
    }
    const double raw = (hi - lo) / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        step = m * mag;
        if (step >= raw) break;
    }
    lo = std::floor(lo / step) * step;
    hi = std::ceil(hi / step) * step;
    std::vector<double> ticks;
    for (double t = lo; t <= hi + step * 1e-9; t += step) ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    return ticks;
}

std::string header(const ChartLabels& labels, const PlotOptions& options) {
    std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    if (!options.deterministic) {
        const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        s += std::string("<!-- generated ") + buf + " -->\n";
    }
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) + "\" height=\"" + fmt(kHeight) +
         "\" viewBox=\"0 0 " + fmt(kWidth) + ' ' + fmt(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         escape(labels.title) + "</text>\n";
    const double px = kLeft + (kWidth - kLeft - kRight) / 2;
    s += "<text x=\"" + fmt(px) + "\" y=\"" + fmt(kHeight - 14) + "\" text-anchor=\"middle\">" + escape(labels.x) +
         "</text>\n";
    const double py = kTop + (kHeight - kTop - kBottom) / 2;
    s += "<text x=\"18\" y=\"" + fmt(py) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " + fmt(py) + ")\">" +
         escape(labels.y) + "</text>\n";
    return s;
}

struct Frame {
    double x0, x1, y0, y1;
    double sx(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
    double sy(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

std::string y_axis(const Frame& f, const std::vector<double>& ticks) {
    std::string s;
    for (double t : ticks) {
        const double y = f.sy(t);
        s += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(y) + "\" x2=\"" + fmt(kWidth - kRight) + "\" y2=\"" +
             fmt(y) + "\" stroke=\"#e0e0e0\"/>\n";
        s += "<text x=\"" + fmt(kLeft - 6) + "\" y=\"" + fmt(y + 4) + "\" text-anchor=\"end\">" + tick_label(t) +
             "</text>\n";
    }
    s += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop) + "\" x2=\"" + fmt(kLeft) + "\" y2=\"" +
         fmt(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kHeight - kBottom) + "\" x2=\"" + fmt(kWidth - kRight) +
         "\" y2=\"" + fmt(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
    return s;
}

std::string legend(const std::vector<PlotSeries>& series) {
    std::string s;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const double y = kTop + 10 + 20.0 * static_cast<double>(i);
        const double x = kWidth - kRight + 14;
        s += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y - 9) + "\" width=\"12\" height=\"12\" fill=\"" + color(i) +
             "\"/>\n";
        s += "<text x=\"" + fmt(x + 18) + "\" y=\"" + fmt(y + 1) + "\">" + escape(series[i].name) + "</text>\n";
    }
    return s;
}

void require_points(const std::vector<PlotSeries>& series) {
    if (series.empty()) throw InvalidArgument("plot has no series");
    for (const auto& s : series) {
        if (s.points.empty()) throw InvalidArgument("plot series '" + s.name + "' is empty");
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) throw InvalidArgument("plot series '" + s.name + "' is not finite");
        }
    }
}

json parse_report(std::string_view text) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("report is not valid JSON: ") + e.what());
    }
}

std::string froc_plot(std::string_view text, const PlotOptions& options) {
    const json j = parse_report(text);
    std::vector<PlotSeries> series;
    try {
        for (const auto& p : j.at("pipelines")) {
            PlotSeries s;
            s.name = p.at("name").get<std::string>();
            for (const auto& pt : froc_points_from_csv(p.at("froc_csv").get<std::string>())) {
                s.points.emplace_back(pt.afp, pt.sensitivity);
            }
            series.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed experiment report: ") + e.what());
    }
    return render_line_chart(series, {"FROC", "false positives per volume", "sensitivity"}, options);
}

std::string timing_plot(std::string_view text, const PlotOptions& options) {
    json j = parse_report(text);
    if (j.contains("bench")) j = j.at("bench");
    const TimingReport r = timing_report_from_json(j.dump());
    const StageTiming* log = r.find(kStageLog);
    const StageTiming* cd = r.find(kStageCdcnn);
    if (!log || !cd) throw FormatError("timing report lacks the candidate stages");
    const StageTiming* cls = r.find(kStageClassifier);
    const double c = cls ? cls->median_s : 0.0;
    // Both pipelines share one classifier measurement.
    std::vector<PlotSeries> series{{"candidates", {{0, log->median_s}, {1, cd->median_s}}}};
    if (cls) series.push_back({"classifier", {{0, c}, {1, c}}});
    return render_bar_chart({"LoG", "cdCNN"}, series, {"Median time per volume", "pipeline", "seconds"}, options);
}

std::string c_sweep_plot(std::string_view text, const PlotOptions& options) {
    const CSweepReport r = c_sweep_from_json(text);
    std::vector<std::string> cats;
    PlotSeries s{"cdCNN", {}};
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        cats.push_back("c=" + io::format_double(r.rows[i].c));
        s.points.emplace_back(static_cast<double>(i), r.rows[i].test_sensitivity);
    }
    return render_bar_chart(cats, {s}, {"Candidate sensitivity by c", "c", "sensitivity"}, options);
}

}  // namespace

PlotKind plot_kind_from_name(std::string_view name) {
    if (name == "froc") return PlotKind::froc;
    if (name == "timing") return PlotKind::timing;
    if (name == "c-sweep") return PlotKind::c_sweep;
    throw InvalidArgument("unknown plot kind: " + std::string(name));
}

std::string render_line_chart(const std::vector<PlotSeries>& series, const ChartLabels& labels,
                              const PlotOptions& options) {
    require_points(series);
    Frame f{0, 0, 0, 0};
    bool first = true;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            if (first) {
                f = {x, x, y, y};
                first = false;
            }
            f.x0 = std::min(f.x0, x);
            f.x1 = std::max(f.x1, x);
            f.y0 = std::min(f.y0, y);
            f.y1 = std::max(f.y1, y);
        }
    }
    f.x0 = std::min(f.x0, 0.0);
    f.y0 = std::min(f.y0, 0.0);
    const auto xt = nice_ticks(f.x0, f.x1);
    const auto yt = nice_ticks(f.y0, f.y1);

    std::string svg = header(labels, options) + y_axis(f, yt);
    for (double t : xt) {
        svg += "<text x=\"" + fmt(f.sx(t)) + "\" y=\"" + fmt(kHeight - kBottom + 16) + "\" text-anchor=\"middle\">" +
               tick_label(t) + "</text>\n";
    }
    for (std::size_t i = 0; i < series.size(); ++i) {
        svg += "<g class=\"series\" data-name=\"" + escape(series[i].name) + "\" stroke=\"" + color(i) +
               "\" fill=\"" + color(i) + "\">\n";
        if (series[i].points.size() > 1) {
            svg += "<polyline fill=\"none\" stroke-width=\"2\" points=\"";
            for (const auto& [x, y] : series[i].points) svg += fmt(f.sx(x)) + ',' + fmt(f.sy(y)) + ' ';
            svg.back() = '"';
            svg += "/>\n";
        }
        for (const auto& [x, y] : series[i].points) {
            svg += "<circle cx=\"" + fmt(f.sx(x)) + "\" cy=\"" + fmt(f.sy(y)) + "\" r=\"3\"/>\n";
        }
        svg += "</g>\n";
    }
    return svg + legend(series) + "</svg>\n";
}

std::string render_bar_chart(const std::vector<std::string>& categories,
                             const std::vector<PlotSeries>& series, const ChartLabels& labels,
                             const PlotOptions& options) {
    require_points(series);
    if (categories.empty()) throw InvalidArgument("bar chart has no categories");
    for (const auto& s : series) {
        if (s.points.size() != categories.size()) throw InvalidArgument("bar series length differs from categories");
    }
    Frame f{0, static_cast<double>(categories.size()), 0, 0};
    for (const auto& s : series) {
        for (const auto& p : s.points) f.y1 = std::max(f.y1, p.second);
    }
    const auto yt = nice_ticks(f.y0, f.y1);
    std::string svg = header(labels, options) + y_axis(f, yt);
    const double slot = (kWidth - kLeft - kRight) / static_cast<double>(categories.size());
    const double bar = slot * 0.7 / static_cast<double>(series.size());
    for (std::size_t c = 0; c < categories.size(); ++c) {
        const double x = kLeft + slot * static_cast<double>(c);
        svg += "<text x=\"" + fmt(x + slot / 2) + "\" y=\"" + fmt(kHeight - kBottom + 16) +
               "\" text-anchor=\"middle\">" + escape(categories[c]) + "</text>\n";
    }
    for (std::size_t i = 0; i < series.size(); ++i) {
        svg += "<g class=\"series\" data-name=\"" + escape(series[i].name) + "\" fill=\"" + color(i) + "\">\n";
        for (std::size_t c = 0; c < categories.size(); ++c) {
            const double v = series[i].points[c].second;
            const double x = kLeft + slot * (static_cast<double>(c) + 0.15) + bar * static_cast<double>(i);
            const double top = f.sy(std::max(v, 0.0));
            svg += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(top) + "\" width=\"" + fmt(bar) + "\" height=\"" +
                   fmt(f.sy(0) - top) + "\"><title>" + tick_label(v) + "</title></rect>\n";
        }
        svg += "</g>\n";
    }
    return svg + legend(series) + "</svg>\n";
}

std::string render_plot(std::string_view report_text, PlotKind kind, const PlotOptions& options) {
    switch (kind) {
        case PlotKind::froc: return froc_plot(report_text, options);
        case PlotKind::timing: return timing_plot(report_text, options);
        case PlotKind::c_sweep: return c_sweep_plot(report_text, options);
    }
    throw InvalidArgument("unknown plot kind");
}

void plot_emit(const std::filesystem::path& report, PlotKind kind, const std::filesystem::path& out,
               const PlotOptions& options) {
    const std::string svg = render_plot(io::read_file(report), kind, options);
    io::write_file_atomic(out, svg);
}

}  // namespace blobsurrogate
