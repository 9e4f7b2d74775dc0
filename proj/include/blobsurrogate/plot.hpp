#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace blobsurrogate {

enum class PlotKind { froc, timing, c_sweep };

PlotKind plot_kind_from_name(std::string_view name);

struct PlotOptions {
    /// Leave out the generation timestamp comment.
    bool deterministic = false;
};

struct PlotSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

struct ChartLabels {
    std::string title;
    std::string x;
    std::string y;
};

/// Polyline per series with markers at every point.
std::string render_line_chart(const std::vector<PlotSeries>& series, const ChartLabels& labels,
                              const PlotOptions& options);
/// One bar group per category; `values[s][c]` is series s in category c.
std::string render_bar_chart(const std::vector<std::string>& categories,
                             const std::vector<PlotSeries>& series, const ChartLabels& labels,
                             const PlotOptions& options);

/// froc: experiment report, one series per pipeline.
/// timing: a timing report (or experiment timing file with a "bench" entry).
/// c-sweep: a c-sweep report.
std::string render_plot(std::string_view report_text, PlotKind kind, const PlotOptions& options);

/// Renders first, so a malformed report or empty series leaves no file behind.
void plot_emit(const std::filesystem::path& report, PlotKind kind, const std::filesystem::path& out,
               const PlotOptions& options);

}  // namespace blobsurrogate
