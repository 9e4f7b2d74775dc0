#include "blobsurrogate/evaluation.hpp"

#include "blobsurrogate/error.hpp"
#include "blobsurrogate/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace blobsurrogate {

namespace {

std::vector<std::size_t> processing_order(std::span<const Detection> detections) {
    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detections[a].probability > detections[b].probability;
    });
    return order;
}

// Index of the nearest unclaimed lesion within the radius, or -1.
std::ptrdiff_t claim(const Point3& p, const GroundTruth& truth, std::vector<bool>& claimed,
                     double radius) {
    std::ptrdiff_t best = -1;
    double best_d = 0.0;
    for (std::size_t j = 0; j < truth.lesions.size(); ++j) {
        if (claimed[j]) continue;
        const double d = distance(p, truth.lesions[j].center);
        if (d <= radius && (best < 0 || d < best_d)) {
            best = static_cast<std::ptrdiff_t>(j);
            best_d = d;
        }
    }
    if (best >= 0) claimed[static_cast<std::size_t>(best)] = true;
    return best;
}

void require_radius(double r) {
    if (!(r > 0.0)) throw InvalidArgument("hit radius must be positive");
}

}  // namespace

MatchCounts match_detections(std::span<const Detection> detections, const GroundTruth& truth,
                             double hit_radius_mm, double threshold) {
    require_radius(hit_radius_mm);
    MatchCounts m;
    std::vector<bool> claimed(truth.size(), false);
    for (std::size_t i : processing_order(detections)) {
        if (!(detections[i].probability >= threshold)) continue;
        if (claim(detections[i].position, truth, claimed, hit_radius_mm) >= 0) {
            ++m.true_positives;
        } else {
            ++m.false_positives;
        }
    }
    m.missed = truth.size() - m.true_positives;
    return m;
}

std::vector<bool> match_flags(std::span<const Detection> detections, const GroundTruth& truth,
                              double hit_radius_mm) {
    require_radius(hit_radius_mm);
    std::vector<bool> flags(detections.size(), false);
    std::vector<bool> claimed(truth.size(), false);
    for (std::size_t i : processing_order(detections)) {
        flags[i] = claim(detections[i].position, truth, claimed, hit_radius_mm) >= 0;
    }
    return flags;
}

FrocCurve froc(std::span<const VolumeDetections> volumes, double hit_radius_mm) {
    require_radius(hit_radius_mm);
    if (volumes.empty()) throw InvalidArgument("FROC needs at least one volume");
    FrocCurve curve;
    curve.volumes = volumes.size();
    struct Event {
        double prob;
        bool tp;
    };
    std::vector<Event> events;
    for (const auto& v : volumes) {
        curve.lesions += v.truth.size();
        const auto flags = match_flags(v.detections, v.truth, hit_radius_mm);
        for (std::size_t i = 0; i < flags.size(); ++i) {
            if (!std::isfinite(v.detections[i].probability)) throw InvalidArgument("detection probability is not finite");
            events.push_back({v.detections[i].probability, flags[i]});
        }
    }
    if (curve.lesions == 0) throw UndefinedSensitivity("FROC sensitivity is undefined without lesions");
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.prob > b.prob; });
    std::size_t tp = 0;
    std::size_t fp = 0;
    const double lesions = static_cast<double>(curve.lesions);
    const double vols = static_cast<double>(curve.volumes);
    for (std::size_t i = 0; i < events.size();) {
        const double t = events[i].prob;
        for (; i < events.size() && events[i].prob == t; ++i) {
            if (events[i].tp) ++tp;
            else ++fp;
        }
        curve.points.push_back({t, static_cast<double>(tp) / lesions, static_cast<double>(fp) / vols});
    }
    return curve;
}

std::optional<double> afp_at_sensitivity(const FrocCurve& curve, double sensitivity) {
    std::optional<double> best;
    for (const auto& p : curve.points) {
        if (p.sensitivity >= sensitivity && (!best || p.afp < *best)) best = p.afp;
    }
    return best;
}

std::optional<FrocPoint> operating_point_near(const FrocCurve& curve, double sensitivity) {
    std::optional<FrocPoint> best;
    for (const auto& p : curve.points) {
        if (!best) {
            best = p;
            continue;
        }
        const double d = std::abs(p.sensitivity - sensitivity);
        const double bd = std::abs(best->sensitivity - sensitivity);
        if (d < bd || (d == bd && p.afp < best->afp)) best = p;
    }
    return best;
}

double max_sensitivity(const FrocCurve& curve) {
    double s = 0.0;
    for (const auto& p : curve.points) s = std::max(s, p.sensitivity);
    return s;
}

std::string froc_to_csv(const FrocCurve& curve) {
    std::string out = "threshold,sensitivity,afp\n";
    for (const auto& p : curve.points) {
        out += io::format_double(p.threshold) + ',' + io::format_double(p.sensitivity) + ',' +
               io::format_double(p.afp) + '\n';
    }
    return out;
}

std::vector<FrocPoint> froc_points_from_csv(std::string_view text) {
    const auto lines = io::split_lines(text);
    if (lines.empty() || lines.front() != "threshold,sensitivity,afp") {
        throw FormatError("FROC CSV must start with header threshold,sensitivity,afp");
    }
    std::vector<FrocPoint> points;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = io::split(lines[i], ',');
        if (f.size() != 3) throw FormatError("FROC CSV row " + std::to_string(i) + " needs 3 fields");
        points.push_back({io::parse_double(f[0]), io::parse_double(f[1]), io::parse_double(f[2])});
    }
    return points;
}

double dice_coefficient(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) throw ShapeMismatch("dice_coefficient: masks differ in size");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0;
        const bool y = b[i] != 0;
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

}  // namespace blobsurrogate
