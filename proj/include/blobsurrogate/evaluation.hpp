#pragma once

#include "blobsurrogate/volume.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace blobsurrogate {

struct MatchCounts {
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t missed = 0;

    bool operator==(const MatchCounts&) const = default;
};

/// Greedy matching of the detections with probability >= threshold, taken in
/// order of decreasing probability (input order breaks ties). Each claims the
/// nearest unclaimed lesion center within hit_radius (lower index on ties).
MatchCounts match_detections(std::span<const Detection> detections, const GroundTruth& truth,
                             double hit_radius_mm, double threshold);

/// Per-detection outcome of the greedy matching with every detection
/// admitted: flags[i] is true when detection i claims a lesion. Because the
/// greedy pass is sequential, raising the threshold only removes a suffix of
/// the processing order and leaves the earlier outcomes unchanged.
std::vector<bool> match_flags(std::span<const Detection> detections, const GroundTruth& truth,
                              double hit_radius_mm);

struct FrocPoint {
    double threshold = 0.0;
    double sensitivity = 0.0;  // pooled over all lesions
    double afp = 0.0;          // false positives per volume

    bool operator==(const FrocPoint&) const = default;
};

/// Points ordered by decreasing threshold, i.e. increasing sensitivity.
struct FrocCurve {
    std::vector<FrocPoint> points;
    std::size_t lesions = 0;
    std::size_t volumes = 0;
};

struct VolumeDetections {
    std::vector<Detection> detections;
    GroundTruth truth;
};

/// One point per distinct detection probability.
FrocCurve froc(std::span<const VolumeDetections> volumes, double hit_radius_mm);

/// Smallest AFP among points reaching the sensitivity; empty if none does.
std::optional<double> afp_at_sensitivity(const FrocCurve& curve, double sensitivity);
/// The point whose sensitivity is closest to the target (lower AFP on ties).
std::optional<FrocPoint> operating_point_near(const FrocCurve& curve, double sensitivity);
double max_sensitivity(const FrocCurve& curve);

/// CSV `threshold,sensitivity,afp`.
std::string froc_to_csv(const FrocCurve& curve);
std::vector<FrocPoint> froc_points_from_csv(std::string_view text);

/// 2|a & b| / (|a| + |b|); both empty gives 1.
double dice_coefficient(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

}  // namespace blobsurrogate
