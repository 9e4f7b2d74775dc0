#pragma once

#include "blobsurrogate/volume.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace blobsurrogate {

/// Scale range and response threshold of the constrained LoG detector.
struct LoGParams {
    double sigma_min = 1.0;         // mm
    double sigma_max = 4.0;         // mm
    double sigma_step = 1.0;        // mm
    double response_threshold = 0.0;

    /// sigma_min, sigma_min + step, ... up to sigma_max (inclusive).
    std::vector<double> scales() const;
    void validate() const;

    bool operator==(const LoGParams&) const = default;
};

struct Candidate {
    Point3 position;
    double score = 0.0;
    double scale_mm = 0.0;  // scale of the detecting response; 0 if not scale-based
};

/// Candidate points sorted by descending score.
struct CandidateSet {
    std::vector<Candidate> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    std::vector<Point3> positions() const;
};

/// Gaussian tap radius in voxels: ceil(sqrt(3) * sigma / spacing).
int gaussian_radius(double sigma_mm, double spacing_mm);
/// Sampled Gaussian of gaussian_radius() taps per side, normalized to sum 1.
std::vector<float> gaussian_kernel(double sigma_mm, double spacing_mm);

/// Separable Gaussian blur with reflect borders.
Volume3D gaussian_filter_3d(const Volume3D& v, double sigma_mm);

/// Scale-normalized, sign-flipped Laplacian of Gaussian: bright blobs give
/// positive maxima.
Volume3D log_response(const Volume3D& v, double sigma_mm);

CandidateSet detect_candidates(const Volume3D& v, const LoGParams& p,
                               std::size_t max_candidates);

/// Scale-space maxima over a precomputed response stack. `responses[i]`
/// belongs to `scales[i]`. Returns every maximum above `threshold`, sorted.
CandidateSet extract_scale_space_maxima(std::span<const Volume3D> responses,
                                        std::span<const double> scales, double threshold,
                                        std::size_t max_candidates);

/// Fraction of lesions with at least one point within hit_radius.
double sensitivity(std::span<const Point3> candidates, const GroundTruth& truth,
                   double hit_radius_mm);
double sensitivity(const CandidateSet& candidates, const GroundTruth& truth,
                   double hit_radius_mm);

struct LabeledVolume {
    Volume3D volume;
    GroundTruth truth;
};

struct LogSearchSpace {
    double sigma_lo = 1.0;
    double sigma_hi = 6.0;
    double sigma_step = 1.0;
    std::vector<double> thresholds{0.0, 1.0, 2.0, 4.0, 8.0, 16.0};
    std::size_t max_candidates = 100000;
    double hit_radius_mm = 1.5;

    std::vector<double> sigma_values() const;
};

/// One evaluated grid configuration.
struct LogGridCell {
    LoGParams params;
    double mean_sensitivity = 0.0;
    std::size_t total_candidates = 0;  // summed over the training volumes
    double mean_candidates = 0.0;
};

struct LogOptimizationResult {
    LoGParams params;
    double mean_sensitivity = 0.0;
    double mean_candidates = 0.0;
    bool reached_theta = false;
    std::vector<LogGridCell> cells;  // grid order: sigma_min, sigma_max, threshold
};

/// Constrained minimax grid search: among configurations with mean
/// sensitivity >= theta, the one with the fewest candidates.
LogOptimizationResult optimize_log_params(std::span<const LabeledVolume> training,
                                          const LogSearchSpace& search, double theta);

/// Selection rule shared by the optimizer; exposed so callers can rank their
/// own evaluated grids. Returns the index of the chosen cell.
std::size_t select_log_cell(std::span<const LogGridCell> cells, double theta, bool& reached);

// CSV `x_mm,y_mm,z_mm,score` and LoGParams JSON.
std::string candidates_to_csv(const CandidateSet& set);
CandidateSet candidates_from_csv(std::string_view text);
std::string log_params_to_json(const LoGParams& p);
LoGParams log_params_from_json(std::string_view text);
void save_log_params(const LoGParams& p, const std::filesystem::path& path);
LoGParams load_log_params(const std::filesystem::path& path);

}  // namespace blobsurrogate
