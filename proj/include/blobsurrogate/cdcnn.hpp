#pragma once

#include "blobsurrogate/nn/network.hpp"
#include "blobsurrogate/scalespace.hpp"
#include "blobsurrogate/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace blobsurrogate {

/// Candidate-detection network configuration. The receptive field, kernel
/// size and depth are tied by rf = k + (d - 1)(k - 1).
struct CdcnnSpec {
    int receptive_field = 15;  // voxels (mm at 1 mm spacing)
    int kernel = 3;
    int depth = 7;
    int hidden_channels = 3;
    double c = 0.001;             // target value at LoG candidates away from lesions
    double sigma_smooth_mm = 1.0; // target smoothing
    double tau = 0.5;             // response threshold for candidate extraction

    void validate() const;
    /// Spec with the depth implied by `rf` and `k`; other fields default.
    static CdcnnSpec for_receptive_field(int rf, int k = 3);

    bool operator==(const CdcnnSpec&) const = default;
};

/// d = 1 + (rf - k) / (k - 1); throws InvalidArgument when not integral.
int depth_for_receptive_field(int rf, int k);
int receptive_field_for_depth(int depth, int k);
/// Diameter of the LoG kernel at sigma_max, rounded up to the next
/// receptive field reachable with kernel size k.
int receptive_field_for_log(const LoGParams& p, double spacing_mm, int k = 3);

/// Conv stack: depth layers of k^3 kernels, ReLU hidden layers of
/// `hidden_channels`, single-channel sigmoid output. Zero weights.
nn::Network<float> build_cdcnn(const CdcnnSpec& spec);

/// Training target: 1 at the voxel nearest each lesion center, c at LoG
/// candidate voxels farther than `exclusion_mm` from every lesion, else 0.
Volume3D build_target(Dims dims, float spacing_mm, const CandidateSet& candidates,
                      const GroundTruth& truth, double c, double exclusion_mm = 1.5);

/// Peak-preserving smoothing: R(x) = max over nonzero voxels p of
/// Q(p) exp(-|x - p|^2 / (2 sigma^2)). sigma = 0 returns Q unchanged.
Volume3D smooth_target(const Volume3D& q, double sigma_mm);

/// Zero-mean, unit-variance copy of the volume as a [1, 1, D, H, W] tensor.
nn::Tensor<float> normalize_input(const Volume3D& v);

/// Network output on `v` as a volume of the same geometry, values in (0, 1).
Volume3D cdcnn_response(const nn::Network<float>& net, const Volume3D& v);

/// Supra-threshold (strictly > tau) voxels grouped into 26-connected
/// components; one candidate per component at its response-weighted centroid,
/// scored by the component maximum.
CandidateSet extract_candidates_from_response(const Volume3D& response, double tau);

/// Candidates of a sigmoid-headed network: identical to
/// extract_candidates_from_response(cdcnn_response(net, v), tau), but the
/// sigmoid is only evaluated where the logit can clear tau.
CandidateSet detect_candidates_cdcnn(const nn::Network<float>& net, const Volume3D& v, double tau);

struct CdcnnSample {
    Volume3D volume;
    Volume3D target;  // smoothed target R, same geometry as volume
};

struct CdcnnTrainOptions {
    std::size_t epochs = 60;
    double learning_rate = 0.002;
    bool augment = true;
    int max_shift_voxels = 4;
    std::uint64_t seed = 1;
    /// Called after every epoch with the epoch index and mean Dice loss.
    std::function<void(std::size_t, double)> on_epoch;
};

struct CdcnnTrainResult {
    nn::Network<float> network;
    std::vector<double> epoch_loss;
};

/// Adam on the Dice loss, one full volume per step. Augmentation applies the
/// same random axis permutation (cubic volumes only), flips and circular
/// integer shift to the volume and its target.
CdcnnTrainResult train_cdcnn(std::span<const CdcnnSample> samples, const CdcnnSpec& spec,
                             const CdcnnTrainOptions& options);

struct ResponseSample {
    Volume3D response;
    GroundTruth truth;
};

struct ThresholdPoint {
    double tau = 0.0;
    double mean_sensitivity = 0.0;
    double mean_candidates = 0.0;  // connected components per volume
    double mean_voxels = 0.0;      // supra-threshold voxels per volume
};

struct ThresholdSelection {
    double tau = 0.5;
    double mean_sensitivity = 0.0;
    double mean_candidates = 0.0;
    double mean_voxels = 0.0;
    bool reached_theta = false;
    /// Smallest grid tau whose mean candidate count is within the budget.
    std::optional<double> budget_tau;
    std::vector<ThresholdPoint> grid;  // ascending tau
};

/// 256 evenly spaced thresholds i / 257, ascending.
std::vector<double> tau_grid();

/// Largest grid tau whose mean candidate sensitivity reaches theta; if none
/// does, the tau with the best sensitivity (ties to the larger tau).
ThresholdSelection select_threshold(std::span<const ResponseSample> samples, double theta,
                                    std::optional<double> candidate_budget = std::nullopt,
                                    double hit_radius_mm = 1.5);
/// Same, evaluated on an explicit grid.
ThresholdSelection select_threshold(std::span<const ResponseSample> samples, double theta,
                                    std::span<const double> taus,
                                    std::optional<double> candidate_budget,
                                    double hit_radius_mm);

/// Rule applied to an evaluated grid; returns the chosen index.
std::size_t select_threshold_point(std::span<const ThresholdPoint> grid, double theta,
                                   bool& reached);

struct CdcnnModel {
    CdcnnSpec spec;
    nn::Network<float> network;
};

std::string cdcnn_spec_to_json(const CdcnnSpec& spec);
CdcnnSpec cdcnn_spec_from_json(std::string_view text, const CdcnnSpec& base = {});

/// Writes BSW1 weights to `path` and the spec sidecar to `path` + ".json".
void save_cdcnn_model(const CdcnnModel& model, const std::filesystem::path& path);
CdcnnModel load_cdcnn_model(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& weights);

}  // namespace blobsurrogate
