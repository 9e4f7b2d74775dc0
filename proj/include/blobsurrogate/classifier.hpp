#pragma once

#include "blobsurrogate/nn/network.hpp"
#include "blobsurrogate/scalespace.hpp"
#include "blobsurrogate/volume.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace blobsurrogate {

struct AugmentParams {
    double max_translation_mm = 2.0;
    double max_rotation_deg = 180.0;
    bool flips = true;
    double gamma_min = 0.8;
    double gamma_max = 1.2;
    double elastic_sigma_mm = 3.0;      // smoothing of the displacement noise
    double elastic_amplitude_mm = 1.5;  // largest displacement component

    /// All magnitudes zero: augmentation becomes the identity.
    static AugmentParams none();
    void validate() const;

    bool operator==(const AugmentParams&) const = default;
};

struct CropSpec {
    double edge_mm = 16.0;
    float spacing_mm = 1.0f;
    /// Output channels of the stride-2 conv levels.
    std::vector<int> channels{8, 16, 32, 64};
    AugmentParams augment;

    /// Crop edge in voxels; throws unless edge / spacing is an integer.
    std::size_t voxels() const;
    void validate() const;

    bool operator==(const CropSpec&) const = default;
};

/// Stride-2 3^3 conv levels with ReLU, then a dense sigmoid head on the
/// flattened features. Zero weights.
nn::Network<float> build_crop_net(const CropSpec& spec);

/// Cube of n = edge / spacing samples centered on `center`, sample i at
/// center + (i - (n - 1) / 2) * spacing, trilinear with clamped reads.
/// Rescaled to [0, 1] by the crop's own range, or by the volume range when the
/// crop is flat (all zeros when the volume is flat too). Shape [1, 1, n, n, n].
nn::Tensor<float> extract_crop(const Volume3D& v, const Point3& center, double edge_mm);

/// One concrete draw of the augmentation.
struct CropTransform {
    std::array<double, 3> translation_mm{0.0, 0.0, 0.0};
    std::array<double, 3> axis{0.0, 0.0, 1.0};
    double angle_rad = 0.0;
    std::array<bool, 3> flip{false, false, false};
    double gamma = 1.0;
    /// Per-voxel displacement in mm, [3][n^3] (x, y, z components); empty for none.
    std::vector<float> displacement_mm;
};

CropTransform sample_crop_transform(const AugmentParams& params, std::size_t n, float spacing_mm,
                                    std::mt19937_64& rng);

/// Output voxel q (relative to the crop center) reads the input at
/// R (F q) + t + e(q), trilinear with clamped reads, then applies v^gamma.
nn::Tensor<float> apply_crop_transform(const nn::Tensor<float>& crop, const CropTransform& t,
                                       float spacing_mm);

nn::Tensor<float> augment_crop(const nn::Tensor<float>& crop, const AugmentParams& params,
                               float spacing_mm, std::mt19937_64& rng);

/// Negatives are candidates at least this far from every lesion center.
inline constexpr double kNegativeClearanceMm = 2.0;

struct ClassifierSource {
    Volume3D volume;
    GroundTruth truth;
    CandidateSet candidates;
};

struct CropBatch {
    nn::Tensor<float> crops;   // [2 * pairs, 1, n, n, n], positive/negative interleaved
    nn::Tensor<float> labels;  // [2 * pairs, 1]
};

/// `pairs` positives (crops at lesion centers) and `pairs` negatives
/// (candidates >= 2 mm from every lesion center), drawn with replacement and
/// augmented independently when `augment` is set.
CropBatch sample_paired_batch(std::span<const ClassifierSource> sources, const CropSpec& spec,
                              std::size_t pairs, std::mt19937_64& rng, bool augment = true);

struct ClassifierTrainOptions {
    std::size_t iterations = 500;
    std::size_t batch_pairs = 16;
    double learning_rate = 5e-5;
    bool augment = true;
    std::uint64_t seed = 1;
    /// Called after every iteration with its index, BCE loss and batch accuracy.
    std::function<void(std::size_t, double, double)> on_iteration;
};

struct ClassifierTrainResult {
    nn::Network<float> network;
    std::vector<double> loss;
    std::vector<double> accuracy;
};

ClassifierTrainResult train_classifier(std::span<const ClassifierSource> sources,
                                       const CropSpec& spec, const ClassifierTrainOptions& options);

/// One probability per candidate, in input order; no augmentation.
std::vector<Detection> classify_candidates(const nn::Network<float>& net, const CropSpec& spec,
                                           const Volume3D& v, const CandidateSet& candidates);

struct ClassifierModel {
    CropSpec spec;
    nn::Network<float> network;
};

std::string crop_spec_to_json(const CropSpec& spec);
CropSpec crop_spec_from_json(std::string_view text, const CropSpec& base = {});

/// BSW1 weights at `path`, spec sidecar at `path` + ".json".
void save_classifier_model(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_classifier_model(const std::filesystem::path& path);

/// CSV `x_mm,y_mm,z_mm,probability`.
std::string detections_to_csv(std::span<const Detection> detections);
std::vector<Detection> detections_from_csv(std::string_view text);

}  // namespace blobsurrogate
