#pragma once

#include "blobsurrogate/scalespace.hpp"
#include "blobsurrogate/volume.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace blobsurrogate {

/// Truncated lognormal lesion-diameter sampler. The underlying (mu, sigma)
/// are fitted so that the *truncated* distribution hits the target moments.
class DiameterSampler {
public:
    DiameterSampler(double target_mean_mm, double target_sd_mm, double lo_mm, double hi_mm);

    double sample(std::mt19937_64& rng) const;

    double mu() const { return mu_; }
    double sigma() const { return sigma_; }
    /// Analytic mean and standard deviation of the truncated distribution.
    double truncated_mean() const;
    double truncated_sd() const;

private:
    double lo_, hi_, mu_, sigma_;
};

struct PhantomConfig {
    Dims dims{64, 64, 64};
    float spacing_mm = 1.0f;

    // Lesion count ~ Poisson(mean) clamped to [min, max].
    double lesion_count_mean = 3.0;
    int lesion_count_min = 1;
    int lesion_count_max = 6;

    double diameter_mean_mm = 5.45;
    double diameter_sd_mm = 2.67;
    double diameter_min_mm = 1.0;
    double diameter_max_mm = 15.0;
    /// When set every lesion gets this diameter.
    std::optional<double> fixed_diameter_mm;

    int vessel_count = 3;
    double vessel_radius_min_mm = 0.6;
    double vessel_radius_max_mm = 1.4;
    float vessel_contrast = 50.0f;

    float background = 100.0f;
    float lesion_contrast = 80.0f;
    float noise_sigma = 6.0f;

    std::uint64_t seed = 1;

    void validate() const;
};

struct Phantom {
    Volume3D volume;
    GroundTruth truth;
};

/// Gaussian-profile width of a lesion whose full width at half maximum equals
/// its diameter.
double lesion_profile_sigma(double diameter_mm);

Phantom generate_phantom(const PhantomConfig& cfg);

struct PhantomSplit {
    std::vector<Phantom> train;
    std::vector<Phantom> test;
    std::vector<std::uint64_t> train_seeds;
    std::vector<std::uint64_t> test_seeds;
};

PhantomSplit generate_split(const PhantomConfig& cfg, std::size_t n_train, std::size_t n_test,
                            std::uint64_t master_seed);

std::string phantom_config_to_json(const PhantomConfig& cfg);
/// Fields absent from the JSON keep the values from `base`.
PhantomConfig phantom_config_from_json(std::string_view text, const PhantomConfig& base = {});

}  // namespace blobsurrogate
