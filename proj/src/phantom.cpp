#include "blobsurrogate/phantom.hpp"

#include "blobsurrogate/error.hpp"
#include "blobsurrogate/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include <json.hpp>

namespace blobsurrogate {

namespace {

constexpr int kPlacementAttempts = 50;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// k-th raw moment of a lognormal(mu, sigma) truncated to [lo, hi].
double truncated_moment(int k, double mu, double sigma, double lo, double hi) {
    const double a = std::log(lo);
    const double b = std::log(hi);
    const double z = normal_cdf((b - mu) / sigma) - normal_cdf((a - mu) / sigma);
    const double ks2 = k * sigma * sigma;
    const double num = normal_cdf((b - mu - ks2) / sigma) - normal_cdf((a - mu - ks2) / sigma);
    return std::exp(k * mu + 0.5 * k * ks2) * num / z;
}

struct Vessel {
    std::array<double, 3> point;
    std::array<double, 3> dir;
    double radius;
};

double distance_to_line(const Vessel& v, const Point3& p) {
    const double rx = p.x - v.point[0];
    const double ry = p.y - v.point[1];
    const double rz = p.z - v.point[2];
    const double cx = ry * v.dir[2] - rz * v.dir[1];
    const double cy = rz * v.dir[0] - rx * v.dir[2];
    const double cz = rx * v.dir[1] - ry * v.dir[0];
    return std::sqrt(cx * cx + cy * cy + cz * cz);
}

void render_vessel(Volume3D& vol, const Vessel& v, float contrast) {
    const Dims& d = vol.dims();
    const double h = vol.spacing();
    for (std::size_t z = 0; z < d.nz; ++z) {
        for (std::size_t y = 0; y < d.ny; ++y) {
            for (std::size_t x = 0; x < d.nx; ++x) {
                const double dist = distance_to_line(v, vol.voxel_center(x, y, z));
                // One-voxel linear ramp at the wall approximates partial volume.
                const double cover = std::clamp((v.radius + 0.5 * h - dist) / h, 0.0, 1.0);
                if (cover > 0.0) {
                    vol.at(x, y, z) += static_cast<float>(contrast * cover);
                }
            }
        }
    }
}

void render_lesion(Volume3D& vol, const Lesion& lesion, float contrast) {
    const Dims& d = vol.dims();
    const double h = vol.spacing();
    const double s = lesion_profile_sigma(lesion.diameter_mm);
    const double reach = 4.0 * s + h;
    auto range = [&](double c, std::size_t n) {
        const double lo = std::max(0.0, std::floor((c - reach) / h));
        const double hi = std::min(static_cast<double>(n - 1), std::ceil((c + reach) / h));
        return std::pair<std::size_t, std::size_t>{static_cast<std::size_t>(lo),
                                                   static_cast<std::size_t>(hi)};
    };
    const auto [x0, x1] = range(lesion.center.x, d.nx);
    const auto [y0, y1] = range(lesion.center.y, d.ny);
    const auto [z0, z1] = range(lesion.center.z, d.nz);
    const double inv = 1.0 / (2.0 * s * s);
    for (std::size_t z = z0; z <= z1; ++z) {
        for (std::size_t y = y0; y <= y1; ++y) {
            for (std::size_t x = x0; x <= x1; ++x) {
                const Point3 p = vol.voxel_center(x, y, z);
                const double r2 = (p.x - lesion.center.x) * (p.x - lesion.center.x) +
                                  (p.y - lesion.center.y) * (p.y - lesion.center.y) +
                                  (p.z - lesion.center.z) * (p.z - lesion.center.z);
                vol.at(x, y, z) += static_cast<float>(contrast * std::exp(-r2 * inv));
            }
        }
    }
}

}  // namespace

DiameterSampler::DiameterSampler(double target_mean_mm, double target_sd_mm, double lo_mm,
                                 double hi_mm)
    : lo_(lo_mm), hi_(hi_mm) {
    if (!(lo_mm > 0.0 && hi_mm > lo_mm && target_mean_mm > lo_mm && target_mean_mm < hi_mm &&
          target_sd_mm > 0.0)) {
        throw InvalidArgument("diameter distribution parameters are inconsistent");
    }
    // Start from the untruncated moment match, then correct for truncation.
    sigma_ = std::sqrt(std::log(1.0 + (target_sd_mm / target_mean_mm) * (target_sd_mm / target_mean_mm)));
    mu_ = std::log(target_mean_mm) - 0.5 * sigma_ * sigma_;
    const double target_cv = target_sd_mm / target_mean_mm;
    for (int it = 0; it < 500; ++it) {
        const double m = truncated_mean();
        const double cv = truncated_sd() / m;
        mu_ += std::log(target_mean_mm / m);
        sigma_ *= std::pow(target_cv / cv, 0.5);
        if (!std::isfinite(mu_) || !std::isfinite(sigma_)) break;
        if (std::abs(m - target_mean_mm) < 1e-10 && std::abs(cv - target_cv) < 1e-10) break;
    }
    const double m = truncated_mean();
    if (!std::isfinite(m) || std::abs(m - target_mean_mm) > 1e-6 * target_mean_mm ||
        std::abs(truncated_sd() - target_sd_mm) > 1e-6 * target_sd_mm) {
        throw InvalidArgument("diameter mean and sd are not attainable within [" +
                              io::format_double(lo_mm) + ", " + io::format_double(hi_mm) + "] mm");
    }
}

double DiameterSampler::truncated_mean() const {
    return truncated_moment(1, mu_, sigma_, lo_, hi_);
}

double DiameterSampler::truncated_sd() const {
    const double m1 = truncated_moment(1, mu_, sigma_, lo_, hi_);
    const double m2 = truncated_moment(2, mu_, sigma_, lo_, hi_);
    return std::sqrt(std::max(0.0, m2 - m1 * m1));
}

double DiameterSampler::sample(std::mt19937_64& rng) const {
    std::normal_distribution<double> normal(mu_, sigma_);
    for (int attempt = 0; attempt < 1000000; ++attempt) {
        const double d = std::exp(normal(rng));
        if (d >= lo_ && d <= hi_) return d;
    }
    throw SamplingError("diameter sampler rejected every draw");
}

void PhantomConfig::validate() const {
    if (dims.count() == 0) throw InvalidArgument("phantom dims must be nonzero");
    if (!(spacing_mm > 0.0f)) throw InvalidArgument("phantom spacing must be positive");
    if (lesion_count_min < 0 || lesion_count_max < lesion_count_min) {
        throw InvalidArgument("lesion count range is invalid");
    }
    if (!(lesion_count_mean >= 0.0)) throw InvalidArgument("lesion count mean must be >= 0");
    if (fixed_diameter_mm && !(*fixed_diameter_mm > 0.0)) {
        throw InvalidArgument("fixed lesion diameter must be positive");
    }
    if (vessel_count < 0 || !(vessel_radius_min_mm > 0.0) ||
        vessel_radius_max_mm < vessel_radius_min_mm) {
        throw InvalidArgument("vessel parameters are invalid");
    }
    if (!(noise_sigma >= 0.0f)) throw InvalidArgument("noise sigma must be >= 0");
    // Constructing the sampler checks the diameter moments.
    if (!fixed_diameter_mm) {
        DiameterSampler(diameter_mean_mm, diameter_sd_mm, diameter_min_mm, diameter_max_mm);
    }
}

double lesion_profile_sigma(double diameter_mm) {
    return diameter_mm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
}

Phantom generate_phantom(const PhantomConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    Phantom out{Volume3D(cfg.dims, cfg.spacing_mm, cfg.background), {}};
    Volume3D& vol = out.volume;
    const auto ext = vol.extent_mm();
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::poisson_distribution<int> poisson(cfg.lesion_count_mean);
    const int lesion_count = std::clamp(cfg.lesion_count_mean > 0.0 ? poisson(rng) : 0,
                                        cfg.lesion_count_min, cfg.lesion_count_max);

    std::vector<Vessel> vessels;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < cfg.vessel_count; ++i) {
        Vessel v{};
        v.radius = cfg.vessel_radius_min_mm +
                   unit(rng) * (cfg.vessel_radius_max_mm - cfg.vessel_radius_min_mm);
        for (int a = 0; a < 3; ++a) v.point[a] = unit(rng) * ext[a];
        double norm = 0.0;
        do {
            for (int a = 0; a < 3; ++a) v.dir[a] = gauss(rng);
            norm = std::sqrt(v.dir[0] * v.dir[0] + v.dir[1] * v.dir[1] + v.dir[2] * v.dir[2]);
        } while (norm < 1e-9);
        for (int a = 0; a < 3; ++a) v.dir[a] /= norm;
        vessels.push_back(v);
        render_vessel(vol, v, cfg.vessel_contrast);
    }

    std::optional<DiameterSampler> sampler;
    if (!cfg.fixed_diameter_mm) {
        sampler.emplace(cfg.diameter_mean_mm, cfg.diameter_sd_mm, cfg.diameter_min_mm,
                        cfg.diameter_max_mm);
    }
    for (int i = 0; i < lesion_count; ++i) {
        const double diameter = cfg.fixed_diameter_mm ? *cfg.fixed_diameter_mm : sampler->sample(rng);
        const double r = 0.5 * diameter;
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
            Point3 c;
            std::array<double*, 3> coords{&c.x, &c.y, &c.z};
            bool fits = true;
            for (int a = 0; a < 3; ++a) {
                const double span = ext[a] - 2.0 * r;
                if (span < 0.0) fits = false;
                *coords[a] = r + unit(rng) * std::max(span, 0.0);
            }
            if (!fits) continue;
            const bool clear_of_lesions =
                std::all_of(out.truth.lesions.begin(), out.truth.lesions.end(), [&](const Lesion& o) {
                    return distance(o.center, c) >= r + 0.5 * o.diameter_mm;
                });
            const bool clear_of_vessels = std::all_of(vessels.begin(), vessels.end(), [&](const Vessel& v) {
                return distance_to_line(v, c) >= r + v.radius;
            });
            if (clear_of_lesions && clear_of_vessels) {
                out.truth.lesions.push_back({c, diameter});
                placed = true;
            }
        }
        if (!placed) {
            throw CapacityError("could not place lesion " + std::to_string(i) + " of diameter " +
                                io::format_double(diameter) + " mm after " +
                                std::to_string(kPlacementAttempts) + " attempts");
        }
        render_lesion(vol, out.truth.lesions.back(), cfg.lesion_contrast);
    }

    if (cfg.noise_sigma > 0.0f) {
        std::normal_distribution<float> noise(0.0f, cfg.noise_sigma);
        for (float& value : vol.data()) value += noise(rng);
    }
    return out;
}

PhantomSplit generate_split(const PhantomConfig& cfg, std::size_t n_train, std::size_t n_test,
                            std::uint64_t master_seed) {
    if (n_train < 1 || n_test < 1) {
        throw InvalidArgument("a split needs at least one training and one test phantom");
    }
    PhantomSplit split;
    std::set<std::uint64_t> used;
    std::uint64_t stream = 0;
    auto next_seed = [&] {
        std::uint64_t s;
        do {
            s = io::derive_seed(master_seed, stream++);
        } while (!used.insert(s).second);
        return s;
    };
    for (std::size_t i = 0; i < n_train + n_test; ++i) {
        PhantomConfig c = cfg;
        c.seed = next_seed();
        if (i < n_train) {
            split.train_seeds.push_back(c.seed);
            split.train.push_back(generate_phantom(c));
        } else {
            split.test_seeds.push_back(c.seed);
            split.test.push_back(generate_phantom(c));
        }
    }
    return split;
}

std::string phantom_config_to_json(const PhantomConfig& cfg) {
    nlohmann::json doc = {
        {"dims", {cfg.dims.nx, cfg.dims.ny, cfg.dims.nz}},
        {"spacing_mm", cfg.spacing_mm},
        {"lesion_count_mean", cfg.lesion_count_mean},
        {"lesion_count_min", cfg.lesion_count_min},
        {"lesion_count_max", cfg.lesion_count_max},
        {"diameter_mean_mm", cfg.diameter_mean_mm},
        {"diameter_sd_mm", cfg.diameter_sd_mm},
        {"diameter_min_mm", cfg.diameter_min_mm},
        {"diameter_max_mm", cfg.diameter_max_mm},
        {"vessel_count", cfg.vessel_count},
        {"vessel_radius_min_mm", cfg.vessel_radius_min_mm},
        {"vessel_radius_max_mm", cfg.vessel_radius_max_mm},
        {"vessel_contrast", cfg.vessel_contrast},
        {"background", cfg.background},
        {"lesion_contrast", cfg.lesion_contrast},
        {"noise_sigma", cfg.noise_sigma},
        {"seed", cfg.seed},
    };
    if (cfg.fixed_diameter_mm) doc["fixed_diameter_mm"] = *cfg.fixed_diameter_mm;
    return doc.dump(2) + "\n";
}

PhantomConfig phantom_config_from_json(std::string_view text, const PhantomConfig& base) {
    PhantomConfig cfg = base;
    try {
        const auto doc = nlohmann::json::parse(text);
        if (doc.contains("dims")) {
            const auto& d = doc.at("dims");
            if (d.is_number()) {
                const auto n = d.get<std::size_t>();
                cfg.dims = {n, n, n};
            } else {
                cfg.dims = {d.at(0).get<std::size_t>(), d.at(1).get<std::size_t>(),
                            d.at(2).get<std::size_t>()};
            }
        }
        auto read = [&](const char* key, auto& field) {
            if (doc.contains(key)) field = doc.at(key).get<std::decay_t<decltype(field)>>();
        };
        read("spacing_mm", cfg.spacing_mm);
        read("lesion_count_mean", cfg.lesion_count_mean);
        read("lesion_count_min", cfg.lesion_count_min);
        read("lesion_count_max", cfg.lesion_count_max);
        read("diameter_mean_mm", cfg.diameter_mean_mm);
        read("diameter_sd_mm", cfg.diameter_sd_mm);
        read("diameter_min_mm", cfg.diameter_min_mm);
        read("diameter_max_mm", cfg.diameter_max_mm);
        read("vessel_count", cfg.vessel_count);
        read("vessel_radius_min_mm", cfg.vessel_radius_min_mm);
        read("vessel_radius_max_mm", cfg.vessel_radius_max_mm);
        read("vessel_contrast", cfg.vessel_contrast);
        read("background", cfg.background);
        read("lesion_contrast", cfg.lesion_contrast);
        read("noise_sigma", cfg.noise_sigma);
        read("seed", cfg.seed);
        if (doc.contains("fixed_diameter_mm") && !doc.at("fixed_diameter_mm").is_null()) {
            cfg.fixed_diameter_mm = doc.at("fixed_diameter_mm").get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed phantom config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

}  // namespace blobsurrogate
