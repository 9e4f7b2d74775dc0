#include "blobsurrogate/classifier.hpp"

#include "blobsurrogate/error.hpp"
#include "blobsurrogate/io.hpp"
#include "blobsurrogate/nn/adam.hpp"
#include "blobsurrogate/nn/loss.hpp"
#include "blobsurrogate/nn/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

namespace blobsurrogate {

AugmentParams AugmentParams::none() {
    AugmentParams p;
    p.max_translation_mm = 0.0;
    p.max_rotation_deg = 0.0;
    p.flips = false;
    p.gamma_min = 1.0;
    p.gamma_max = 1.0;
    p.elastic_amplitude_mm = 0.0;
    return p;
}

void AugmentParams::validate() const {
    if (!(max_translation_mm >= 0.0)) throw InvalidArgument("max translation must be >= 0");
    if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 180.0)) {
        throw InvalidArgument("max rotation must lie in [0, 180] degrees");
    }
    if (!(gamma_min > 0.0 && gamma_min <= gamma_max)) throw InvalidArgument("gamma range must satisfy 0 < min <= max");
    if (!(elastic_sigma_mm > 0.0)) throw InvalidArgument("elastic smoothing must be positive");
    if (!(elastic_amplitude_mm >= 0.0)) throw InvalidArgument("elastic amplitude must be >= 0");
}

std::size_t CropSpec::voxels() const {
    if (!(edge_mm > 0.0) || !(spacing_mm > 0.0f)) throw InvalidArgument("crop edge and spacing must be positive");
    const double n = edge_mm / spacing_mm;
    const double r = std::round(n);
    if (std::abs(n - r) > 1e-9 || r < 1.0) {
        throw InvalidGeometry("crop edge " + io::format_double(edge_mm) + " mm is not a whole number of voxels");
    }
    return static_cast<std::size_t>(r);
}

void CropSpec::validate() const {
    voxels();
    if (channels.empty()) throw InvalidArgument("crop network needs at least one conv level");
    for (int c : channels) {
        if (c < 1) throw InvalidArgument("crop network channel counts must be positive");
    }
    augment.validate();
}

nn::Network<float> build_crop_net(const CropSpec& spec) {
    spec.validate();
    nn::Network<float> net;
    std::size_t in = 1;
    std::size_t n = spec.voxels();
    for (int c : spec.channels) {
        net.layers.push_back(nn::Layer<float>::conv(in, static_cast<std::size_t>(c), 3, nn::Activation::Relu, 2));
        in = static_cast<std::size_t>(c);
        n = (n + 1) / 2;
    }
    net.layers.push_back(nn::Layer<float>::dense(in * n * n * n, 1, nn::Activation::Sigmoid));
    return net;
}

namespace {

void rescale_unit(std::span<float> values, std::pair<float, float> fallback) {
    auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    float a = *lo;
    float b = *hi;
    if (!(b > a)) {
        a = fallback.first;
        b = fallback.second;
    }
    if (!(b > a)) {
        std::fill(values.begin(), values.end(), 0.0f);
        return;
    }
    const float inv = 1.0f / (b - a);
    for (float& v : values) v = std::clamp((v - a) * inv, 0.0f, 1.0f);
}

}  // namespace

nn::Tensor<float> extract_crop(const Volume3D& v, const Point3& center, double edge_mm) {
    if (!v.contains(center)) throw InvalidGeometry("crop center lies outside the volume");
    CropSpec probe;
    probe.edge_mm = edge_mm;
    probe.spacing_mm = v.spacing();
    const std::size_t n = probe.voxels();
    const double s = v.spacing();
    const double half = (static_cast<double>(n) - 1.0) / 2.0;
    nn::Tensor<float> t({1, 1, n, n, n});
    std::size_t i = 0;
    for (std::size_t z = 0; z < n; ++z) {
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
                const Point3 p{center.x + (static_cast<double>(x) - half) * s,
                               center.y + (static_cast<double>(y) - half) * s,
                               center.z + (static_cast<double>(z) - half) * s};
                t[i++] = v.sample(p);
            }
        }
    }
    rescale_unit(t.data(), v.min_max());
    return t;
}

CropTransform sample_crop_transform(const AugmentParams& params, std::size_t n, float spacing_mm,
                                    std::mt19937_64& rng) {
    params.validate();
    CropTransform t;
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (auto& v : t.translation_mm) v = params.max_translation_mm * unit(rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    double norm = 0.0;
    do {
        for (auto& a : t.axis) a = normal(rng);
        norm = std::sqrt(t.axis[0] * t.axis[0] + t.axis[1] * t.axis[1] + t.axis[2] * t.axis[2]);
    } while (norm < 1e-12);
    for (auto& a : t.axis) a /= norm;
    t.angle_rad = params.max_rotation_deg * std::numbers::pi / 180.0 * unit(rng);
    std::bernoulli_distribution coin(0.5);
    for (auto& f : t.flip) f = params.flips && coin(rng);
    t.gamma = std::uniform_real_distribution<double>(params.gamma_min, params.gamma_max)(rng);
    if (params.gamma_min == params.gamma_max) t.gamma = params.gamma_min;

    if (params.elastic_amplitude_mm > 0.0) {
        const Dims d{n, n, n};
        t.displacement_mm.resize(3 * d.count());
        for (int c = 0; c < 3; ++c) {
            std::vector<float> noise(d.count());
            for (auto& x : noise) x = static_cast<float>(unit(rng));
            Volume3D field(d, spacing_mm, std::move(noise));
            // A smoothing kernel wider than the crop is cut to what fits.
            const double max_sigma = (static_cast<double>(n) - 1.0) * spacing_mm / std::sqrt(3.0) * 0.999;
            const Volume3D smooth = gaussian_filter_3d(field, std::min(params.elastic_sigma_mm, max_sigma));
            float peak = 0.0f;
            for (float x : smooth.data()) peak = std::max(peak, std::abs(x));
            const float scale = peak > 0.0f ? static_cast<float>(params.elastic_amplitude_mm) / peak : 0.0f;
            auto src = smooth.data();
            for (std::size_t i = 0; i < src.size(); ++i) t.displacement_mm[c * d.count() + i] = src[i] * scale;
        }
    }
    return t;
}

nn::Tensor<float> apply_crop_transform(const nn::Tensor<float>& crop, const CropTransform& t,
                                       float spacing_mm) {
    if (crop.rank() != 5 || crop.extent(0) != 1 || crop.extent(1) != 1 ||
        crop.extent(2) != crop.extent(3) || crop.extent(3) != crop.extent(4)) {
        throw ShapeMismatch("crop must be [1, 1, n, n, n], got " + nn::shape_string(crop.shape()));
    }
    const std::size_t n = crop.extent(2);
    const Dims d{n, n, n};
    if (!t.displacement_mm.empty() && t.displacement_mm.size() != 3 * d.count()) {
        throw ShapeMismatch("displacement field does not match the crop");
    }
    const Volume3D src(d, spacing_mm, std::vector<float>(crop.data().begin(), crop.data().end()));
    const double s = spacing_mm;
    const double mid = (static_cast<double>(n) - 1.0) / 2.0 * s;

    // Rodrigues rotation matrix.
    const double c = std::cos(t.angle_rad);
    const double sn = std::sin(t.angle_rad);
    const auto& a = t.axis;
    const double r[3][3] = {
        {c + a[0] * a[0] * (1 - c), a[0] * a[1] * (1 - c) - a[2] * sn, a[0] * a[2] * (1 - c) + a[1] * sn},
        {a[1] * a[0] * (1 - c) + a[2] * sn, c + a[1] * a[1] * (1 - c), a[1] * a[2] * (1 - c) - a[0] * sn},
        {a[2] * a[0] * (1 - c) - a[1] * sn, a[2] * a[1] * (1 - c) + a[0] * sn, c + a[2] * a[2] * (1 - c)}};
    const bool rotate = t.angle_rad != 0.0;

    nn::Tensor<float> out(crop.shape());
    std::size_t i = 0;
    for (std::size_t z = 0; z < n; ++z) {
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x, ++i) {
                double q[3] = {static_cast<double>(x) * s - mid, static_cast<double>(y) * s - mid,
                               static_cast<double>(z) * s - mid};
                for (int k = 0; k < 3; ++k) {
                    if (t.flip[static_cast<std::size_t>(k)]) q[k] = -q[k];
                }
                double p[3] = {q[0], q[1], q[2]};
                if (rotate) {
                    for (int k = 0; k < 3; ++k) p[k] = r[k][0] * q[0] + r[k][1] * q[1] + r[k][2] * q[2];
                }
                for (int k = 0; k < 3; ++k) {
                    p[k] += t.translation_mm[static_cast<std::size_t>(k)];
                    if (!t.displacement_mm.empty()) p[k] += t.displacement_mm[static_cast<std::size_t>(k) * d.count() + i];
                }
                float v = src.sample({p[0] + mid, p[1] + mid, p[2] + mid});
                if (t.gamma != 1.0) v = static_cast<float>(std::pow(std::max(v, 0.0f), t.gamma));
                out[i] = v;
            }
        }
    }
    return out;
}

nn::Tensor<float> augment_crop(const nn::Tensor<float>& crop, const AugmentParams& params,
                               float spacing_mm, std::mt19937_64& rng) {
    if (crop.rank() != 5) throw ShapeMismatch("crop must be [1, 1, n, n, n]");
    const CropTransform t = sample_crop_transform(params, crop.extent(2), spacing_mm, rng);
    return apply_crop_transform(crop, t, spacing_mm);
}

namespace {

struct SourceRef {
    std::size_t volume;
    Point3 position;
};

}  // namespace

CropBatch sample_paired_batch(std::span<const ClassifierSource> sources, const CropSpec& spec,
                              std::size_t pairs, std::mt19937_64& rng, bool augment) {
    spec.validate();
    if (pairs == 0) throw InvalidArgument("a paired batch needs at least one pair");
    std::vector<SourceRef> positives;
    std::vector<SourceRef> negatives;
    for (std::size_t v = 0; v < sources.size(); ++v) {
        const auto& src = sources[v];
        if (std::abs(src.volume.spacing() - spec.spacing_mm) > 1e-6f) {
            throw InvalidGeometry("classifier source spacing differs from the crop spacing");
        }
        for (const auto& l : src.truth.lesions) positives.push_back({v, l.center});
        for (const auto& c : src.candidates.points) {
            const bool clear = std::all_of(src.truth.lesions.begin(), src.truth.lesions.end(), [&](const Lesion& l) {
                return distance(l.center, c.position) >= kNegativeClearanceMm;
            });
            if (clear) negatives.push_back({v, c.position});
        }
    }
    if (positives.empty()) throw SamplingError("no positive samples (no lesions) available");
    if (negatives.empty()) throw SamplingError("no negative samples (candidates >= 2 mm from lesions) available");

    const std::size_t n = spec.voxels();
    const std::size_t crop_size = n * n * n;
    const std::size_t batch = 2 * pairs;
    std::uniform_int_distribution<std::size_t> pick_pos(0, positives.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_neg(0, negatives.size() - 1);
    std::vector<SourceRef> chosen(batch);
    std::vector<std::uint64_t> seeds(batch);
    for (std::size_t p = 0; p < pairs; ++p) {
        chosen[2 * p] = positives[pick_pos(rng)];
        chosen[2 * p + 1] = negatives[pick_neg(rng)];
        seeds[2 * p] = rng();
        seeds[2 * p + 1] = rng();
    }

    for (const auto& ref : chosen) {
        if (!sources[ref.volume].volume.contains(ref.position)) throw InvalidGeometry("sample position outside its volume");
    }
    CropBatch out;
    out.crops = nn::Tensor<float>({batch, 1, n, n, n});
    out.labels = nn::Tensor<float>({batch, 1});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(batch); ++b) {
        const auto& ref = chosen[static_cast<std::size_t>(b)];
        nn::Tensor<float> crop = extract_crop(sources[ref.volume].volume, ref.position, spec.edge_mm);
        if (augment) {
            std::mt19937_64 local(seeds[static_cast<std::size_t>(b)]);
            crop = augment_crop(crop, spec.augment, spec.spacing_mm, local);
        }
        std::copy(crop.data().begin(), crop.data().end(),
                  out.crops.data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(b) * crop_size));
        out.labels[static_cast<std::size_t>(b)] = b % 2 == 0 ? 1.0f : 0.0f;
    }
    return out;
}

ClassifierTrainResult train_classifier(std::span<const ClassifierSource> sources,
                                       const CropSpec& spec, const ClassifierTrainOptions& options) {
    spec.validate();
    if (!(options.learning_rate > 0.0 && std::isfinite(options.learning_rate))) {
        throw InvalidArgument("learning rate must be positive and finite");
    }
    if (options.batch_pairs == 0) throw InvalidArgument("batch must contain at least one pair");
    ClassifierTrainResult result;
    result.network = build_crop_net(spec);
    result.network.initialize(io::derive_seed(options.seed, 0));
    nn::AdamState<float> adam(options.learning_rate);
    std::mt19937_64 rng(io::derive_seed(options.seed, 1));
    for (std::size_t it = 0; it < options.iterations; ++it) {
        const CropBatch batch = sample_paired_batch(sources, spec, options.batch_pairs, rng, options.augment);
        nn::ForwardCache<float> cache;
        const nn::Tensor<float> out = result.network.forward(batch.crops, cache);
        const auto loss = nn::bce_loss(out, batch.labels);
        if (!std::isfinite(loss.value) || !out.all_finite()) {
            throw TrainingFailure("classifier loss diverged", it);
        }
        std::size_t correct = 0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if ((out[i] >= 0.5f) == (batch.labels[i] > 0.5f)) ++correct;
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(out.size());
        const auto grads = result.network.backward(cache, loss.grad, false);
        nn::adam_step(result.network, grads, adam);
        result.loss.push_back(loss.value);
        result.accuracy.push_back(acc);
        if (options.on_iteration) options.on_iteration(it, loss.value, acc);
    }
    return result;
}

std::vector<Detection> classify_candidates(const nn::Network<float>& net, const CropSpec& spec,
                                           const Volume3D& v, const CandidateSet& candidates) {
    spec.validate();
    constexpr std::size_t kChunk = 64;
    const std::size_t n = spec.voxels();
    const std::size_t crop_size = n * n * n;
    for (const auto& c : candidates.points) {
        if (!v.contains(c.position)) throw InvalidGeometry("candidate outside the volume");
    }
    std::vector<Detection> out(candidates.size());
    for (std::size_t start = 0; start < candidates.size(); start += kChunk) {
        const std::size_t count = std::min(kChunk, candidates.size() - start);
        nn::Tensor<float> batch({count, 1, n, n, n});
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(count); ++i) {
            const auto crop = extract_crop(v, candidates.points[start + static_cast<std::size_t>(i)].position, spec.edge_mm);
            std::copy(crop.data().begin(), crop.data().end(),
                      batch.data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * crop_size));
        }
        const nn::Tensor<float> prob = net.forward(batch);
        if (prob.size() != count) throw ShapeMismatch("classifier must output one value per crop");
        for (std::size_t i = 0; i < count; ++i) {
            out[start + i] = {candidates.points[start + i].position, static_cast<double>(prob[i])};
        }
    }
    return out;
}

std::string crop_spec_to_json(const CropSpec& spec) {
    const auto& a = spec.augment;
    nlohmann::json doc = {{"edge_mm", spec.edge_mm},
                          {"spacing_mm", spec.spacing_mm},
                          {"channels", spec.channels},
                          {"augment",
                           {{"max_translation_mm", a.max_translation_mm},
                            {"max_rotation_deg", a.max_rotation_deg},
                            {"flips", a.flips},
                            {"gamma_min", a.gamma_min},
                            {"gamma_max", a.gamma_max},
                            {"elastic_sigma_mm", a.elastic_sigma_mm},
                            {"elastic_amplitude_mm", a.elastic_amplitude_mm}}}};
    return doc.dump(2) + "\n";
}

CropSpec crop_spec_from_json(std::string_view text, const CropSpec& base) {
    CropSpec s = base;
    try {
        const auto doc = nlohmann::json::parse(text);
        if (!doc.is_object()) throw FormatError("crop spec must be a JSON object");
        for (const auto& [key, value] : doc.items()) {
            if (key == "edge_mm") s.edge_mm = value.get<double>();
            else if (key == "spacing_mm") s.spacing_mm = value.get<float>();
            else if (key == "channels") s.channels = value.get<std::vector<int>>();
            else if (key == "augment") {
                auto& a = s.augment;
                for (const auto& [k, v] : value.items()) {
                    if (k == "max_translation_mm") a.max_translation_mm = v.get<double>();
                    else if (k == "max_rotation_deg") a.max_rotation_deg = v.get<double>();
                    else if (k == "flips") a.flips = v.get<bool>();
                    else if (k == "gamma_min") a.gamma_min = v.get<double>();
                    else if (k == "gamma_max") a.gamma_max = v.get<double>();
                    else if (k == "elastic_sigma_mm") a.elastic_sigma_mm = v.get<double>();
                    else if (k == "elastic_amplitude_mm") a.elastic_amplitude_mm = v.get<double>();
                    else throw FormatError("unknown augmentation field '" + k + "'");
                }
            } else {
                throw FormatError("unknown crop spec field '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed crop spec: ") + e.what());
    }
    s.validate();
    return s;
}

void save_classifier_model(const ClassifierModel& model, const std::filesystem::path& path) {
    model.spec.validate();
    nn::save_weights(path, model.network);
    io::write_file_atomic(std::filesystem::path(path.string() + ".json"), crop_spec_to_json(model.spec));
}

ClassifierModel load_classifier_model(const std::filesystem::path& path) {
    ClassifierModel m;
    m.spec = crop_spec_from_json(io::read_file(std::filesystem::path(path.string() + ".json")));
    m.network = nn::load_weights(path);
    const auto expected = build_crop_net(m.spec);
    if (m.network.layers.size() != expected.layers.size()) {
        throw FormatError("classifier weights do not match the spec sidecar");
    }
    for (std::size_t i = 0; i < expected.layers.size(); ++i) {
        const auto& a = m.network.layers[i];
        const auto& b = expected.layers[i];
        if (a.weights.shape() != b.weights.shape() || a.stride != b.stride || a.activation != b.activation) {
            throw FormatError("classifier layer " + std::to_string(i) + " does not match the spec sidecar");
        }
    }
    return m;
}

std::string detections_to_csv(std::span<const Detection> detections) {
    std::string out = "x_mm,y_mm,z_mm,probability\n";
    for (const auto& d : detections) {
        out += io::format_double(d.position.x) + ',' + io::format_double(d.position.y) + ',' +
               io::format_double(d.position.z) + ',' + io::format_double(d.probability) + '\n';
    }
    return out;
}

std::vector<Detection> detections_from_csv(std::string_view text) {
    const auto lines = io::split_lines(text);
    if (lines.empty() || lines.front() != "x_mm,y_mm,z_mm,probability") {
        throw FormatError("detection CSV must start with header x_mm,y_mm,z_mm,probability");
    }
    std::vector<Detection> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = io::split(lines[i], ',');
        if (f.size() != 4) throw FormatError("detection CSV row " + std::to_string(i) + " needs 4 fields");
        out.push_back({{io::parse_double(f[0]), io::parse_double(f[1]), io::parse_double(f[2])},
                       io::parse_double(f[3])});
    }
    return out;
}

}  // namespace blobsurrogate
