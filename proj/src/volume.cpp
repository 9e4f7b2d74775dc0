#include "blobsurrogate/volume.hpp"

#include "blobsurrogate/error.hpp"
#include "blobsurrogate/io.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace blobsurrogate {

namespace {

constexpr std::string_view kVolumeMagic = "BSV1";

void require_finite(std::span<const float> data) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw FormatError("non-finite voxel value at index " + std::to_string(i));
        }
    }
}

struct AxisSample {
    std::size_t i0;
    std::size_t i1;
    float frac;
};

// Continuous index -> bracketing voxels, clamped to [0, n-1].
AxisSample axis_sample(double idx, std::size_t n) {
    const double hi = static_cast<double>(n - 1);
    if (!(idx > 0.0)) {
        return {0, 0, 0.0f};
    }
    if (idx >= hi) {
        return {n - 1, n - 1, 0.0f};
    }
    const double fl = std::floor(idx);
    const auto i0 = static_cast<std::size_t>(fl);
    return {i0, std::min(i0 + 1, n - 1), static_cast<float>(idx - fl)};
}

// Convex combination; the clamp keeps rounding from leaving [a, b].
float lerp(float a, float b, float t) {
    const float r = a + t * (b - a);
    return std::clamp(r, std::min(a, b), std::max(a, b));
}

float trilinear(std::span<const float> data, const Dims& d, const AxisSample& sx,
                const AxisSample& sy, const AxisSample& sz) {
    auto at = [&](std::size_t x, std::size_t y, std::size_t z) {
        return data[(z * d.ny + y) * d.nx + x];
    };
    // Zero-weight corners are skipped so grid-aligned samples are exact.
    auto lerp_x = [&](std::size_t y, std::size_t z) {
        const float a = at(sx.i0, y, z);
        if (sx.frac == 0.0f) return a;
        return lerp(a, at(sx.i1, y, z), sx.frac);
    };
    auto lerp_xy = [&](std::size_t z) {
        const float a = lerp_x(sy.i0, z);
        if (sy.frac == 0.0f) return a;
        return lerp(a, lerp_x(sy.i1, z), sy.frac);
    };
    const float a = lerp_xy(sz.i0);
    if (sz.frac == 0.0f) return a;
    return lerp(a, lerp_xy(sz.i1), sz.frac);
}

}  // namespace

double distance(const Point3& a, const Point3& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

Volume3D::Volume3D(Dims dims, float spacing_mm, float fill)
    : dims_(dims), spacing_(spacing_mm), data_(dims.count(), fill) {
    if (!(spacing_mm > 0.0f) || !std::isfinite(spacing_mm)) {
        throw InvalidGeometry("voxel spacing must be positive");
    }
    if (!std::isfinite(fill)) {
        throw InvalidArgument("fill value must be finite");
    }
}

Volume3D::Volume3D(Dims dims, float spacing_mm, std::vector<float> data)
    : dims_(dims), spacing_(spacing_mm), data_(std::move(data)) {
    if (!(spacing_mm > 0.0f) || !std::isfinite(spacing_mm)) {
        throw InvalidGeometry("voxel spacing must be positive");
    }
    if (data_.size() != dims.count()) {
        throw InvalidGeometry("data length " + std::to_string(data_.size()) +
                              " does not match dims product " + std::to_string(dims.count()));
    }
    require_finite(data_);
}

Point3 Volume3D::voxel_center(std::size_t x, std::size_t y, std::size_t z) const {
    const double s = spacing_;
    return {static_cast<double>(x) * s, static_cast<double>(y) * s, static_cast<double>(z) * s};
}

std::array<std::size_t, 3> Volume3D::nearest_voxel(const Point3& p) const {
    auto axis = [&](double mm, std::size_t n) -> std::size_t {
        const double idx = std::round(mm / spacing_);
        if (idx <= 0.0) return 0;
        return std::min(static_cast<std::size_t>(idx), n - 1);
    };
    return {axis(p.x, dims_.nx), axis(p.y, dims_.ny), axis(p.z, dims_.nz)};
}

std::array<double, 3> Volume3D::extent_mm() const {
    const double s = spacing_;
    return {static_cast<double>(dims_.nx - 1) * s, static_cast<double>(dims_.ny - 1) * s,
            static_cast<double>(dims_.nz - 1) * s};
}

bool Volume3D::contains(const Point3& p) const {
    const auto ext = extent_mm();
    return p.x >= 0.0 && p.y >= 0.0 && p.z >= 0.0 && p.x <= ext[0] && p.y <= ext[1] &&
           p.z <= ext[2];
}

float Volume3D::sample(const Point3& p) const {
    const double s = spacing_;
    return trilinear(data_, dims_, axis_sample(p.x / s, dims_.nx), axis_sample(p.y / s, dims_.ny),
                     axis_sample(p.z / s, dims_.nz));
}

std::pair<float, float> Volume3D::min_max() const {
    if (data_.empty()) return {0.0f, 0.0f};
    auto [lo, hi] = std::minmax_element(data_.begin(), data_.end());
    return {*lo, *hi};
}

Volume3D resample_isotropic(const AnisotropicVolume& source, float target_spacing_mm) {
    if (!(target_spacing_mm > 0.0f)) {
        throw InvalidArgument("target spacing must be positive");
    }
    for (float s : source.spacing) {
        if (!(s > 0.0f)) throw InvalidArgument("source spacing must be positive");
    }
    if (source.data.size() != source.dims.count() || source.dims.count() == 0) {
        throw InvalidGeometry("source data does not match its dims");
    }
    const std::array<std::size_t, 3> n_in{source.dims.nx, source.dims.ny, source.dims.nz};
    std::array<std::size_t, 3> n_out{};
    for (int a = 0; a < 3; ++a) {
        const double extent = static_cast<double>(n_in[a]) * source.spacing[a];
        const double n = std::round(extent / target_spacing_mm);
        if (n < 1.0) {
            throw InvalidGeometry("resampled grid would have zero voxels along axis " +
                                  std::to_string(a));
        }
        n_out[a] = static_cast<std::size_t>(n);
    }

    Volume3D out(Dims{n_out[0], n_out[1], n_out[2]}, target_spacing_mm);
    auto dst = out.data();
    std::vector<AxisSample> xs(n_out[0]), ys(n_out[1]), zs(n_out[2]);
    std::array<std::vector<AxisSample>*, 3> tables{&xs, &ys, &zs};
    for (int a = 0; a < 3; ++a) {
        const double ratio = static_cast<double>(target_spacing_mm) / source.spacing[a];
        for (std::size_t j = 0; j < n_out[a]; ++j) {
            (*tables[a])[j] = axis_sample(static_cast<double>(j) * ratio, n_in[a]);
        }
    }
    std::size_t i = 0;
    for (std::size_t z = 0; z < n_out[2]; ++z) {
        for (std::size_t y = 0; y < n_out[1]; ++y) {
            for (std::size_t x = 0; x < n_out[0]; ++x) {
                dst[i++] = trilinear(source.data, source.dims, xs[x], ys[y], zs[z]);
            }
        }
    }
    return out;
}

std::string encode_volume(const Volume3D& v) {
    std::string out;
    out.reserve(16 + 4 * v.size());
    out.append(kVolumeMagic);
    io::put_u32(out, static_cast<std::uint32_t>(v.dims().nx));
    io::put_u32(out, static_cast<std::uint32_t>(v.dims().ny));
    io::put_u32(out, static_cast<std::uint32_t>(v.dims().nz));
    io::put_f32(out, v.spacing());
    for (float value : v.data()) {
        io::put_f32(out, value);
    }
    return out;
}

Volume3D decode_volume(std::string_view bytes) {
    io::ByteReader reader(bytes);
    if (reader.remaining() < 4 || reader.take(4) != kVolumeMagic) {
        throw FormatError("bad magic: not a BSV1 volume");
    }
    const Dims dims{reader.u32(), reader.u32(), reader.u32()};
    const float spacing = reader.f32();
    if (!(spacing > 0.0f) || !std::isfinite(spacing)) {
        throw FormatError("invalid spacing in volume header");
    }
    const std::uint64_t count = static_cast<std::uint64_t>(dims.nx) * dims.ny * dims.nz;
    if (count * 4 > reader.remaining()) {
        throw TruncationError("volume payload truncated: header declares " +
                              std::to_string(count) + " voxels, file holds " +
                              std::to_string(reader.remaining() / 4));
    }
    if (count * 4 != reader.remaining()) {
        throw FormatError("trailing bytes after volume payload");
    }
    std::vector<float> data(count);
    for (auto& value : data) {
        value = reader.f32();
    }
    require_finite(data);
    return Volume3D(dims, spacing, std::move(data));
}

void save_volume(const Volume3D& v, const std::filesystem::path& path) {
    io::write_file_atomic(path, encode_volume(v));
}

Volume3D load_volume(const std::filesystem::path& path) {
    return decode_volume(io::read_file(path));
}

std::string truth_to_json(const GroundTruth& truth) {
    nlohmann::json lesions = nlohmann::json::array();
    for (const auto& l : truth.lesions) {
        lesions.push_back({{"center_mm", {l.center.x, l.center.y, l.center.z}},
                           {"diameter_mm", l.diameter_mm}});
    }
    nlohmann::json doc = {{"lesions", lesions}};
    return doc.dump(2) + "\n";
}

GroundTruth truth_from_json(std::string_view text) {
    GroundTruth truth;
    try {
        const auto doc = nlohmann::json::parse(text);
        for (const auto& item : doc.at("lesions")) {
            const auto& c = item.at("center_mm");
            if (c.size() != 3) throw FormatError("center_mm must have three coordinates");
            Lesion l{{c[0].get<double>(), c[1].get<double>(), c[2].get<double>()},
                     item.at("diameter_mm").get<double>()};
            if (!(l.diameter_mm > 0.0)) throw FormatError("lesion diameter must be positive");
            truth.lesions.push_back(l);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed ground truth: ") + e.what());
    }
    return truth;
}

void save_truth(const GroundTruth& truth, const std::filesystem::path& path) {
    io::write_file_atomic(path, truth_to_json(truth));
}

GroundTruth load_truth(const std::filesystem::path& path) {
    return truth_from_json(io::read_file(path));
}

}  // namespace blobsurrogate
