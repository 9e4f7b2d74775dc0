#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace blobsurrogate {

struct Dims {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::size_t nz = 0;

    std::size_t count() const { return nx * ny * nz; }
    bool operator==(const Dims&) const = default;
};

/// Physical position in millimetres (voxel index times spacing).
struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    bool operator==(const Point3&) const = default;
};

double distance(const Point3& a, const Point3& b);

struct Lesion {
    Point3 center;
    double diameter_mm = 0.0;
};

/// List of true lesion centres for one volume.
struct GroundTruth {
    std::vector<Lesion> lesions;

    std::size_t size() const { return lesions.size(); }
    bool empty() const { return lesions.empty(); }
};

/// A scored point; used for classifier output and final detections.
struct Detection {
    Point3 position;
    double probability = 0.0;
};

/// Dense scalar volume with isotropic spacing, x-fastest layout.
class Volume3D {
public:
    Volume3D() = default;
    Volume3D(Dims dims, float spacing_mm, float fill = 0.0f);
    /// Validates size, spacing and finiteness.
    Volume3D(Dims dims, float spacing_mm, std::vector<float> data);

    const Dims& dims() const { return dims_; }
    float spacing() const { return spacing_; }
    std::size_t size() const { return data_.size(); }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return (z * dims_.ny + y) * dims_.nx + x;
    }
    float at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }
    float& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }

    Point3 voxel_center(std::size_t x, std::size_t y, std::size_t z) const;
    /// Nearest voxel to a physical point, clamped to the grid.
    std::array<std::size_t, 3> nearest_voxel(const Point3& p) const;
    /// Largest valid coordinate per axis, (n - 1) * spacing.
    std::array<double, 3> extent_mm() const;
    bool contains(const Point3& p) const;

    /// Trilinear sample at a physical point with clamped borders.
    float sample(const Point3& p) const;

    std::pair<float, float> min_max() const;

    bool operator==(const Volume3D&) const = default;

private:
    Dims dims_{};
    float spacing_ = 1.0f;
    std::vector<float> data_;
};

/// Raw acquisition grid with per-axis spacing, input to resampling.
struct AnisotropicVolume {
    Dims dims;
    std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
    std::vector<float> data;
};

Volume3D resample_isotropic(const AnisotropicVolume& source, float target_spacing_mm);

// BSV1 volume file.
std::string encode_volume(const Volume3D& v);
Volume3D decode_volume(std::string_view bytes);
void save_volume(const Volume3D& v, const std::filesystem::path& path);
Volume3D load_volume(const std::filesystem::path& path);

// Ground-truth JSON file.
std::string truth_to_json(const GroundTruth& truth);
GroundTruth truth_from_json(std::string_view text);
void save_truth(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth load_truth(const std::filesystem::path& path);

}  // namespace blobsurrogate
