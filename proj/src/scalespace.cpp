#include "blobsurrogate/scalespace.hpp"

#include "blobsurrogate/error.hpp"
#include "blobsurrogate/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <json.hpp>

namespace blobsurrogate {

namespace {

// Half-sample symmetric reflection: -1 -> 0, n -> n-1. Valid while |overhang| <= n.
inline std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
    if (i < 0) return -i - 1;
    if (i >= n) return 2 * n - i - 1;
    return i;
}

void filter_x(const std::vector<float>& in, std::vector<float>& out, const Dims& d,
              std::span<const float> kernel) {
    const auto r = static_cast<std::ptrdiff_t>(kernel.size() / 2);
    const auto nx = static_cast<std::ptrdiff_t>(d.nx);
    const auto rows = static_cast<std::ptrdiff_t>(d.ny * d.nz);
#pragma omp parallel
    {
        std::vector<float> pad(static_cast<std::size_t>(nx + 2 * r));
#pragma omp for schedule(static)
        for (std::ptrdiff_t row = 0; row < rows; ++row) {
            const float* src = in.data() + row * nx;
            float* dst = out.data() + row * nx;
            for (std::ptrdiff_t i = -r; i < nx + r; ++i) {
                pad[static_cast<std::size_t>(i + r)] = src[reflect(i, nx)];
            }
            std::fill(dst, dst + nx, 0.0f);
            for (std::size_t t = 0; t < kernel.size(); ++t) {
                const float w = kernel[t];
                const float* p = pad.data() + t;
                for (std::ptrdiff_t x = 0; x < nx; ++x) {
                    dst[x] += w * p[x];
                }
            }
        }
    }
}

void filter_y(const std::vector<float>& in, std::vector<float>& out, const Dims& d,
              std::span<const float> kernel) {
    const auto r = static_cast<std::ptrdiff_t>(kernel.size() / 2);
    const auto nx = static_cast<std::ptrdiff_t>(d.nx);
    const auto ny = static_cast<std::ptrdiff_t>(d.ny);
    const auto nz = static_cast<std::ptrdiff_t>(d.nz);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t z = 0; z < nz; ++z) {
        const float* plane = in.data() + z * ny * nx;
        for (std::ptrdiff_t y = 0; y < ny; ++y) {
            float* dst = out.data() + (z * ny + y) * nx;
            std::fill(dst, dst + nx, 0.0f);
            for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(kernel.size()); ++t) {
                const float w = kernel[static_cast<std::size_t>(t)];
                const float* src = plane + reflect(y + t - r, ny) * nx;
                for (std::ptrdiff_t x = 0; x < nx; ++x) {
                    dst[x] += w * src[x];
                }
            }
        }
    }
}

void filter_z(const std::vector<float>& in, std::vector<float>& out, const Dims& d,
              std::span<const float> kernel) {
    const auto r = static_cast<std::ptrdiff_t>(kernel.size() / 2);
    const auto plane = static_cast<std::ptrdiff_t>(d.nx * d.ny);
    const auto nz = static_cast<std::ptrdiff_t>(d.nz);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t z = 0; z < nz; ++z) {
        float* dst = out.data() + z * plane;
        std::fill(dst, dst + plane, 0.0f);
        for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(kernel.size()); ++t) {
            const float w = kernel[static_cast<std::size_t>(t)];
            const float* src = in.data() + reflect(z + t - r, nz) * plane;
            for (std::ptrdiff_t i = 0; i < plane; ++i) {
                dst[i] += w * src[i];
            }
        }
    }
}

struct RawMaximum {
    float score;
    std::uint32_t scale;
    std::size_t index;
};

bool ranks_before(const RawMaximum& a, const RawMaximum& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.scale != b.scale) return a.scale < b.scale;
    return a.index < b.index;
}

}  // namespace

std::vector<double> LoGParams::scales() const {
    std::vector<double> out;
    if (!(sigma_step > 0.0) || !(sigma_min > 0.0) || sigma_max < sigma_min) return out;
    // Tolerate accumulated rounding at the upper end.
    const double slack = 1e-9 * std::max(1.0, sigma_max);
    for (std::size_t k = 0;; ++k) {
        const double s = sigma_min + static_cast<double>(k) * sigma_step;
        if (s > sigma_max + slack) break;
        out.push_back(s);
    }
    return out;
}

void LoGParams::validate() const {
    if (!(sigma_min > 0.0) || !(sigma_max >= sigma_min)) {
        throw InvalidArgument("LoG parameters need 0 < sigma_min <= sigma_max");
    }
    if (!(sigma_step > 0.0)) {
        throw InvalidArgument("LoG sigma_step must be positive");
    }
    if (!(response_threshold >= 0.0)) {
        throw InvalidArgument("LoG response_threshold must be nonnegative");
    }
    if (scales().empty()) {
        throw InvalidArgument("LoG scale list is empty");
    }
}

std::vector<Point3> CandidateSet::positions() const {
    std::vector<Point3> out;
    out.reserve(points.size());
    for (const auto& c : points) out.push_back(c.position);
    return out;
}

int gaussian_radius(double sigma_mm, double spacing_mm) {
    if (!(sigma_mm > 0.0) || !(spacing_mm > 0.0)) {
        throw InvalidArgument("Gaussian sigma and spacing must be positive");
    }
    // The epsilon keeps exact integers from rounding up an extra tap.
    return static_cast<int>(std::ceil(std::sqrt(3.0) * sigma_mm / spacing_mm - 1e-9));
}

std::vector<float> gaussian_kernel(double sigma_mm, double spacing_mm) {
    const int r = gaussian_radius(sigma_mm, spacing_mm);
    const double s = sigma_mm / spacing_mm;
    std::vector<double> taps(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        const double w = std::exp(-0.5 * (i * i) / (s * s));
        taps[static_cast<std::size_t>(i + r)] = w;
        sum += w;
    }
    std::vector<float> kernel(taps.size());
    for (std::size_t i = 0; i < taps.size(); ++i) {
        kernel[i] = static_cast<float>(taps[i] / sum);
    }
    return kernel;
}

Volume3D gaussian_filter_3d(const Volume3D& v, double sigma_mm) {
    if (!(sigma_mm > 0.0)) {
        throw InvalidArgument("Gaussian sigma must be positive");
    }
    const int r = gaussian_radius(sigma_mm, v.spacing());
    const Dims& d = v.dims();
    const std::size_t smallest = std::min({d.nx, d.ny, d.nz});
    if (static_cast<std::size_t>(r) >= smallest) {
        throw KernelTooLarge("Gaussian radius " + std::to_string(r) +
                             " voxels does not fit a volume of extent " +
                             std::to_string(smallest));
    }
    const auto kernel = gaussian_kernel(sigma_mm, v.spacing());
    std::vector<float> a(v.data().begin(), v.data().end());
    std::vector<float> b(a.size());
    filter_x(a, b, d, kernel);
    filter_y(b, a, d, kernel);
    filter_z(a, b, d, kernel);
    return Volume3D(d, v.spacing(), std::move(b));
}

Volume3D log_response(const Volume3D& v, double sigma_mm) {
    const Volume3D g = gaussian_filter_3d(v, sigma_mm);
    const Dims& d = v.dims();
    const double h = v.spacing();
    const float scale = static_cast<float>(-(sigma_mm * sigma_mm) / (h * h));
    const auto nx = static_cast<std::ptrdiff_t>(d.nx);
    const auto ny = static_cast<std::ptrdiff_t>(d.ny);
    const auto nz = static_cast<std::ptrdiff_t>(d.nz);
    const auto src = g.data();
    std::vector<float> out(src.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t z = 0; z < nz; ++z) {
        const std::ptrdiff_t zm = reflect(z - 1, nz), zp = reflect(z + 1, nz);
        for (std::ptrdiff_t y = 0; y < ny; ++y) {
            const std::ptrdiff_t ym = reflect(y - 1, ny), yp = reflect(y + 1, ny);
            const float* row = src.data() + (z * ny + y) * nx;
            const float* row_ym = src.data() + (z * ny + ym) * nx;
            const float* row_yp = src.data() + (z * ny + yp) * nx;
            const float* row_zm = src.data() + (zm * ny + y) * nx;
            const float* row_zp = src.data() + (zp * ny + y) * nx;
            float* dst = out.data() + (z * ny + y) * nx;
            for (std::ptrdiff_t x = 0; x < nx; ++x) {
                const float c = row[x];
                const float xm = row[reflect(x - 1, nx)];
                const float xp = row[reflect(x + 1, nx)];
                const float lap = (xm + xp) + (row_ym[x] + row_yp[x]) + (row_zm[x] + row_zp[x]) -
                                  6.0f * c;
                dst[x] = scale * lap;
            }
        }
    }
    return Volume3D(d, v.spacing(), std::move(out));
}

CandidateSet extract_scale_space_maxima(std::span<const Volume3D> responses,
                                        std::span<const double> scales, double threshold,
                                        std::size_t max_candidates) {
    if (responses.empty() || responses.size() != scales.size()) {
        throw InvalidArgument("response stack and scale list must be nonempty and aligned");
    }
    const Dims d = responses.front().dims();
    const float spacing = responses.front().spacing();
    const auto nx = static_cast<std::ptrdiff_t>(d.nx);
    const auto ny = static_cast<std::ptrdiff_t>(d.ny);
    const auto nz = static_cast<std::ptrdiff_t>(d.nz);
    const std::size_t ns = responses.size();

    std::vector<std::vector<RawMaximum>> per_slice(static_cast<std::size_t>(nz) * ns);
    for (std::size_t s = 0; s < ns; ++s) {
        const float* cur = responses[s].data().data();
        const float* below = s > 0 ? responses[s - 1].data().data() : nullptr;
        const float* above = s + 1 < ns ? responses[s + 1].data().data() : nullptr;
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t z = 0; z < nz; ++z) {
            auto& found = per_slice[s * static_cast<std::size_t>(nz) + static_cast<std::size_t>(z)];
            for (std::ptrdiff_t y = 0; y < ny; ++y) {
                for (std::ptrdiff_t x = 0; x < nx; ++x) {
                    const std::ptrdiff_t idx = (z * ny + y) * nx + x;
                    const float v = cur[idx];
                    if (!(v > threshold)) continue;
                    // Ties go to the lexicographically smallest (scale, index).
                    if (below && below[idx] >= v) continue;
                    if (above && above[idx] > v) continue;
                    bool is_max = true;
                    for (std::ptrdiff_t dz = -1; dz <= 1 && is_max; ++dz) {
                        const std::ptrdiff_t zz = z + dz;
                        if (zz < 0 || zz >= nz) continue;
                        for (std::ptrdiff_t dy = -1; dy <= 1 && is_max; ++dy) {
                            const std::ptrdiff_t yy = y + dy;
                            if (yy < 0 || yy >= ny) continue;
                            for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                                const std::ptrdiff_t xx = x + dx;
                                if (xx < 0 || xx >= nx || (dx == 0 && dy == 0 && dz == 0)) continue;
                                const std::ptrdiff_t nidx = (zz * ny + yy) * nx + xx;
                                const float w = cur[nidx];
                                if (w > v || (w == v && nidx < idx)) {
                                    is_max = false;
                                    break;
                                }
                            }
                        }
                    }
                    if (is_max) {
                        found.push_back({v, static_cast<std::uint32_t>(s),
                                         static_cast<std::size_t>(idx)});
                    }
                }
            }
        }
    }

    std::vector<RawMaximum> all;
    for (const auto& part : per_slice) all.insert(all.end(), part.begin(), part.end());
    std::sort(all.begin(), all.end(), ranks_before);
    if (all.size() > max_candidates) all.resize(max_candidates);

    CandidateSet set;
    set.points.reserve(all.size());
    for (const auto& m : all) {
        const std::size_t x = m.index % d.nx;
        const std::size_t y = (m.index / d.nx) % d.ny;
        const std::size_t z = m.index / (d.nx * d.ny);
        set.points.push_back({{static_cast<double>(x) * spacing, static_cast<double>(y) * spacing,
                               static_cast<double>(z) * spacing},
                              static_cast<double>(m.score),
                              scales[m.scale]});
    }
    return set;
}

CandidateSet detect_candidates(const Volume3D& v, const LoGParams& p,
                               std::size_t max_candidates) {
    p.validate();
    const auto scales = p.scales();
    std::vector<Volume3D> responses;
    responses.reserve(scales.size());
    for (double s : scales) responses.push_back(log_response(v, s));
    return extract_scale_space_maxima(responses, scales, p.response_threshold, max_candidates);
}

double sensitivity(std::span<const Point3> candidates, const GroundTruth& truth,
                   double hit_radius_mm) {
    if (!(hit_radius_mm > 0.0)) {
        throw InvalidArgument("hit radius must be positive");
    }
    if (truth.empty()) {
        throw UndefinedSensitivity("sensitivity is undefined for an empty ground truth");
    }
    std::size_t hits = 0;
    for (const auto& lesion : truth.lesions) {
        for (const auto& c : candidates) {
            if (distance(c, lesion.center) <= hit_radius_mm) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double sensitivity(const CandidateSet& candidates, const GroundTruth& truth,
                   double hit_radius_mm) {
    const auto pos = candidates.positions();
    return sensitivity(pos, truth, hit_radius_mm);
}

std::vector<double> LogSearchSpace::sigma_values() const {
    LoGParams p{sigma_lo, sigma_hi, sigma_step, 0.0};
    return p.scales();
}

std::size_t select_log_cell(std::span<const LogGridCell> cells, double theta, bool& reached) {
    if (cells.empty()) {
        throw InvalidArgument("empty LoG search grid");
    }
    reached = std::any_of(cells.begin(), cells.end(),
                          [&](const LogGridCell& c) { return c.mean_sensitivity >= theta; });
    auto tail_before = [](const LogGridCell& a, const LogGridCell& b) {
        if (a.params.sigma_max != b.params.sigma_max) return a.params.sigma_max < b.params.sigma_max;
        if (a.params.sigma_min != b.params.sigma_min) return a.params.sigma_min < b.params.sigma_min;
        return a.params.response_threshold < b.params.response_threshold;
    };
    auto better = [&](const LogGridCell& a, const LogGridCell& b) {
        if (reached) {
            if (a.total_candidates != b.total_candidates) return a.total_candidates < b.total_candidates;
            if (a.mean_sensitivity != b.mean_sensitivity) return a.mean_sensitivity > b.mean_sensitivity;
        } else {
            if (a.mean_sensitivity != b.mean_sensitivity) return a.mean_sensitivity > b.mean_sensitivity;
            if (a.total_candidates != b.total_candidates) return a.total_candidates < b.total_candidates;
        }
        return tail_before(a, b);
    };
    std::size_t best = cells.size();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (reached && !(cells[i].mean_sensitivity >= theta)) continue;
        if (best == cells.size() || better(cells[i], cells[best])) best = i;
    }
    return best;
}

LogOptimizationResult optimize_log_params(std::span<const LabeledVolume> training,
                                          const LogSearchSpace& search, double theta) {
    if (training.empty()) {
        throw InvalidArgument("optimize_log_params needs at least one training volume");
    }
    if (!(theta > 0.0 && theta <= 1.0)) {
        throw InvalidArgument("theta must lie in (0, 1]");
    }
    const auto sigmas = search.sigma_values();
    if (sigmas.empty() || search.thresholds.empty()) {
        throw InvalidArgument("empty LoG search grid");
    }
    const double min_threshold =
        *std::min_element(search.thresholds.begin(), search.thresholds.end());

    std::vector<LogGridCell> cells;
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        for (std::size_t j = i; j < sigmas.size(); ++j) {
            for (double t : search.thresholds) {
                LogGridCell cell;
                cell.params = {sigmas[i], sigmas[j], search.sigma_step, t};
                cells.push_back(cell);
            }
        }
    }
    std::vector<double> sens_sum(cells.size(), 0.0);
    const std::size_t nt = search.thresholds.size();

    for (const auto& sample : training) {
        // Responses keyed by exact sigma so every cell sees the same values
        // detect_candidates would compute for its own scale list.
        std::map<double, Volume3D> cache;
        auto response = [&](double s) -> const Volume3D& {
            auto it = cache.find(s);
            if (it == cache.end()) it = cache.emplace(s, log_response(sample.volume, s)).first;
            return it->second;
        };
        for (std::size_t c = 0; c < cells.size(); c += nt) {
            const auto scales = cells[c].params.scales();
            std::vector<Volume3D> stack;
            stack.reserve(scales.size());
            for (double s : scales) stack.push_back(response(s));
            // Maxima do not depend on the threshold: each threshold keeps a
            // prefix of the score-sorted list.
            const CandidateSet maxima = extract_scale_space_maxima(
                stack, scales, min_threshold, std::numeric_limits<std::size_t>::max());
            const auto positions = maxima.positions();
            for (std::size_t k = 0; k < nt; ++k) {
                const double t = cells[c + k].params.response_threshold;
                std::size_t n = 0;
                while (n < maxima.size() && maxima.points[n].score > t) ++n;
                n = std::min(n, search.max_candidates);
                sens_sum[c + k] += sensitivity(std::span<const Point3>(positions.data(), n),
                                               sample.truth, search.hit_radius_mm);
                cells[c + k].total_candidates += n;
            }
        }
    }

    const double count = static_cast<double>(training.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        cells[c].mean_sensitivity = sens_sum[c] / count;
        cells[c].mean_candidates = static_cast<double>(cells[c].total_candidates) / count;
    }

    LogOptimizationResult result;
    const std::size_t best = select_log_cell(cells, theta, result.reached_theta);
    result.params = cells[best].params;
    result.mean_sensitivity = cells[best].mean_sensitivity;
    result.mean_candidates = cells[best].mean_candidates;
    result.cells = std::move(cells);
    return result;
}

std::string candidates_to_csv(const CandidateSet& set) {
    std::string out = "x_mm,y_mm,z_mm,score\n";
    for (const auto& c : set.points) {
        out += io::format_double(c.position.x) + ',' + io::format_double(c.position.y) + ',' +
               io::format_double(c.position.z) + ',' + io::format_double(c.score) + '\n';
    }
    return out;
}

CandidateSet candidates_from_csv(std::string_view text) {
    const auto lines = io::split_lines(text);
    if (lines.empty() || lines.front() != "x_mm,y_mm,z_mm,score") {
        throw FormatError("candidate CSV must start with header x_mm,y_mm,z_mm,score");
    }
    CandidateSet set;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = io::split(lines[i], ',');
        if (f.size() != 4) {
            throw FormatError("candidate CSV row " + std::to_string(i) + " needs 4 fields");
        }
        set.points.push_back({{io::parse_double(f[0]), io::parse_double(f[1]), io::parse_double(f[2])},
                              io::parse_double(f[3]),
                              0.0});
    }
    return set;
}

std::string log_params_to_json(const LoGParams& p) {
    nlohmann::json doc = {{"sigma_min", p.sigma_min},
                          {"sigma_max", p.sigma_max},
                          {"sigma_step", p.sigma_step},
                          {"response_threshold", p.response_threshold}};
    return doc.dump(2) + "\n";
}

LoGParams log_params_from_json(std::string_view text) {
    try {
        const auto doc = nlohmann::json::parse(text);
        LoGParams p{doc.at("sigma_min").get<double>(), doc.at("sigma_max").get<double>(),
                    doc.at("sigma_step").get<double>(), doc.at("response_threshold").get<double>()};
        p.validate();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed LoG parameters: ") + e.what());
    }
}

void save_log_params(const LoGParams& p, const std::filesystem::path& path) {
    io::write_file_atomic(path, log_params_to_json(p));
}

LoGParams load_log_params(const std::filesystem::path& path) {
    return log_params_from_json(io::read_file(path));
}

}  // namespace blobsurrogate
