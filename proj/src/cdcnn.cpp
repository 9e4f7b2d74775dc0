#include "blobsurrogate/cdcnn.hpp"

#include "blobsurrogate/error.hpp"
#include "blobsurrogate/io.hpp"
#include "blobsurrogate/nn/adam.hpp"
#include "blobsurrogate/nn/loss.hpp"
#include "blobsurrogate/nn/serialize.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

namespace blobsurrogate {

void CdcnnSpec::validate() const {
    if (kernel < 3 || kernel % 2 == 0) throw InvalidArgument("cdCNN kernel size must be odd and >= 3");
    if (depth < 1) throw InvalidArgument("cdCNN depth must be >= 1");
    if (receptive_field != receptive_field_for_depth(depth, kernel)) {
        throw InvalidArgument("receptive field " + std::to_string(receptive_field) +
                              " does not match depth " + std::to_string(depth) + " with kernel " +
                              std::to_string(kernel));
    }
    if (hidden_channels < 1) throw InvalidArgument("cdCNN hidden channel count must be >= 1");
    if (!(c > 0.0 && c <= 1.0)) throw InvalidArgument("target value c must lie in (0, 1]");
    if (!(sigma_smooth_mm >= 0.0)) throw InvalidArgument("sigma_smooth must be >= 0");
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidArgument("tau must lie in (0, 1)");
}

CdcnnSpec CdcnnSpec::for_receptive_field(int rf, int k) {
    CdcnnSpec s;
    s.kernel = k;
    s.depth = depth_for_receptive_field(rf, k);
    s.receptive_field = rf;
    return s;
}

int depth_for_receptive_field(int rf, int k) {
    if (k < 3 || k % 2 == 0) throw InvalidArgument("kernel size must be odd and >= 3");
    if (rf < k || (rf - k) % (k - 1) != 0) {
        throw InvalidArgument("receptive field " + std::to_string(rf) +
                              " is not reachable with kernel size " + std::to_string(k));
    }
    return 1 + (rf - k) / (k - 1);
}

int receptive_field_for_depth(int depth, int k) {
    if (depth < 1) throw InvalidArgument("depth must be >= 1");
    return k + (depth - 1) * (k - 1);
}

int receptive_field_for_log(const LoGParams& p, double spacing_mm, int k) {
    p.validate();
    if (k < 3 || k % 2 == 0) throw InvalidArgument("kernel size must be odd and >= 3");
    const int diameter = 2 * gaussian_radius(p.sigma_max, spacing_mm) + 1;
    if (diameter <= k) return k;
    const int steps = (diameter - k + (k - 2)) / (k - 1);
    return k + steps * (k - 1);
}

nn::Network<float> build_cdcnn(const CdcnnSpec& spec) {
    spec.validate();
    nn::Network<float> net;
    const auto k = static_cast<std::size_t>(spec.kernel);
    const auto h = static_cast<std::size_t>(spec.hidden_channels);
    for (int i = 0; i < spec.depth; ++i) {
        const std::size_t in = i == 0 ? 1 : h;
        const bool last = i + 1 == spec.depth;
        const std::size_t out = last ? 1 : h;
        net.layers.push_back(nn::Layer<float>::conv(
            in, out, k, last ? nn::Activation::Sigmoid : nn::Activation::Relu));
    }
    return net;
}

Volume3D build_target(Dims dims, float spacing_mm, const CandidateSet& candidates,
                      const GroundTruth& truth, double c, double exclusion_mm) {
    if (!(c > 0.0 && c <= 1.0)) throw InvalidArgument("target value c must lie in (0, 1]");
    Volume3D q(dims, spacing_mm, 0.0f);
    for (const auto& cand : candidates.points) {
        if (!q.contains(cand.position)) throw InvalidGeometry("candidate outside the volume");
        const bool near_lesion = std::any_of(truth.lesions.begin(), truth.lesions.end(), [&](const Lesion& l) {
            return distance(l.center, cand.position) <= exclusion_mm;
        });
        if (near_lesion) continue;
        const auto v = q.nearest_voxel(cand.position);
        float& slot = q.at(v[0], v[1], v[2]);
        slot = std::max(slot, static_cast<float>(c));
    }
    for (const auto& l : truth.lesions) {
        if (!q.contains(l.center)) throw InvalidGeometry("lesion center outside the volume");
        const auto v = q.nearest_voxel(l.center);
        q.at(v[0], v[1], v[2]) = 1.0f;
    }
    return q;
}

Volume3D smooth_target(const Volume3D& q, double sigma_mm) {
    if (!(sigma_mm >= 0.0)) throw InvalidArgument("sigma_smooth must be >= 0");
    if (sigma_mm == 0.0) return q;
    const Dims d = q.dims();
    const double s = q.spacing();
    const int r = static_cast<int>(std::ceil(4.0 * sigma_mm / s));
    std::vector<double> w1(static_cast<std::size_t>(r) + 1);
    for (int i = 0; i <= r; ++i) w1[static_cast<std::size_t>(i)] = std::exp(-(i * s) * (i * s) / (2.0 * sigma_mm * sigma_mm));
    Volume3D out(d, q.spacing(), 0.0f);
    const auto nx = static_cast<int>(d.nx);
    const auto ny = static_cast<int>(d.ny);
    const auto nz = static_cast<int>(d.nz);
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                const double peak = q.at(x, y, z);
                if (peak == 0.0) continue;
                for (int dz = -r; dz <= r; ++dz) {
                    const int zz = z + dz;
                    if (zz < 0 || zz >= nz) continue;
                    for (int dy = -r; dy <= r; ++dy) {
                        const int yy = y + dy;
                        if (yy < 0 || yy >= ny) continue;
                        const double wzy = peak * w1[static_cast<std::size_t>(std::abs(dz))] *
                                           w1[static_cast<std::size_t>(std::abs(dy))];
                        for (int dx = -r; dx <= r; ++dx) {
                            const int xx = x + dx;
                            if (xx < 0 || xx >= nx) continue;
                            const auto v = static_cast<float>(wzy * w1[static_cast<std::size_t>(std::abs(dx))]);
                            float& slot = out.at(xx, yy, zz);
                            slot = std::max(slot, v);
                        }
                    }
                }
            }
        }
    }
    return out;
}

nn::Tensor<float> normalize_input(const Volume3D& v) {
    const Dims d = v.dims();
    double mean = 0.0;
    for (float x : v.data()) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (float x : v.data()) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
    nn::Tensor<float> t({1, 1, d.nz, d.ny, d.nx});
    auto src = v.data();
    for (std::size_t i = 0; i < src.size(); ++i) t[i] = static_cast<float>((src[i] - mean) * inv);
    return t;
}

Volume3D cdcnn_response(const nn::Network<float>& net, const Volume3D& v) {
    const nn::Tensor<float> out = net.forward(normalize_input(v));
    if (out.size() != v.size()) throw ShapeMismatch("cdCNN output does not match the volume");
    std::vector<float> data(out.data().begin(), out.data().end());
    return Volume3D(v.dims(), v.spacing(), std::move(data));
}

namespace {

using Offsets = std::vector<std::array<int, 3>>;

const Offsets& neighbor_offsets() {
    static const Offsets offs = [] {
        Offsets o;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    if (dx != 0 || dy != 0 || dz != 0) o.push_back({dx, dy, dz});
        return o;
    }();
    return offs;
}

struct Component {
    double sw = 0.0, sx = 0.0, sy = 0.0, sz = 0.0;
    float max = 0.0f;
    std::size_t first = 0;  // smallest linear index, for deterministic ordering
};

CandidateSet components_to_candidates(const std::vector<Component>& comps, float spacing) {
    CandidateSet set;
    set.points.reserve(comps.size());
    std::vector<std::size_t> order(comps.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (comps[a].max != comps[b].max) return comps[a].max > comps[b].max;
        return comps[a].first < comps[b].first;
    });
    for (std::size_t i : order) {
        const auto& c = comps[i];
        set.points.push_back({{c.sx / c.sw * spacing, c.sy / c.sw * spacing, c.sz / c.sw * spacing},
                              static_cast<double>(c.max),
                              0.0});
    }
    return set;
}

}  // namespace

CandidateSet extract_candidates_from_response(const Volume3D& response, double tau) {
    const Dims d = response.dims();
    const auto nx = static_cast<int>(d.nx);
    const auto ny = static_cast<int>(d.ny);
    const auto nz = static_cast<int>(d.nz);
    auto data = response.data();
    std::vector<char> seen(data.size(), 0);
    std::vector<Component> comps;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < data.size(); ++start) {
        if (seen[start] || !(data[start] > tau)) continue;
        Component comp;
        comp.first = start;
        seen[start] = 1;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            const int x = static_cast<int>(i % d.nx);
            const int y = static_cast<int>((i / d.nx) % d.ny);
            const int z = static_cast<int>(i / (d.nx * d.ny));
            const double w = data[i];
            comp.sw += w;
            comp.sx += w * x;
            comp.sy += w * y;
            comp.sz += w * z;
            comp.max = std::max(comp.max, data[i]);
            for (const auto& o : neighbor_offsets()) {
                const int xx = x + o[0], yy = y + o[1], zz = z + o[2];
                if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz) continue;
                const std::size_t j = response.index(xx, yy, zz);
                if (seen[j] || !(data[j] > tau)) continue;
                seen[j] = 1;
                stack.push_back(j);
            }
        }
        comps.push_back(comp);
    }
    return components_to_candidates(comps, response.spacing());
}

CandidateSet detect_candidates_cdcnn(const nn::Network<float>& net, const Volume3D& v, double tau) {
    if (net.layers.empty() || net.layers.back().activation != nn::Activation::Sigmoid) {
        throw InvalidArgument("candidate detection needs a sigmoid output layer");
    }
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidArgument("tau must lie in (0, 1)");
    const nn::Tensor<float> logits = net.forward_logits(normalize_input(v));
    if (logits.size() != v.size()) throw ShapeMismatch("cdCNN output does not match the volume");
    // Conservative prefilter; the exact comparison happens on the sigmoid
    // values inside the extraction, so the result is unchanged.
    const float cut = static_cast<float>(std::log(tau / (1.0 - tau)) - 1e-2);
    std::vector<float> data(v.size(), 0.0f);
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (logits[i] > cut) data[i] = nn::sigmoid(logits[i]);
    }
    return extract_candidates_from_response(Volume3D(v.dims(), v.spacing(), std::move(data)), tau);
}

namespace {

struct Transform {
    std::array<int, 3> perm{0, 1, 2};  // output axis a reads input axis perm[a]
    std::array<bool, 3> flip{false, false, false};
    std::array<int, 3> shift{0, 0, 0};
};

Volume3D apply_transform(const Volume3D& v, const Transform& t) {
    const Dims d = v.dims();
    const std::array<std::size_t, 3> n{d.nx, d.ny, d.nz};
    Volume3D out(d, v.spacing(), 0.0f);
    std::array<std::size_t, 3> o{};
    for (o[2] = 0; o[2] < n[2]; ++o[2]) {
        for (o[1] = 0; o[1] < n[1]; ++o[1]) {
            for (o[0] = 0; o[0] < n[0]; ++o[0]) {
                std::array<std::size_t, 3> src{};
                for (int a = 0; a < 3; ++a) {
                    const std::size_t len = n[static_cast<std::size_t>(a)];
                    std::size_t c = o[static_cast<std::size_t>(a)];
                    if (t.flip[static_cast<std::size_t>(a)]) c = len - 1 - c;
                    const auto sh = static_cast<std::ptrdiff_t>(t.shift[static_cast<std::size_t>(a)]);
                    const auto ln = static_cast<std::ptrdiff_t>(len);
                    c = static_cast<std::size_t>(((static_cast<std::ptrdiff_t>(c) - sh) % ln + ln) % ln);
                    src[static_cast<std::size_t>(t.perm[static_cast<std::size_t>(a)])] = c;
                }
                out.at(o[0], o[1], o[2]) = v.at(src[0], src[1], src[2]);
            }
        }
    }
    return out;
}

Transform random_transform(const Dims& d, int max_shift, std::mt19937_64& rng) {
    Transform t;
    if (d.nx == d.ny && d.ny == d.nz) std::shuffle(t.perm.begin(), t.perm.end(), rng);
    std::bernoulli_distribution coin(0.5);
    for (auto& f : t.flip) f = coin(rng);
    std::uniform_int_distribution<int> sh(-max_shift, max_shift);
    for (auto& s : t.shift) s = sh(rng);
    return t;
}

nn::Tensor<float> as_tensor(const Volume3D& v) {
    const Dims d = v.dims();
    return nn::Tensor<float>({1, 1, d.nz, d.ny, d.nx}, std::vector<float>(v.data().begin(), v.data().end()));
}

}  // namespace

CdcnnTrainResult train_cdcnn(std::span<const CdcnnSample> samples, const CdcnnSpec& spec,
                             const CdcnnTrainOptions& options) {
    spec.validate();
    if (options.epochs > 0 && samples.empty()) throw InvalidArgument("cdCNN training needs samples");
    if (!(options.learning_rate > 0.0 && std::isfinite(options.learning_rate))) {
        throw InvalidArgument("learning rate must be positive and finite");
    }
    if (options.max_shift_voxels < 0) throw InvalidArgument("max shift must be >= 0");
    for (const auto& s : samples) {
        if (s.volume.dims() != s.target.dims()) throw ShapeMismatch("target geometry differs from volume");
    }

    CdcnnTrainResult result;
    result.network = build_cdcnn(spec);
    result.network.initialize(io::derive_seed(options.seed, 0));
    nn::AdamState<float> adam(options.learning_rate);
    std::mt19937_64 order_rng(io::derive_seed(options.seed, 1));

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double total = 0.0;
        for (std::size_t idx : order) {
            const auto& s = samples[idx];
            nn::Tensor<float> input, target;
            if (options.augment) {
                std::mt19937_64 rng(io::derive_seed(options.seed, 1000 + step));
                const Transform t = random_transform(s.volume.dims(), options.max_shift_voxels, rng);
                input = normalize_input(apply_transform(s.volume, t));
                target = as_tensor(apply_transform(s.target, t));
            } else {
                input = normalize_input(s.volume);
                target = as_tensor(s.target);
            }
            nn::ForwardCache<float> cache;
            const nn::Tensor<float> out = result.network.forward(input, cache);
            const auto loss = nn::dice_loss(out, target);
            if (!std::isfinite(loss.value) || !out.all_finite()) {
                throw TrainingFailure("cdCNN loss diverged", step);
            }
            const auto grads = result.network.backward(cache, loss.grad, false);
            nn::adam_step(result.network, grads, adam);
            total += loss.value;
            ++step;
        }
        const double mean = total / static_cast<double>(samples.size());
        result.epoch_loss.push_back(mean);
        if (options.on_epoch) options.on_epoch(epoch, mean);
    }
    return result;
}

std::vector<double> tau_grid() {
    std::vector<double> g;
    for (int i = 1; i <= 256; ++i) g.push_back(i / 257.0);
    return g;
}

std::size_t select_threshold_point(std::span<const ThresholdPoint> grid, double theta, bool& reached) {
    if (grid.empty()) throw InvalidArgument("empty threshold grid");
    reached = false;
    std::size_t best = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i].mean_sensitivity >= theta && (!reached || grid[i].tau > grid[best].tau)) {
            best = i;
            reached = true;
        }
    }
    if (reached) return best;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        const auto& a = grid[i];
        const auto& b = grid[best];
        if (a.mean_sensitivity > b.mean_sensitivity ||
            (a.mean_sensitivity == b.mean_sensitivity && a.tau > b.tau)) {
            best = i;
        }
    }
    return best;
}

namespace {

struct SweepRow {
    double sensitivity;
    std::size_t components;
    std::size_t voxels;
};

// Descending threshold sweep with incremental union-find: voxels enter in
// order of decreasing response, components merge as the threshold drops.
std::vector<SweepRow> sweep_volume(const ResponseSample& s, std::span<const double> taus,
                                   double hit_radius) {
    const Volume3D& r = s.response;
    const Dims d = r.dims();
    auto data = r.data();
    const double lowest = *std::min_element(taus.begin(), taus.end());
    std::vector<std::uint32_t> active;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data[i] > lowest) active.push_back(static_cast<std::uint32_t>(i));
    }
    std::stable_sort(active.begin(), active.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return data[a] > data[b]; });

    constexpr std::int64_t kAbsent = -1;
    std::vector<std::int64_t> parent(data.size(), kAbsent);
    std::vector<Component> comp(data.size());
    auto find = [&](std::int64_t i) {
        std::int64_t root = i;
        while (parent[static_cast<std::size_t>(root)] != root) root = parent[static_cast<std::size_t>(root)];
        while (parent[static_cast<std::size_t>(i)] != root) {
            const std::int64_t next = parent[static_cast<std::size_t>(i)];
            parent[static_cast<std::size_t>(i)] = root;
            i = next;
        }
        return root;
    };
    std::vector<std::uint32_t> roots;
    const float spacing = r.spacing();

    std::vector<std::size_t> by_desc(taus.size());
    std::iota(by_desc.begin(), by_desc.end(), std::size_t{0});
    std::sort(by_desc.begin(), by_desc.end(), [&](std::size_t a, std::size_t b) { return taus[a] > taus[b]; });

    std::vector<SweepRow> rows(taus.size());
    std::size_t next = 0;
    for (std::size_t ti : by_desc) {
        const double tau = taus[ti];
        while (next < active.size() && data[active[next]] > tau) {
            const std::uint32_t i = active[next++];
            const int x = static_cast<int>(i % d.nx);
            const int y = static_cast<int>((i / d.nx) % d.ny);
            const int z = static_cast<int>(i / (d.nx * d.ny));
            parent[i] = i;
            const double w = data[i];
            comp[i] = {w, w * x, w * y, w * z, data[i], i};
            roots.push_back(i);
            for (const auto& o : neighbor_offsets()) {
                const int xx = x + o[0], yy = y + o[1], zz = z + o[2];
                if (xx < 0 || yy < 0 || zz < 0 || xx >= static_cast<int>(d.nx) ||
                    yy >= static_cast<int>(d.ny) || zz >= static_cast<int>(d.nz)) {
                    continue;
                }
                const std::size_t j = r.index(xx, yy, zz);
                if (parent[j] == kAbsent) continue;
                const std::int64_t a = find(static_cast<std::int64_t>(i));
                const std::int64_t b = find(static_cast<std::int64_t>(j));
                if (a == b) continue;
                auto& ca = comp[static_cast<std::size_t>(a)];
                const auto& cb = comp[static_cast<std::size_t>(b)];
                ca.sw += cb.sw;
                ca.sx += cb.sx;
                ca.sy += cb.sy;
                ca.sz += cb.sz;
                ca.max = std::max(ca.max, cb.max);
                ca.first = std::min(ca.first, cb.first);
                parent[static_cast<std::size_t>(b)] = a;
            }
        }
        std::erase_if(roots, [&](std::uint32_t i) { return parent[i] != static_cast<std::int64_t>(i); });
        std::vector<Point3> centers;
        centers.reserve(roots.size());
        for (std::uint32_t i : roots) {
            const auto& c = comp[i];
            centers.push_back({c.sx / c.sw * spacing, c.sy / c.sw * spacing, c.sz / c.sw * spacing});
        }
        rows[ti] = {sensitivity(centers, s.truth, hit_radius), roots.size(), next};
    }
    return rows;
}

}  // namespace

ThresholdSelection select_threshold(std::span<const ResponseSample> samples, double theta,
                                    std::span<const double> taus,
                                    std::optional<double> candidate_budget, double hit_radius_mm) {
    if (samples.empty()) throw InvalidArgument("threshold selection needs at least one response");
    if (taus.empty()) throw InvalidArgument("empty threshold grid");
    if (!(theta > 0.0 && theta <= 1.0)) throw InvalidArgument("theta must lie in (0, 1]");
    for (double t : taus) {
        if (!(t >= 0.0 && t < 1.0)) throw InvalidArgument("thresholds must lie in [0, 1)");
    }
    std::vector<std::vector<SweepRow>> per(samples.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(samples.size()); ++i) {
        per[static_cast<std::size_t>(i)] = sweep_volume(samples[static_cast<std::size_t>(i)], taus, hit_radius_mm);
    }

    ThresholdSelection sel;
    const double n = static_cast<double>(samples.size());
    std::vector<std::size_t> asc(taus.size());
    std::iota(asc.begin(), asc.end(), std::size_t{0});
    std::stable_sort(asc.begin(), asc.end(), [&](std::size_t a, std::size_t b) { return taus[a] < taus[b]; });
    for (std::size_t ti : asc) {
        ThresholdPoint p;
        p.tau = taus[ti];
        for (const auto& rows : per) {
            p.mean_sensitivity += rows[ti].sensitivity;
            p.mean_candidates += static_cast<double>(rows[ti].components);
            p.mean_voxels += static_cast<double>(rows[ti].voxels);
        }
        p.mean_sensitivity /= n;
        p.mean_candidates /= n;
        p.mean_voxels /= n;
        sel.grid.push_back(p);
    }
    const std::size_t best = select_threshold_point(sel.grid, theta, sel.reached_theta);
    sel.tau = sel.grid[best].tau;
    sel.mean_sensitivity = sel.grid[best].mean_sensitivity;
    sel.mean_candidates = sel.grid[best].mean_candidates;
    sel.mean_voxels = sel.grid[best].mean_voxels;
    if (candidate_budget) {
        for (const auto& p : sel.grid) {
            if (p.mean_candidates <= *candidate_budget) {
                sel.budget_tau = p.tau;
                break;
            }
        }
    }
    return sel;
}

ThresholdSelection select_threshold(std::span<const ResponseSample> samples, double theta,
                                    std::optional<double> candidate_budget, double hit_radius_mm) {
    const auto grid = tau_grid();
    return select_threshold(samples, theta, grid, candidate_budget, hit_radius_mm);
}

std::string cdcnn_spec_to_json(const CdcnnSpec& spec) {
    nlohmann::json doc = {{"receptive_field", spec.receptive_field},
                          {"kernel", spec.kernel},
                          {"depth", spec.depth},
                          {"hidden_channels", spec.hidden_channels},
                          {"c", spec.c},
                          {"sigma_smooth_mm", spec.sigma_smooth_mm},
                          {"tau", spec.tau}};
    return doc.dump(2) + "\n";
}

CdcnnSpec cdcnn_spec_from_json(std::string_view text, const CdcnnSpec& base) {
    CdcnnSpec s = base;
    try {
        const auto doc = nlohmann::json::parse(text);
        if (!doc.is_object()) throw FormatError("cdCNN spec must be a JSON object");
        for (const auto& [key, value] : doc.items()) {
            if (key == "receptive_field") s.receptive_field = value.get<int>();
            else if (key == "kernel") s.kernel = value.get<int>();
            else if (key == "depth") s.depth = value.get<int>();
            else if (key == "hidden_channels") s.hidden_channels = value.get<int>();
            else if (key == "c") s.c = value.get<double>();
            else if (key == "sigma_smooth_mm") s.sigma_smooth_mm = value.get<double>();
            else if (key == "tau") s.tau = value.get<double>();
            else throw FormatError("unknown cdCNN spec field '" + key + "'");
        }
        if (doc.contains("receptive_field") && !doc.contains("depth")) {
            s.depth = depth_for_receptive_field(s.receptive_field, s.kernel);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed cdCNN spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::filesystem::path sidecar_path(const std::filesystem::path& weights) {
    return std::filesystem::path(weights.string() + ".json");
}

void save_cdcnn_model(const CdcnnModel& model, const std::filesystem::path& path) {
    model.spec.validate();
    nn::save_weights(path, model.network);
    io::write_file_atomic(sidecar_path(path), cdcnn_spec_to_json(model.spec));
}

CdcnnModel load_cdcnn_model(const std::filesystem::path& path) {
    CdcnnModel m;
    m.spec = cdcnn_spec_from_json(io::read_file(sidecar_path(path)));
    m.network = nn::load_weights(path);
    const auto expected = build_cdcnn(m.spec);
    if (m.network.layers.size() != expected.layers.size()) {
        throw FormatError("cdCNN weights do not match the spec sidecar");
    }
    for (std::size_t i = 0; i < expected.layers.size(); ++i) {
        if (m.network.layers[i].weights.shape() != expected.layers[i].weights.shape() ||
            m.network.layers[i].activation != expected.layers[i].activation) {
            throw FormatError("cdCNN layer " + std::to_string(i) + " does not match the spec sidecar");
        }
    }
    return m;
}

}  // namespace blobsurrogate
