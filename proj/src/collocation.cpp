#include "deepoheat/collocation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace deepoheat {

std::string_view region_name(Region r) {
    switch (r) {
        case Region::Interior: return "interior";
        case Region::Slab: return "slab";
        case Region::XMin: return "xmin";
        case Region::XMax: return "xmax";
        case Region::YMin: return "ymin";
        case Region::YMax: return "ymax";
        case Region::ZMin: return "zmin";
        case Region::ZMax: return "zmax";
    }
    return "?";
}

std::optional<Surface> region_surface(Region r) {
    const int i = static_cast<int>(r);
    if (i < 2) return std::nullopt;
    return static_cast<Surface>(i - 2);
}

Region surface_region(Surface s) { return static_cast<Region>(static_cast<int>(s) + 2); }

ScalingMap ScalingMap::for_config(const ChipConfig& config, double t_scale) {
    if (!(t_scale > 0.0)) throw std::invalid_argument("temperature scale must be > 0");
    ScalingMap m;
    m.origin = config.mesh.origin;
    m.extent = config.mesh.extent;
    m.t_scale = t_scale;
    m.t_ambient = config.ambient;
    for (Surface s : kAllSurfaces) {
        if (const auto* c = config.bc(s).as<Convection>()) {
            m.t_ambient = c->ambient;
            break;
        }
    }
    const auto k = config.conductivity.nodal(config.mesh, config.geometry);
    m.k_ref = *std::max_element(k.begin(), k.end());
    return m;
}

Vec3 ScalingMap::to_unit(const Vec3& x) const {
    return {(x[0] - origin[0]) / extent[0], (x[1] - origin[1]) / extent[1], (x[2] - origin[2]) / extent[2]};
}

Vec3 ScalingMap::to_physical(const Vec3& y) const {
    return {origin[0] + y[0] * extent[0], origin[1] + y[1] * extent[1], origin[2] + y[2] * extent[2]};
}

Eigen::Index CollocationSet::total() const {
    Eigen::Index n = 0;
    for (const auto& p : points) n += p.cols();
    return n;
}

Eigen::MatrixXd CollocationSet::all() const {
    Eigen::MatrixXd out(3, total());
    Eigen::Index start = 0;
    for (const auto& p : points) {
        out.middleCols(start, p.cols()) = p;
        start += p.cols();
    }
    return out;
}

namespace {

bool has_volume_source(const ChipConfig& config) {
    for (const auto& s : config.power_slabs) {
        if (s.total_watts > 0.0) return true;
    }
    if (config.volume_power) {
        for (double v : config.volume_power->data) {
            if (v != 0.0) return true;
        }
    }
    return false;
}

void check_required(const ChipConfig& config, const CollocationSet& set) {
    for (Region r : kAllRegions) {
        if (region_required(config, r) && set.count(r) == 0) {
            throw CollocationError("collocation region '" + std::string(region_name(r)) + "' has no points");
        }
    }
}

/// Largest-remainder apportionment of n over the weights.
std::vector<int> apportion(int n, const std::vector<double>& weights) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<int> out(weights.size(), 0);
    if (total <= 0.0) return out;
    std::vector<std::pair<double, std::size_t>> remainders;
    int assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = n * weights[i] / total;
        out[i] = static_cast<int>(std::floor(exact));
        assigned += out[i];
        remainders.emplace_back(exact - out[i], i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < n && i < remainders.size(); ++i, ++assigned) ++out[remainders[i].second];
    return out;
}

}  // namespace

bool region_required(const ChipConfig& config, Region r) {
    if (r == Region::Slab) return has_volume_source(config);
    return true;
}

CollocationSet build_collocation_mesh(const ChipConfig& config, const ScalingMap& scaling) {
    config.validate();
    const Mesh& mesh = config.mesh;
    const std::vector<double> source = nodal_source_density(config);
    std::array<std::vector<Vec3>, 8> buckets;
    for (int k = 0; k < mesh.counts[2]; ++k) {
        for (int j = 0; j < mesh.counts[1]; ++j) {
            for (int i = 0; i < mesh.counts[0]; ++i) {
                Region r;
                if (k == 0) {
                    r = Region::ZMin;
                } else if (k == mesh.counts[2] - 1) {
                    r = Region::ZMax;
                } else if (i == 0) {
                    r = Region::XMin;
                } else if (i == mesh.counts[0] - 1) {
                    r = Region::XMax;
                } else if (j == 0) {
                    r = Region::YMin;
                } else if (j == mesh.counts[1] - 1) {
                    r = Region::YMax;
                } else {
                    r = source[mesh.index(i, j, k)] != 0.0 ? Region::Slab : Region::Interior;
                }
                // normalized node coordinates are exact fractions of the counts
                buckets[static_cast<int>(r)].push_back(
                    {static_cast<double>(i) / (mesh.counts[0] - 1), static_cast<double>(j) / (mesh.counts[1] - 1),
                     static_cast<double>(k) / (mesh.counts[2] - 1)});
            }
        }
    }
    CollocationSet set;
    set.scaling = scaling;
    for (int r = 0; r < 8; ++r) {
        set.points[r].resize(3, static_cast<Eigen::Index>(buckets[r].size()));
        for (std::size_t c = 0; c < buckets[r].size(); ++c) {
            for (int a = 0; a < 3; ++a) set.points[r](a, c) = buckets[r][c][a];
        }
    }
    check_required(config, set);
    return set;
}

CollocationSet build_collocation_random(const ChipConfig& config, const ScalingMap& scaling, int n,
                                        std::mt19937_64& rng) {
    config.validate();
    if (n <= 0) throw CollocationError("random collocation needs n > 0");
    if (config.volume_power) throw CollocationError("random collocation supports slab sources only");
    const Vec3 ext = config.mesh.extent;
    const Vec3 org = config.mesh.origin;

    // slab z-intervals in normalized units, merged
    std::vector<std::pair<double, double>> slabs;
    for (const auto& s : config.power_slabs) {
        if (s.total_watts <= 0.0) continue;
        slabs.emplace_back(std::clamp((s.z0 - org[2]) / ext[2], 0.0, 1.0),
                           std::clamp((s.z1 - org[2]) / ext[2], 0.0, 1.0));
    }
    std::sort(slabs.begin(), slabs.end());
    std::vector<std::pair<double, double>> merged;
    for (const auto& s : slabs) {
        if (!merged.empty() && s.first <= merged.back().second) {
            merged.back().second = std::max(merged.back().second, s.second);
        } else {
            merged.push_back(s);
        }
    }
    double slab_len = 0.0;
    for (const auto& s : merged) slab_len += s.second - s.first;
    std::vector<std::pair<double, double>> gaps;
    double prev = 0.0;
    for (const auto& s : merged) {
        if (s.first > prev) gaps.emplace_back(prev, s.first);
        prev = s.second;
    }
    if (prev < 1.0) gaps.emplace_back(prev, 1.0);

    const int n_volume = n - n / 2;
    const int n_surface = n / 2;
    const auto vol_split = apportion(n_volume, {1.0 - slab_len, slab_len});
    std::vector<double> areas;
    for (Surface s : kAllSurfaces) {
        auto [u, v] = surface_plane_axes(s);
        areas.push_back(ext[u] * ext[v]);
    }
    const auto surf_split = apportion(n_surface, areas);

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    // z drawn uniformly over a union of intervals
    auto draw_z = [&](const std::vector<std::pair<double, double>>& parts, double length) {
        double t = unit(rng) * length;
        for (const auto& p : parts) {
            const double w = p.second - p.first;
            if (t <= w) return p.first + t;
            t -= w;
        }
        return parts.back().second;
    };

    CollocationSet set;
    set.scaling = scaling;
    auto fill_volume = [&](Region r, int count, const std::vector<std::pair<double, double>>& parts, double len) {
        Eigen::MatrixXd& m = set.region(r);
        m.resize(3, count);
        for (int c = 0; c < count; ++c) {
            m(0, c) = unit(rng);
            m(1, c) = unit(rng);
            m(2, c) = draw_z(parts, len);
        }
    };
    fill_volume(Region::Interior, vol_split[0], gaps, 1.0 - slab_len);
    fill_volume(Region::Slab, merged.empty() ? 0 : vol_split[1], merged, slab_len);
    for (std::size_t si = 0; si < kAllSurfaces.size(); ++si) {
        const Surface s = kAllSurfaces[si];
        Eigen::MatrixXd& m = set.region(surface_region(s));
        m.resize(3, surf_split[si]);
        const int axis = surface_axis(s);
        auto [u, v] = surface_plane_axes(s);
        for (int c = 0; c < surf_split[si]; ++c) {
            m(axis, c) = surface_is_max(s) ? 1.0 : 0.0;
            m(u, c) = unit(rng);
            m(v, c) = unit(rng);
        }
    }
    check_required(config, set);
    return set;
}

CollocationSet build_collocation_random(const ChipConfig& config, const ScalingMap& scaling, int n,
                                        std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return build_collocation_random(config, scaling, n, rng);
}

}  // namespace deepoheat
