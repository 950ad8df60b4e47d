#pragma once

// Region-tagged collocation points in normalized unit-cube coordinates, and
// the scaling map between physical and normalized quantities.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "deepoheat/config.hpp"

namespace deepoheat {

enum class Region : int { Interior = 0, Slab, XMin, XMax, YMin, YMax, ZMin, ZMax };

inline constexpr std::array<Region, 8> kAllRegions{Region::Interior, Region::Slab, Region::XMin, Region::XMax,
                                                   Region::YMin,     Region::YMax, Region::ZMin, Region::ZMax};

std::string_view region_name(Region r);
std::optional<Surface> region_surface(Region r);
Region surface_region(Surface s);

/// Normalized variables: y = (x - origin) / extent per axis, tau = (T - T_amb)
/// / t_scale. Lengths are referred to the z extent and conductivity to k_ref.
struct ScalingMap {
    Vec3 origin{};
    Vec3 extent{1.0, 1.0, 1.0};
    double t_ambient = 298.15;
    double t_scale = 20.0;
    double k_ref = 1.0;

    static ScalingMap for_config(const ChipConfig& config, double t_scale = 20.0);

    double l_ref() const { return extent[2]; }
    /// d/dx_i = axis_factor(i) / l_ref * d/dy_i
    double axis_factor(int axis) const { return l_ref() / extent[axis]; }

    Vec3 to_unit(const Vec3& x) const;
    Vec3 to_physical(const Vec3& y) const;
    double to_tau(double kelvin) const { return (kelvin - t_ambient) / t_scale; }
    double to_kelvin(double tau) const { return t_ambient + t_scale * tau; }

    double conductivity(double k) const { return k / k_ref; }
    double flux(double q) const { return q * l_ref() / (k_ref * t_scale); }
    double source(double q_v) const { return q_v * l_ref() * l_ref() / (k_ref * t_scale); }
    double htc(double h) const { return h * l_ref() / k_ref; }
};

class CollocationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CollocationSet {
    ScalingMap scaling;
    std::array<Eigen::MatrixXd, 8> points;  // 3 x n per region, normalized

    const Eigen::MatrixXd& region(Region r) const { return points[static_cast<int>(r)]; }
    Eigen::MatrixXd& region(Region r) { return points[static_cast<int>(r)]; }
    Eigen::Index count(Region r) const { return region(r).cols(); }
    Eigen::Index total() const;
    /// All points, region-major in kAllRegions order.
    Eigen::MatrixXd all() const;
};

/// Regions that must be nonempty for a config: interior, every surface and
/// the slab when a volumetric source exists.
bool region_required(const ChipConfig& config, Region r);

/// Every mesh node once. z faces own their edges, then x faces, then y
/// faces; remaining nodes go to the slab when their dual cell carries a
/// volumetric source, else to the interior.
CollocationSet build_collocation_mesh(const ChipConfig& config, const ScalingMap& scaling);

/// n uniform points: half by volume (interior vs slab by volume), half on the
/// surfaces by area, using largest-remainder rounding.
CollocationSet build_collocation_random(const ChipConfig& config, const ScalingMap& scaling, int n,
                                        std::mt19937_64& rng);
CollocationSet build_collocation_random(const ChipConfig& config, const ScalingMap& scaling, int n,
                                        std::uint64_t seed);

}  // namespace deepoheat
