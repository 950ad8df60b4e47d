#pragma once

// Modular chip thermal configuration: stacked-cuboid geometry, a structured
// node mesh, one boundary condition per exterior surface, surface and
// volumetric power, and the conductivity field. All quantities are SI
// (m, W, K); document units (mm, mW) are converted at parse time.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <type_traits>
#include <variant>
#include <vector>

#include "deepoheat/grid.hpp"

namespace deepoheat {

using Vec3 = std::array<double, 3>;

enum class Surface : int { XMin = 0, XMax, YMin, YMax, ZMin, ZMax };

inline constexpr std::array<Surface, 6> kAllSurfaces{Surface::XMin, Surface::XMax, Surface::YMin,
                                                     Surface::YMax, Surface::ZMin, Surface::ZMax};

std::string_view surface_name(Surface s);
std::optional<Surface> surface_from_name(std::string_view name);

constexpr int surface_axis(Surface s) { return static_cast<int>(s) / 2; }
constexpr bool surface_is_max(Surface s) { return static_cast<int>(s) % 2 == 1; }
/// +1 for the max face of an axis, -1 for the min face.
constexpr double outward_sign(Surface s) { return surface_is_max(s) ? 1.0 : -1.0; }

/// In-plane (u, v) axes of a surface. Surface grids store rows along v and
/// columns along u.
constexpr std::pair<int, int> surface_plane_axes(Surface s) {
    switch (surface_axis(s)) {
        case 0: return {1, 2};
        case 1: return {0, 2};
        default: return {0, 1};
    }
}

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, std::string reason)
        : std::runtime_error(key + ": " + reason), key_(std::move(key)), reason_(std::move(reason)) {}
    const std::string& key() const { return key_; }
    const std::string& reason() const { return reason_; }

private:
    std::string key_;
    std::string reason_;
};

struct Cuboid {
    Vec3 origin{};
    Vec3 extent{};
    bool operator==(const Cuboid&) const = default;
};

/// Cuboids stacked bottom to top along z with a shared x/y footprint.
struct Geometry {
    std::vector<Cuboid> cuboids;

    static Geometry box(const Vec3& extent);
    /// Single footprint split into layers of the given z thicknesses.
    static Geometry stack(double x, double y, const std::vector<double>& thicknesses);

    Vec3 origin() const;
    Vec3 extent() const;
    void validate() const;
    bool operator==(const Geometry&) const = default;
};

struct Mesh {
    std::array<int, 3> counts{2, 2, 2};
    Vec3 origin{};
    Vec3 extent{1.0, 1.0, 1.0};

    Mesh() = default;
    Mesh(std::array<int, 3> node_counts, const Vec3& box_origin, const Vec3& box_extent);
    static Mesh over(const Geometry& geometry, std::array<int, 3> node_counts);

    double spacing(int axis) const { return extent[axis] / (counts[axis] - 1); }
    std::size_t node_count() const {
        return static_cast<std::size_t>(counts[0]) * counts[1] * counts[2];
    }
    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) + counts[0] * (static_cast<std::size_t>(j) + counts[1] * k);
    }
    double coord(int axis, int n) const { return origin[axis] + n * spacing(axis); }
    Vec3 node(int i, int j, int k) const { return {coord(0, i), coord(1, j), coord(2, k)}; }
    /// Node counts of a surface grid as (rows, cols) = (count along v, count along u).
    std::pair<int, int> surface_shape(Surface s) const;
    void validate() const;

    bool operator==(const Mesh&) const = default;
};

/// Scalar, or a per-node grid over the surface.
using SurfaceValue = std::variant<double, Grid2D>;

double surface_value_at(const SurfaceValue& v, std::size_t row, std::size_t col);

struct Adiabatic {
    bool operator==(const Adiabatic&) const = default;
};
struct Dirichlet {
    SurfaceValue temperature;  // K
    bool operator==(const Dirichlet&) const = default;
};
struct Neumann {
    SurfaceValue flux;  // W/m^2, positive into the domain
    bool operator==(const Neumann&) const = default;
};
struct Convection {
    SurfaceValue htc;  // W/(m^2 K)
    double ambient = 298.15;
    bool operator==(const Convection&) const = default;
};

class BoundaryCondition {
public:
    using Kind = std::variant<Adiabatic, Dirichlet, Neumann, Convection>;

    BoundaryCondition() = default;
    BoundaryCondition(Kind kind) : kind_(std::move(kind)) {}  // NOLINT(google-explicit-constructor)
    template <class T>
        requires std::is_constructible_v<Kind, T> && (!std::is_same_v<std::remove_cvref_t<T>, Kind>) &&
                 (!std::is_same_v<std::remove_cvref_t<T>, BoundaryCondition>)
    BoundaryCondition(T&& kind) : kind_(std::forward<T>(kind)) {}  // NOLINT(google-explicit-constructor)

    const Kind& kind() const { return kind_; }
    template <class T>
    const T* as() const { return std::get_if<T>(&kind_); }
    /// Adiabatic or Neumann.
    bool is_flux() const;
    /// Flux type with q_n identically zero.
    bool is_zero_flux() const;

    /// Adiabatic and Neumann(q_n == 0) compare equal.
    friend bool operator==(const BoundaryCondition& a, const BoundaryCondition& b);

private:
    Kind kind_ = Adiabatic{};
};

enum class PowerUnits { UnitPowerPerTile, WattsPerSquareMeter, WattsPerCubicMeter };

/// Grid-based 2D power map on one surface, one value per surface node.
struct SurfacePowerMap {
    Surface surface = Surface::ZMax;
    Grid2D values;
    PowerUnits units = PowerUnits::UnitPowerPerTile;
    double unit_power_watts = 0.0;
    bool operator==(const SurfacePowerMap&) const = default;
};

/// Uniform volumetric power over z in [z0, z1] across the full footprint.
struct PowerSlab {
    double z0 = 0.0;
    double z1 = 0.0;
    double total_watts = 0.0;
    bool operator==(const PowerSlab&) const = default;
};

struct ConductivityField {
    /// Scalar, one value per cuboid, or a nodal tensor; W/(m K).
    std::variant<double, std::vector<double>, Grid3D> values = 0.1;

    bool homogeneous() const;
    /// Conductivity at every mesh node. Nodes on a cuboid interface take the
    /// harmonic mean of the two layers.
    std::vector<double> nodal(const Mesh& mesh, const Geometry& geometry) const;
    bool operator==(const ConductivityField&) const = default;
};

struct ChipConfig {
    Geometry geometry;
    Mesh mesh;
    std::array<BoundaryCondition, 6> bcs{};
    std::vector<SurfacePowerMap> surface_power;
    std::vector<PowerSlab> power_slabs;
    std::optional<Grid3D> volume_power;  // W/m^3 at nodes
    ConductivityField conductivity;
    double ambient = 298.15;

    const BoundaryCondition& bc(Surface s) const { return bcs[static_cast<int>(s)]; }
    BoundaryCondition& bc(Surface s) { return bcs[static_cast<int>(s)]; }

    /// Throws ConfigError naming the offending document key.
    void validate() const;

    bool operator==(const ChipConfig&) const = default;
};

/// Parses a `key = value` document. Relative `file:` paths resolve against
/// base_dir.
ChipConfig parse_config(std::string_view document, const std::filesystem::path& base_dir = {});
ChipConfig load_config(const std::filesystem::path& path);

/// Renders the document and writes every referenced matrix file into `dir`
/// as `<stem>.<what>.txt`.
std::string serialize_config(const ChipConfig& config, const std::filesystem::path& dir,
                             std::string_view stem);
void save_config(const ChipConfig& config, const std::filesystem::path& path);

/// Unit-power entries to W/m^2: e * unit_power_watts / tile_area.
SurfacePowerMap unit_power_to_flux(const SurfacePowerMap& map, double tile_area);

/// Tile-centered m x m map to the (m+1) x (m+1) node grid: bilinear on tile
/// centers, clamped to the nearest tile at the border.
Grid2D tile_to_grid(const Grid2D& tiles);

double volumetric_power_density(double total_watts, const Vec3& slab_extent);

/// Total inward flux (Neumann value plus any 2D power map) at each node of a
/// flux-type surface, W/m^2. Zero grid for other BC types.
Grid2D surface_flux(const ChipConfig& config, Surface s);

/// q_V (W/m^3) of the slabs and volumetric grid at a physical point.
double source_density_at(const ChipConfig& config, const Vec3& point);

/// Node-integrated q_V: each node's dual cell receives the slab power that
/// overlaps it, divided by the cell volume. Conserves total power exactly.
std::vector<double> nodal_source_density(const ChipConfig& config);

/// Single 1 x 1 x 0.5 mm cuboid: adiabatic sides, convection bottom
/// (h = 500, T_amb = 298.15), top flux surface without a power map yet,
/// k = 0.1.
ChipConfig reference_powermap_config(std::array<int, 3> counts = {21, 21, 11});

/// 1 x 1 x 0.55 mm cuboid: adiabatic sides, convection top and bottom, a
/// 0.05 mm slab of 0.625 mW centered in the middle layer, k = 0.1.
ChipConfig reference_htc_config(double htc_top, double htc_bottom, std::array<int, 3> counts = {21, 21, 12});

}  // namespace deepoheat
