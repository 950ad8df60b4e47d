#include "deepoheat/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace deepoheat {

namespace {

constexpr std::array<std::string_view, 6> kSurfaceNames{"xmin", "xmax", "ymin", "ymax", "zmin", "zmax"};
constexpr int kMm = 3;  // decimal shift from m to document mm
constexpr int kMw = 3;  // and from W to mW

bool close_rel(double a, double b, double rel = 1e-12) {
    return std::abs(a - b) <= rel * std::max({1e-300, std::abs(a), std::abs(b)});
}

std::string bc_key(Surface s) { return "bc." + std::string(surface_name(s)); }

void check_surface_value(const SurfaceValue& v, const Mesh& mesh, Surface s, const std::string& key,
                         const char* what, bool strictly_positive) {
    auto check = [&](double x) {
        if (!std::isfinite(x)) throw ConfigError(key, std::string(what) + " must be finite");
        if (strictly_positive && !(x > 0.0)) throw ConfigError(key, std::string(what) + " must be > 0");
    };
    if (const double* scalar = std::get_if<double>(&v)) {
        check(*scalar);
        return;
    }
    const auto& grid = std::get<Grid2D>(v);
    auto [rows, cols] = mesh.surface_shape(s);
    if (grid.rows != static_cast<std::size_t>(rows) || grid.cols != static_cast<std::size_t>(cols)) {
        throw ConfigError(key, std::string(what) + " grid is " + std::to_string(grid.rows) + "x" +
                                   std::to_string(grid.cols) + ", surface mesh is " +
                                   std::to_string(rows) + "x" + std::to_string(cols));
    }
    for (double x : grid.data) check(x);
}

}  // namespace

std::string_view surface_name(Surface s) { return kSurfaceNames[static_cast<int>(s)]; }

std::optional<Surface> surface_from_name(std::string_view name) {
    for (Surface s : kAllSurfaces) {
        if (surface_name(s) == name) return s;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------- geometry

Geometry Geometry::box(const Vec3& extent) { return Geometry{{Cuboid{{0.0, 0.0, 0.0}, extent}}}; }

Geometry Geometry::stack(double x, double y, const std::vector<double>& thicknesses) {
    Geometry g;
    double z = 0.0;
    for (double t : thicknesses) {
        g.cuboids.push_back(Cuboid{{0.0, 0.0, z}, {x, y, t}});
        z += t;
    }
    return g;
}

Vec3 Geometry::origin() const {
    if (cuboids.empty()) return {};
    return cuboids.front().origin;
}

Vec3 Geometry::extent() const {
    if (cuboids.empty()) return {};
    const auto& first = cuboids.front();
    const auto& last = cuboids.back();
    return {first.extent[0], first.extent[1], last.origin[2] + last.extent[2] - first.origin[2]};
}

void Geometry::validate() const {
    if (cuboids.empty()) throw ConfigError("geometry.extent_mm", "no cuboids");
    for (std::size_t n = 0; n < cuboids.size(); ++n) {
        const auto& c = cuboids[n];
        for (int a = 0; a < 3; ++a) {
            if (!(c.extent[a] > 0.0) || !std::isfinite(c.extent[a])) {
                throw ConfigError("geometry.extent_mm", "extents must be strictly positive");
            }
        }
        if (n == 0) continue;
        const auto& below = cuboids[n - 1];
        for (int a = 0; a < 2; ++a) {
            if (!close_rel(c.origin[a], below.origin[a]) || !close_rel(c.extent[a], below.extent[a])) {
                throw ConfigError("geometry.layers_mm", "stacked cuboids must share the x/y footprint");
            }
        }
        if (!close_rel(c.origin[2], below.origin[2] + below.extent[2])) {
            throw ConfigError("geometry.layers_mm", "stacked cuboids must be contiguous in z");
        }
    }
}

// -------------------------------------------------------------------- mesh

Mesh::Mesh(std::array<int, 3> node_counts, const Vec3& box_origin, const Vec3& box_extent)
    : counts(node_counts), origin(box_origin), extent(box_extent) {}

Mesh Mesh::over(const Geometry& geometry, std::array<int, 3> node_counts) {
    return Mesh(node_counts, geometry.origin(), geometry.extent());
}

std::pair<int, int> Mesh::surface_shape(Surface s) const {
    auto [u, v] = surface_plane_axes(s);
    return {counts[v], counts[u]};
}

void Mesh::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (counts[a] < 2) throw ConfigError("mesh.counts", "each count ≥ 2");
        if (!(extent[a] > 0.0)) throw ConfigError("mesh.counts", "mesh extent must be positive");
    }
}

double surface_value_at(const SurfaceValue& v, std::size_t row, std::size_t col) {
    if (const double* scalar = std::get_if<double>(&v)) return *scalar;
    return std::get<Grid2D>(v)(row, col);
}

// -------------------------------------------------------------------- BCs

bool BoundaryCondition::is_flux() const {
    return std::holds_alternative<Adiabatic>(kind_) || std::holds_alternative<Neumann>(kind_);
}

bool BoundaryCondition::is_zero_flux() const {
    if (std::holds_alternative<Adiabatic>(kind_)) return true;
    const auto* n = std::get_if<Neumann>(&kind_);
    if (!n) return false;
    if (const double* s = std::get_if<double>(&n->flux)) return *s == 0.0;
    const auto& g = std::get<Grid2D>(n->flux);
    return std::all_of(g.data.begin(), g.data.end(), [](double x) { return x == 0.0; });
}

bool operator==(const BoundaryCondition& a, const BoundaryCondition& b) {
    if (a.is_zero_flux() && b.is_zero_flux()) return true;
    return a.kind_ == b.kind_;
}

// ----------------------------------------------------------- conductivity

bool ConductivityField::homogeneous() const {
    if (const double* s = std::get_if<double>(&values)) return std::isfinite(*s);
    if (const auto* layers = std::get_if<std::vector<double>>(&values)) {
        return std::adjacent_find(layers->begin(), layers->end(), std::not_equal_to<>()) == layers->end();
    }
    const auto& g = std::get<Grid3D>(values);
    return std::adjacent_find(g.data.begin(), g.data.end(), std::not_equal_to<>()) == g.data.end();
}

std::vector<double> ConductivityField::nodal(const Mesh& mesh, const Geometry& geometry) const {
    std::vector<double> k(mesh.node_count());
    if (const double* s = std::get_if<double>(&values)) {
        std::fill(k.begin(), k.end(), *s);
        return k;
    }
    if (const auto* g = std::get_if<Grid3D>(&values)) return g->data;

    const auto& layers = std::get<std::vector<double>>(values);
    const double tol = 1e-9 * mesh.spacing(2);
    for (int kz = 0; kz < mesh.counts[2]; ++kz) {
        const double z = mesh.coord(2, kz);
        double value = layers.back();
        for (std::size_t n = 0; n < geometry.cuboids.size(); ++n) {
            const double hi = geometry.cuboids[n].origin[2] + geometry.cuboids[n].extent[2];
            if (n + 1 < geometry.cuboids.size() && std::abs(z - hi) <= tol) {
                value = 2.0 * layers[n] * layers[n + 1] / (layers[n] + layers[n + 1]);
                break;
            }
            if (z < hi - tol || n + 1 == geometry.cuboids.size()) {
                value = layers[n];
                break;
            }
        }
        for (int j = 0; j < mesh.counts[1]; ++j) {
            for (int i = 0; i < mesh.counts[0]; ++i) k[mesh.index(i, j, kz)] = value;
        }
    }
    return k;
}

// ------------------------------------------------------------ validation

void ChipConfig::validate() const {
    geometry.validate();
    mesh.validate();
    const Vec3 gext = geometry.extent();
    const Vec3 gorg = geometry.origin();
    for (int a = 0; a < 3; ++a) {
        if (!close_rel(mesh.extent[a], gext[a]) || !close_rel(mesh.origin[a], gorg[a])) {
            throw ConfigError("mesh.counts", "mesh does not span the geometry bounding box");
        }
    }
    if (geometry.cuboids.size() > 1) {
        const double dz = mesh.spacing(2);
        for (std::size_t n = 1; n < geometry.cuboids.size(); ++n) {
            const double steps = (geometry.cuboids[n].origin[2] - gorg[2]) / dz;
            if (std::abs(steps - std::round(steps)) > 1e-6) {
                throw ConfigError("geometry.layers_mm", "cuboid interfaces must fall on mesh nodes");
            }
        }
    }

    for (Surface s : kAllSurfaces) {
        const std::string key = bc_key(s);
        const auto& kind = bc(s).kind();
        if (const auto* d = std::get_if<Dirichlet>(&kind)) {
            check_surface_value(d->temperature, mesh, s, key, "dirichlet temperature", true);
        } else if (const auto* n = std::get_if<Neumann>(&kind)) {
            check_surface_value(n->flux, mesh, s, key, "neumann flux", false);
        } else if (const auto* c = std::get_if<Convection>(&kind)) {
            check_surface_value(c->htc, mesh, s, key, "convection h", true);
            if (!(c->ambient > 0.0) || !std::isfinite(c->ambient)) {
                throw ConfigError(key, "convection ambient temperature must be > 0 K");
            }
        }
    }

    std::set<Surface> powered;
    for (const auto& map : surface_power) {
        const std::string key = "power.surface." + std::string(surface_name(map.surface));
        if (!powered.insert(map.surface).second) throw ConfigError(key, "at most one 2D power map per surface");
        if (!bc(map.surface).is_flux()) {
            throw ConfigError(key, "a surface carrying a 2D power map must be adiabatic or neumann");
        }
        if (map.units == PowerUnits::WattsPerCubicMeter) throw ConfigError(key, "surface map cannot be W/m^3");
        if (map.units == PowerUnits::UnitPowerPerTile && !(map.unit_power_watts > 0.0)) {
            throw ConfigError(key, "unit power must be > 0");
        }
        auto [rows, cols] = mesh.surface_shape(map.surface);
        if (map.values.rows != static_cast<std::size_t>(rows) || map.values.cols != static_cast<std::size_t>(cols)) {
            throw ConfigError(key, "grid shape does not match the surface mesh");
        }
        for (double x : map.values.data) {
            if (!std::isfinite(x)) throw ConfigError(key, "entries must be finite");
            if (x < 0.0) throw ConfigError(key, "entries must be ≥ 0");
        }
    }

    for (const auto& slab : power_slabs) {
        const double zlo = gorg[2];
        const double zhi = gorg[2] + gext[2];
        if (!(slab.z1 > slab.z0)) throw ConfigError("power.volume", "slab needs z1 > z0");
        if (slab.z0 < zlo - 1e-12 * gext[2] || slab.z1 > zhi + 1e-12 * gext[2]) {
            throw ConfigError("power.volume", "slab lies outside the geometry");
        }
        if (!(slab.total_watts >= 0.0) || !std::isfinite(slab.total_watts)) {
            throw ConfigError("power.volume", "total power must be finite and ≥ 0");
        }
    }
    if (volume_power) {
        const auto& g = *volume_power;
        if (g.nx != static_cast<std::size_t>(mesh.counts[0]) || g.ny != static_cast<std::size_t>(mesh.counts[1]) ||
            g.nz != static_cast<std::size_t>(mesh.counts[2])) {
            throw ConfigError("power.volume", "volumetric grid shape does not match the mesh");
        }
        for (double x : g.data) {
            if (!std::isfinite(x) || x < 0.0) throw ConfigError("power.volume", "entries must be finite and ≥ 0");
        }
    }

    auto check_k = [](double k) {
        if (!(k > 0.0) || !std::isfinite(k)) throw ConfigError("conductivity", "values must be strictly positive");
    };
    if (const double* s = std::get_if<double>(&conductivity.values)) {
        check_k(*s);
    } else if (const auto* layers = std::get_if<std::vector<double>>(&conductivity.values)) {
        if (layers->size() != geometry.cuboids.size()) {
            throw ConfigError("conductivity", "need one layer value per cuboid");
        }
        for (double k : *layers) check_k(k);
    } else {
        const auto& g = std::get<Grid3D>(conductivity.values);
        if (g.nx != static_cast<std::size_t>(mesh.counts[0]) || g.ny != static_cast<std::size_t>(mesh.counts[1]) ||
            g.nz != static_cast<std::size_t>(mesh.counts[2])) {
            throw ConfigError("conductivity", "tensor shape does not match the mesh");
        }
        for (double k : g.data) check_k(k);
    }
    if (!(ambient > 0.0) || !std::isfinite(ambient)) throw ConfigError("ambient_k", "must be > 0 K");
}

// ---------------------------------------------------------------- parsing

namespace {

struct Entry {
    std::string value;
    std::size_t line = 0;
};

class DocumentReader {
public:
    DocumentReader(std::string_view document, std::filesystem::path base) : base_(std::move(base)) {
        std::size_t pos = 0;
        std::size_t line_no = 0;
        while (pos <= document.size()) {
            std::size_t end = document.find('\n', pos);
            if (end == std::string_view::npos) end = document.size();
            std::string_view line = document.substr(pos, end - pos);
            pos = end + 1;
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
            auto tokens = split_ws(line);
            if (tokens.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string_view::npos) {
                throw ConfigError("line " + std::to_string(line_no), "expected `key = value`");
            }
            auto key_tokens = split_ws(line.substr(0, eq));
            if (key_tokens.size() != 1) throw ConfigError("line " + std::to_string(line_no), "malformed key");
            std::string key(key_tokens.front());
            std::string value(trim(line.substr(eq + 1)));
            if (key == "power.volume") {
                volume_entries_.push_back(Entry{value, line_no});
                continue;
            }
            if (!entries_.emplace(key, Entry{value, line_no}).second) throw ConfigError(key, "duplicate key");
        }
    }

    const std::string* find(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return nullptr;
        used_.insert(key);
        return &it->second.value;
    }

    const std::string& require(const std::string& key) {
        const std::string* v = find(key);
        if (!v) throw ConfigError(key, "missing key");
        return *v;
    }

    const std::vector<Entry>& volume_entries() const { return volume_entries_; }

    void check_unused() const {
        for (const auto& [key, entry] : entries_) {
            if (!used_.count(key)) throw ConfigError(key, "unknown key");
        }
    }

    std::filesystem::path resolve(std::string_view file_token) const {
        std::filesystem::path p(std::string(file_token.substr(5)));  // strip "file:"
        if (p.is_relative() && !base_.empty()) p = base_ / p;
        return p;
    }

private:
    static std::string_view trim(std::string_view s) {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
        return s;
    }

    std::filesystem::path base_;
    std::map<std::string, Entry> entries_;
    std::vector<Entry> volume_entries_;
    std::set<std::string> used_;
};

bool is_file_token(std::string_view tok) { return tok.rfind("file:", 0) == 0; }

double number(const std::string& key, std::string_view tok, const char* what, int decimal_shift = 0) {
    try {
        return parse_scaled(tok, decimal_shift);
    } catch (const std::invalid_argument&) {
        throw ConfigError(key, std::string("type mismatch: ") + what + " must be a number, got '" +
                                   std::string(tok) + "'");
    }
}

std::vector<double> numbers(const std::string& key, const std::string& value, std::size_t expected,
                            const char* what, int decimal_shift = 0) {
    auto tokens = split_ws(value);
    if (expected && tokens.size() != expected) {
        throw ConfigError(key, std::string("expected ") + std::to_string(expected) + " " + what);
    }
    std::vector<double> out;
    for (auto t : tokens) out.push_back(number(key, t, what, decimal_shift));
    return out;
}

/// `name:<value>` option lookup.
std::optional<std::string_view> option(const std::vector<std::string_view>& tokens, std::string_view name) {
    for (auto t : tokens) {
        if (t.size() > name.size() && t.substr(0, name.size()) == name && t[name.size()] == ':') {
            return t.substr(name.size() + 1);
        }
    }
    return std::nullopt;
}

Grid2D load_grid(const DocumentReader& doc, const std::string& key, std::string_view token) {
    try {
        return read_matrix(doc.resolve(token));
    } catch (const std::exception& e) {
        throw ConfigError(key, e.what());
    }
}

SurfaceValue surface_value(const DocumentReader& doc, const std::string& key, std::string_view token,
                           const char* what) {
    if (is_file_token(token)) return load_grid(doc, key, token);
    return number(key, token, what);
}

BoundaryCondition parse_bc(const DocumentReader& doc, const std::string& key, const std::string& value) {
    auto tokens = split_ws(value);
    if (tokens.empty()) throw ConfigError(key, "empty boundary condition");
    const auto type = tokens.front();
    auto arity = [&](std::size_t n) {
        if (tokens.size() != n + 1) {
            throw ConfigError(key, std::string(type) + " takes " + std::to_string(n) + " argument(s)");
        }
    };
    if (type == "adiabatic") {
        arity(0);
        return Adiabatic{};
    }
    if (type == "dirichlet") {
        arity(1);
        return Dirichlet{surface_value(doc, key, tokens[1], "dirichlet temperature")};
    }
    if (type == "neumann") {
        arity(1);
        return Neumann{surface_value(doc, key, tokens[1], "neumann flux")};
    }
    if (type == "convection") {
        arity(2);
        return Convection{surface_value(doc, key, tokens[1], "convection h"),
                          number(key, tokens[2], "ambient temperature")};
    }
    throw ConfigError(key, "unknown boundary condition '" + std::string(type) +
                               "' (adiabatic | dirichlet | convection | neumann)");
}

}  // namespace

ChipConfig parse_config(std::string_view document, const std::filesystem::path& base_dir) {
    DocumentReader doc(document, base_dir);
    ChipConfig cfg;

    {
        const std::string key = "geometry.extent_mm";
        auto ext = numbers(key, doc.require(key), 3, "extents (x y z)", kMm);
        for (double e : ext) {
            if (!(e > 0.0)) throw ConfigError(key, "extents must be strictly positive");
        }
        const Vec3 extent{ext[0], ext[1], ext[2]};
        if (const std::string* layers = doc.find("geometry.layers_mm")) {
            auto meters = numbers("geometry.layers_mm", *layers, 0, "layer thicknesses", kMm);
            if (meters.empty()) throw ConfigError("geometry.layers_mm", "at least one layer");
            double sum = 0.0;
            for (double x : meters) sum += x;
            if (std::abs(sum - extent[2]) > 1e-9 * extent[2]) {
                throw ConfigError("geometry.layers_mm", "layer thicknesses must sum to the z extent");
            }
            cfg.geometry = Geometry::stack(extent[0], extent[1], meters);
        } else {
            cfg.geometry = Geometry::box(extent);
        }
    }

    {
        const std::string key = "mesh.counts";
        auto tokens = split_ws(doc.require(key));
        if (tokens.size() != 3) throw ConfigError(key, "expected 3 node counts (nx ny nz)");
        std::array<int, 3> counts{};
        for (int a = 0; a < 3; ++a) {
            try {
                counts[a] = static_cast<int>(parse_long(tokens[a]));
            } catch (const std::invalid_argument&) {
                throw ConfigError(key, "type mismatch: counts must be integers");
            }
        }
        cfg.mesh = Mesh::over(cfg.geometry, counts);
        cfg.mesh.validate();
    }

    for (Surface s : kAllSurfaces) {
        const std::string key = bc_key(s);
        cfg.bc(s) = parse_bc(doc, key, doc.require(key));
    }

    for (Surface s : kAllSurfaces) {
        const std::string key = "power.surface." + std::string(surface_name(s));
        const std::string* value = doc.find(key);
        if (!value) continue;
        auto tokens = split_ws(*value);
        if (tokens.empty() || !is_file_token(tokens.front())) throw ConfigError(key, "expected file:<path>");
        SurfacePowerMap map;
        map.surface = s;
        map.values = load_grid(doc, key, tokens.front());
        if (auto mw = option(tokens, "unit_power_mw")) {
            map.units = PowerUnits::UnitPowerPerTile;
            map.unit_power_watts = number(key, *mw, "unit_power_mw", kMw);
        } else if (auto units = option(tokens, "units"); units && *units == "w_per_m2") {
            map.units = PowerUnits::WattsPerSquareMeter;
        } else {
            throw ConfigError(key, "expected unit_power_mw:<v> or units:w_per_m2");
        }
        cfg.surface_power.push_back(std::move(map));
    }

    for (const auto& entry : doc.volume_entries()) {
        const std::string key = "power.volume";
        auto tokens = split_ws(entry.value);
        if (tokens.empty()) throw ConfigError(key, "empty value");
        if (tokens.front() == "slab") {
            auto z0 = option(tokens, "z0_mm");
            auto z1 = option(tokens, "z1_mm");
            auto total = option(tokens, "total_w");
            if (!z0 || !z1 || !total) throw ConfigError(key, "slab needs z0_mm:, z1_mm: and total_w:");
            cfg.power_slabs.push_back(PowerSlab{number(key, *z0, "z0_mm", kMm), number(key, *z1, "z1_mm", kMm),
                                                number(key, *total, "total_w")});
        } else if (is_file_token(tokens.front())) {
            if (cfg.volume_power) throw ConfigError(key, "at most one volumetric grid");
            try {
                auto t = read_tensor(doc.resolve(tokens.front()), cfg.mesh.counts[1], cfg.mesh.counts[2]);
                cfg.volume_power = std::move(t);
            } catch (const std::exception& e) {
                throw ConfigError(key, e.what());
            }
        } else {
            throw ConfigError(key, "expected `slab ...` or file:<path>");
        }
    }

    {
        const std::string key = "conductivity";
        auto tokens = split_ws(doc.require(key));
        if (tokens.empty()) throw ConfigError(key, "empty value");
        if (tokens.front() == "layers") {
            std::vector<double> layers;
            for (std::size_t n = 1; n < tokens.size(); ++n) layers.push_back(number(key, tokens[n], "layer conductivity"));
            cfg.conductivity.values = std::move(layers);
        } else if (is_file_token(tokens.front())) {
            try {
                cfg.conductivity.values = read_tensor(doc.resolve(tokens.front()), cfg.mesh.counts[1], cfg.mesh.counts[2]);
            } catch (const std::exception& e) {
                throw ConfigError(key, e.what());
            }
        } else {
            if (tokens.size() != 1) throw ConfigError(key, "expected a scalar, layers ..., or file:<path>");
            cfg.conductivity.values = number(key, tokens.front(), "conductivity");
        }
    }

    if (const std::string* amb = doc.find("ambient_k")) {
        cfg.ambient = number("ambient_k", *amb, "ambient temperature");
    }

    doc.check_unused();
    cfg.validate();
    return cfg;
}

ChipConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open config document");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path());
}

std::string serialize_config(const ChipConfig& config, const std::filesystem::path& dir, std::string_view stem) {
    std::ostringstream out;
    auto file_for = [&](const std::string& what) {
        std::string name = std::string(stem) + "." + what + ".txt";
        return std::pair{name, dir / name};
    };
    auto write_value = [&](const SurfaceValue& v, const std::string& what) -> std::string {
        if (const double* s = std::get_if<double>(&v)) return format_double(*s);
        auto [name, path] = file_for(what);
        write_matrix(std::get<Grid2D>(v), path);
        return "file:" + name;
    };

    const Vec3 ext = config.geometry.extent();
    out << "geometry.extent_mm = " << format_scaled(ext[0], kMm) << ' ' << format_scaled(ext[1], kMm) << ' '
        << format_scaled(ext[2], kMm) << '\n';
    if (config.geometry.cuboids.size() > 1) {
        out << "geometry.layers_mm =";
        for (const auto& c : config.geometry.cuboids) out << ' ' << format_scaled(c.extent[2], kMm);
        out << '\n';
    }
    out << "mesh.counts = " << config.mesh.counts[0] << ' ' << config.mesh.counts[1] << ' ' << config.mesh.counts[2]
        << '\n';
    out << "ambient_k = " << format_double(config.ambient) << '\n';

    for (Surface s : kAllSurfaces) {
        const std::string name(surface_name(s));
        out << "bc." << name << " = ";
        const auto& kind = config.bc(s).kind();
        if (std::holds_alternative<Adiabatic>(kind)) {
            out << "adiabatic";
        } else if (const auto* d = std::get_if<Dirichlet>(&kind)) {
            out << "dirichlet " << write_value(d->temperature, "bc." + name);
        } else if (const auto* n = std::get_if<Neumann>(&kind)) {
            out << "neumann " << write_value(n->flux, "bc." + name);
        } else {
            const auto& c = std::get<Convection>(kind);
            out << "convection " << write_value(c.htc, "bc." + name) << ' ' << format_double(c.ambient);
        }
        out << '\n';
    }

    for (const auto& map : config.surface_power) {
        const std::string name(surface_name(map.surface));
        auto [file, path] = file_for("power." + name);
        write_matrix(map.values, path);
        out << "power.surface." << name << " = file:" << file;
        if (map.units == PowerUnits::UnitPowerPerTile) {
            out << " unit_power_mw:" << format_scaled(map.unit_power_watts, kMw);
        } else {
            out << " units:w_per_m2";
        }
        out << '\n';
    }
    for (const auto& slab : config.power_slabs) {
        out << "power.volume = slab z0_mm:" << format_scaled(slab.z0, kMm) << " z1_mm:" << format_scaled(slab.z1, kMm)
            << " total_w:" << format_double(slab.total_watts) << '\n';
    }
    if (config.volume_power) {
        auto [file, path] = file_for("volume");
        write_tensor(*config.volume_power, path);
        out << "power.volume = file:" << file << '\n';
    }

    out << "conductivity = ";
    if (const double* k = std::get_if<double>(&config.conductivity.values)) {
        out << format_double(*k);
    } else if (const auto* layers = std::get_if<std::vector<double>>(&config.conductivity.values)) {
        out << "layers";
        for (double k : *layers) out << ' ' << format_double(k);
    } else {
        auto [file, path] = file_for("conductivity");
        write_tensor(std::get<Grid3D>(config.conductivity.values), path);
        out << "file:" << file;
    }
    out << '\n';
    return out.str();
}

void save_config(const ChipConfig& config, const std::filesystem::path& path) {
    const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    std::string doc = serialize_config(config, dir, path.stem().string());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config " + path.string());
    out << doc;
}

// -------------------------------------------------------- power helpers

SurfacePowerMap unit_power_to_flux(const SurfacePowerMap& map, double tile_area) {
    if (!(tile_area > 0.0)) throw std::invalid_argument("unit_power_to_flux: tile_area must be > 0");
    if (map.units != PowerUnits::UnitPowerPerTile) {
        throw std::invalid_argument("unit_power_to_flux: map is not in unit-power units");
    }
    SurfacePowerMap out = map;
    const double scale = map.unit_power_watts / tile_area;
    for (double& e : out.values.data) e *= scale;
    out.units = PowerUnits::WattsPerSquareMeter;
    return out;
}

Grid2D tile_to_grid(const Grid2D& tiles) {
    if (tiles.empty()) throw std::invalid_argument("tile_to_grid: empty matrix");
    const std::size_t rows = tiles.rows;
    const std::size_t cols = tiles.cols;
    Grid2D grid(rows + 1, cols + 1);
    auto clamp = [](std::size_t n, std::size_t count) -> std::array<std::size_t, 2> {
        const std::size_t lo = n == 0 ? 0 : n - 1;
        const std::size_t hi = n >= count ? count - 1 : n;
        return {lo, hi};
    };
    for (std::size_t r = 0; r <= rows; ++r) {
        const auto rr = clamp(r, rows);
        for (std::size_t c = 0; c <= cols; ++c) {
            const auto cc = clamp(c, cols);
            grid(r, c) = 0.25 * (tiles(rr[0], cc[0]) + tiles(rr[0], cc[1]) + tiles(rr[1], cc[0]) + tiles(rr[1], cc[1]));
        }
    }
    return grid;
}

double volumetric_power_density(double total_watts, const Vec3& slab_extent) {
    const double volume = slab_extent[0] * slab_extent[1] * slab_extent[2];
    if (!(volume > 0.0)) throw std::invalid_argument("volumetric_power_density: zero volume");
    return total_watts / volume;
}

Grid2D surface_flux(const ChipConfig& config, Surface s) {
    auto [rows, cols] = config.mesh.surface_shape(s);
    Grid2D flux(rows, cols, 0.0);
    const auto& bc = config.bc(s);
    if (!bc.is_flux()) return flux;
    if (const auto* n = bc.as<Neumann>()) {
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) flux(r, c) = surface_value_at(n->flux, r, c);
        }
    }
    auto [u, v] = surface_plane_axes(s);
    const double tile_area = config.mesh.spacing(u) * config.mesh.spacing(v);
    for (const auto& map : config.surface_power) {
        if (map.surface != s) continue;
        const SurfacePowerMap w = map.units == PowerUnits::UnitPowerPerTile ? unit_power_to_flux(map, tile_area) : map;
        for (std::size_t n = 0; n < flux.data.size(); ++n) flux.data[n] += w.values.data[n];
    }
    return flux;
}

namespace {

double slab_density(const ChipConfig& config, const PowerSlab& slab) {
    const Vec3 ext = config.geometry.extent();
    return volumetric_power_density(slab.total_watts, {ext[0], ext[1], slab.z1 - slab.z0});
}

double trilinear(const Grid3D& g, const Mesh& mesh, const Vec3& p) {
    std::array<int, 3> lo{};
    std::array<double, 3> t{};
    for (int a = 0; a < 3; ++a) {
        const double s = std::clamp((p[a] - mesh.origin[a]) / mesh.spacing(a), 0.0, double(mesh.counts[a] - 1));
        lo[a] = std::min(static_cast<int>(std::floor(s)), mesh.counts[a] - 2);
        t[a] = s - lo[a];
    }
    double out = 0.0;
    for (int c = 0; c < 8; ++c) {
        const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
        const double w = (di ? t[0] : 1 - t[0]) * (dj ? t[1] : 1 - t[1]) * (dk ? t[2] : 1 - t[2]);
        if (w != 0.0) out += w * g(lo[0] + di, lo[1] + dj, lo[2] + dk);
    }
    return out;
}

}  // namespace

double source_density_at(const ChipConfig& config, const Vec3& point) {
    double q = 0.0;
    for (const auto& slab : config.power_slabs) {
        if (point[2] >= slab.z0 && point[2] <= slab.z1) q += slab_density(config, slab);
    }
    if (config.volume_power) q += trilinear(*config.volume_power, config.mesh, point);
    return q;
}

std::vector<double> nodal_source_density(const ChipConfig& config) {
    const Mesh& mesh = config.mesh;
    std::vector<double> q(mesh.node_count(), 0.0);
    if (config.volume_power) q = config.volume_power->data;
    if (config.power_slabs.empty()) return q;

    const double dz = mesh.spacing(2);
    const double zmin = mesh.origin[2];
    const double zmax = mesh.origin[2] + mesh.extent[2];
    std::vector<double> layer(mesh.counts[2], 0.0);
    for (int k = 0; k < mesh.counts[2]; ++k) {
        const double zc = mesh.coord(2, k);
        const double lo = std::max(zmin, zc - 0.5 * dz);
        const double hi = std::min(zmax, zc + 0.5 * dz);
        for (const auto& slab : config.power_slabs) {
            const double overlap = std::max(0.0, std::min(hi, slab.z1) - std::max(lo, slab.z0));
            layer[k] += slab_density(config, slab) * overlap / (hi - lo);
        }
    }
    for (int k = 0; k < mesh.counts[2]; ++k) {
        for (int j = 0; j < mesh.counts[1]; ++j) {
            for (int i = 0; i < mesh.counts[0]; ++i) q[mesh.index(i, j, k)] += layer[k];
        }
    }
    return q;
}

// ------------------------------------------------------ reference setups

ChipConfig reference_powermap_config(std::array<int, 3> counts) {
    ChipConfig cfg;
    cfg.geometry = Geometry::box({1e-3, 1e-3, 0.5e-3});
    cfg.mesh = Mesh::over(cfg.geometry, counts);
    for (Surface s : kAllSurfaces) cfg.bc(s) = Adiabatic{};
    cfg.bc(Surface::ZMin) = Convection{500.0, 298.15};
    cfg.conductivity.values = 0.1;
    cfg.ambient = 298.15;
    cfg.validate();
    return cfg;
}

ChipConfig reference_htc_config(double htc_top, double htc_bottom, std::array<int, 3> counts) {
    ChipConfig cfg;
    cfg.geometry = Geometry::box({1e-3, 1e-3, 0.55e-3});
    cfg.mesh = Mesh::over(cfg.geometry, counts);
    for (Surface s : kAllSurfaces) cfg.bc(s) = Adiabatic{};
    cfg.bc(Surface::ZMax) = Convection{htc_top, 298.15};
    cfg.bc(Surface::ZMin) = Convection{htc_bottom, 298.15};
    cfg.power_slabs.push_back(PowerSlab{0.25e-3, 0.30e-3, 6.25e-4});
    cfg.conductivity.values = 0.1;
    cfg.ambient = 298.15;
    cfg.validate();
    return cfg;
}

}  // namespace deepoheat
