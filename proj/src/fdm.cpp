#include "deepoheat/fdm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

namespace deepoheat {

namespace {

/// Dual-cell width of node n along an axis.
double cell_width(const Mesh& mesh, int axis, int n) {
    const double h = mesh.spacing(axis);
    return (n == 0 || n == mesh.counts[axis] - 1) ? 0.5 * h : h;
}

/// Calls fn(node, row, col) for every node of a surface; row/col index the
/// surface grid (row along v, col along u).
template <class Fn>
void for_surface_nodes(const Mesh& mesh, Surface s, Fn&& fn) {
    const int axis = surface_axis(s);
    const int fixed = surface_is_max(s) ? mesh.counts[axis] - 1 : 0;
    auto [u, v] = surface_plane_axes(s);
    for (int r = 0; r < mesh.counts[v]; ++r) {
        for (int c = 0; c < mesh.counts[u]; ++c) {
            std::array<int, 3> ijk{};
            ijk[axis] = fixed;
            ijk[u] = c;
            ijk[v] = r;
            fn(mesh.index(ijk[0], ijk[1], ijk[2]), ijk, r, c);
        }
    }
}

double face_area(const Mesh& mesh, Surface s, const std::array<int, 3>& ijk) {
    auto [u, v] = surface_plane_axes(s);
    return cell_width(mesh, u, ijk[u]) * cell_width(mesh, v, ijk[v]);
}

}  // namespace

std::vector<std::pair<Eigen::Index, double>> LinearSystem::pointwise_row(Eigen::Index row) const {
    std::vector<std::pair<Eigen::Index, double>> out;
    if (pinned[row]) {
        out.emplace_back(row, 1.0);
        return out;
    }
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(matrix, row); it; ++it) {
        out.emplace_back(it.col(), -it.value() / cell_volume[row]);
    }
    return out;
}

LinearSystem assemble(const ChipConfig& config) {
    config.validate();
    const Mesh& mesh = config.mesh;
    const auto n = static_cast<Eigen::Index>(mesh.node_count());

    bool has_sink = false;
    std::optional<double> offset;
    for (Surface s : kAllSurfaces) {
        const auto& kind = config.bc(s).kind();
        if (const auto* c = std::get_if<Convection>(&kind)) {
            has_sink = true;
            if (!offset) offset = c->ambient;
        }
    }
    std::vector<bool> pinned(n, false);
    Eigen::VectorXd pinned_value = Eigen::VectorXd::Zero(n);
    for (Surface s : kAllSurfaces) {
        const auto* d = config.bc(s).as<Dirichlet>();
        if (!d) continue;
        has_sink = true;
        for_surface_nodes(mesh, s, [&](std::size_t node, const std::array<int, 3>&, int r, int c) {
            if (pinned[node]) return;
            pinned[node] = true;
            pinned_value[node] = surface_value_at(d->temperature, r, c);
            if (!offset) offset = pinned_value[node];
        });
    }
    if (!has_sink) {
        throw SingularSystemError(
            "no convection or dirichlet surface: temperature is defined only up to a constant");
    }

    const std::vector<double> k = config.conductivity.nodal(mesh, config.geometry);
    const std::vector<double> qv = nodal_source_density(config);
    const std::array<double, 3> h{mesh.spacing(0), mesh.spacing(1), mesh.spacing(2)};

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(n) * 7);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd volume(n);

    for (int kk = 0; kk < mesh.counts[2]; ++kk) {
        for (int j = 0; j < mesh.counts[1]; ++j) {
            for (int i = 0; i < mesh.counts[0]; ++i) {
                const std::array<int, 3> ijk{i, j, kk};
                const auto c = static_cast<Eigen::Index>(mesh.index(i, j, kk));
                const std::array<double, 3> w{cell_width(mesh, 0, i), cell_width(mesh, 1, j), cell_width(mesh, 2, kk)};
                volume[c] = w[0] * w[1] * w[2];
                b[c] += qv[c] * volume[c];
                for (int a = 0; a < 3; ++a) {
                    if (ijk[a] + 1 >= mesh.counts[a]) continue;
                    std::array<int, 3> nb_ijk = ijk;
                    ++nb_ijk[a];
                    const auto nb = static_cast<Eigen::Index>(mesh.index(nb_ijk[0], nb_ijk[1], nb_ijk[2]));
                    const double area = w[(a + 1) % 3] * w[(a + 2) % 3];
                    const double k_face = 2.0 * k[c] * k[nb] / (k[c] + k[nb]);
                    const double g = k_face * area / h[a];
                    triplets.emplace_back(c, c, g);
                    triplets.emplace_back(nb, nb, g);
                    triplets.emplace_back(c, nb, -g);
                    triplets.emplace_back(nb, c, -g);
                }
            }
        }
    }

    for (Surface s : kAllSurfaces) {
        const auto& kind = config.bc(s).kind();
        if (config.bc(s).is_flux()) {
            const Grid2D flux = surface_flux(config, s);
            for_surface_nodes(mesh, s, [&](std::size_t node, const std::array<int, 3>& ijk, int r, int c) {
                b[node] += flux(r, c) * face_area(mesh, s, ijk);
            });
        } else if (const auto* conv = std::get_if<Convection>(&kind)) {
            for_surface_nodes(mesh, s, [&](std::size_t node, const std::array<int, 3>& ijk, int r, int c) {
                const double ha = surface_value_at(conv->htc, r, c) * face_area(mesh, s, ijk);
                triplets.emplace_back(node, node, ha);
                b[node] += ha * conv->ambient;
            });
        }
    }

    Eigen::SparseMatrix<double, Eigen::RowMajor> full(n, n);
    full.setFromTriplets(triplets.begin(), triplets.end());

    LinearSystem sys;
    sys.mesh = mesh;
    sys.offset = offset.value_or(0.0);
    sys.pinned = pinned;
    sys.cell_volume = volume;
    // Solve for the deviation from the offset temperature.
    sys.rhs = b - full * Eigen::VectorXd::Constant(n, sys.offset);

    std::vector<Eigen::Triplet<double>> reduced;
    reduced.reserve(triplets.size());
    for (Eigen::Index r = 0; r < n; ++r) {
        if (pinned[r]) {
            reduced.emplace_back(r, r, 1.0);
            sys.rhs[r] = pinned_value[r] - sys.offset;
            sys.cell_volume[r] = 0.0;
            continue;
        }
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(full, r); it; ++it) {
            if (pinned[it.col()]) {
                sys.rhs[r] -= it.value() * (pinned_value[it.col()] - sys.offset);
            } else {
                reduced.emplace_back(r, it.col(), it.value());
            }
        }
    }
    sys.matrix.resize(n, n);
    sys.matrix.setFromTriplets(reduced.begin(), reduced.end());
    sys.matrix.makeCompressed();
    return sys;
}

TemperatureField solve(const LinearSystem& system, const SolveOptions& options, SolveStats* stats) {
    const Eigen::Index n = system.size();
    if (system.matrix.rows() != n || system.matrix.cols() != n) {
        throw SolverError("matrix and rhs sizes disagree");
    }
    if (static_cast<std::size_t>(n) != system.mesh.node_count()) {
        throw SolverError("row count differs from the mesh node count");
    }
    const int max_iter = options.max_iter > 0 ? options.max_iter : static_cast<int>(10 * n);

    Eigen::VectorXd inv_diag(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double d = system.matrix.coeff(r, r);
        if (!(d > 0.0)) throw SingularSystemError("non-positive diagonal at row " + std::to_string(r));
        inv_diag[r] = 1.0 / d;
    }

    const Eigen::VectorXd& b = system.rhs;
    const double b_norm = b.norm();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    SolveStats local;

    if (b_norm > 0.0) {
        Eigen::VectorXd r = b;
        Eigen::VectorXd z = inv_diag.cwiseProduct(r);
        Eigen::VectorXd p = z;
        Eigen::VectorXd ap(n);
        double rz = r.dot(z);
        bool converged = false;
        for (int it = 1; it <= max_iter; ++it) {
            ap.noalias() = system.matrix * p;
            const double pap = p.dot(ap);
            if (!(pap > 0.0)) throw SingularSystemError("matrix is not positive definite");
            const double alpha = rz / pap;
            x.noalias() += alpha * p;
            r.noalias() -= alpha * ap;
            local.iterations = it;
            if (r.norm() <= options.tol * b_norm) {
                // confirm against the true residual; recursion drift restarts
                r = b - system.matrix * x;
                local.relative_residual = r.norm() / b_norm;
                if (local.relative_residual <= options.tol) {
                    converged = true;
                    break;
                }
                z = inv_diag.cwiseProduct(r);
                p = z;
                rz = r.dot(z);
                continue;
            }
            z = inv_diag.cwiseProduct(r);
            const double rz_next = r.dot(z);
            p = z + (rz_next / rz) * p;
            rz = rz_next;
        }
        if (!converged) {
            local.relative_residual = (b - system.matrix * x).norm() / b_norm;
            throw SolverError("PCG did not converge in " + std::to_string(max_iter) +
                              " iterations (relative residual " + std::to_string(local.relative_residual) + ")");
        }
    }
    if (stats) *stats = local;

    TemperatureField field;
    field.mesh = system.mesh;
    field.values.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) field.values[r] = system.offset + x[r];
    return field;
}

TemperatureField solve_config(const ChipConfig& config, const SolveOptions& options, SolveStats* stats) {
    return solve(assemble(config), options, stats);
}

std::vector<double> sample_field(const TemperatureField& field, std::span<const Vec3> points) {
    const Mesh& mesh = field.mesh;
    std::vector<double> out;
    out.reserve(points.size());
    for (const Vec3& p : points) {
        std::array<int, 3> lo{};
        std::array<double, 3> t{};
        for (int a = 0; a < 3; ++a) {
            const double tol = 1e-12 * mesh.extent[a];
            const double rel = p[a] - mesh.origin[a];
            if (!(rel >= -tol && rel <= mesh.extent[a] + tol)) {
                throw std::out_of_range("sample_field: point outside the domain");
            }
            const double s = std::clamp(rel / mesh.spacing(a), 0.0, double(mesh.counts[a] - 1));
            lo[a] = std::min(static_cast<int>(std::floor(s)), mesh.counts[a] - 2);
            t[a] = s - lo[a];
        }
        double v = 0.0;
        for (int c = 0; c < 8; ++c) {
            const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
            const double w = (di ? t[0] : 1 - t[0]) * (dj ? t[1] : 1 - t[1]) * (dk ? t[2] : 1 - t[2]);
            if (w != 0.0) v += w * field.at(lo[0] + di, lo[1] + dj, lo[2] + dk);
        }
        out.push_back(v);
    }
    return out;
}

EnergyBalance energy_balance(const ChipConfig& config, const TemperatureField& field) {
    const Mesh& mesh = config.mesh;
    EnergyBalance eb;
    const std::vector<double> qv = nodal_source_density(config);
    for (int k = 0; k < mesh.counts[2]; ++k) {
        for (int j = 0; j < mesh.counts[1]; ++j) {
            for (int i = 0; i < mesh.counts[0]; ++i) {
                eb.injected += qv[mesh.index(i, j, k)] * cell_width(mesh, 0, i) * cell_width(mesh, 1, j) *
                               cell_width(mesh, 2, k);
            }
        }
    }
    for (Surface s : kAllSurfaces) {
        const auto& bc = config.bc(s);
        if (bc.is_flux()) {
            const Grid2D flux = surface_flux(config, s);
            for_surface_nodes(mesh, s, [&](std::size_t, const std::array<int, 3>& ijk, int r, int c) {
                eb.injected += flux(r, c) * face_area(mesh, s, ijk);
            });
        } else if (const auto* conv = bc.as<Convection>()) {
            for_surface_nodes(mesh, s, [&](std::size_t node, const std::array<int, 3>& ijk, int r, int c) {
                eb.convective_outflow +=
                    surface_value_at(conv->htc, r, c) * (field.values[node] - conv->ambient) * face_area(mesh, s, ijk);
            });
        }
    }
    return eb;
}

void write_field_csv(const TemperatureField& field, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write field CSV " + path.string());
    out << "x_mm,y_mm,z_mm,T_K\n";
    const Mesh& mesh = field.mesh;
    for (int k = 0; k < mesh.counts[2]; ++k) {
        for (int j = 0; j < mesh.counts[1]; ++j) {
            for (int i = 0; i < mesh.counts[0]; ++i) {
                const Vec3 p = mesh.node(i, j, k);
                out << format_double(p[0] * 1e3) << ',' << format_double(p[1] * 1e3) << ','
                    << format_double(p[2] * 1e3) << ',' << format_double(field.at(i, j, k)) << '\n';
            }
        }
    }
}

TemperatureField read_field_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open field CSV " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("x_mm,y_mm,z_mm,T_K", 0) != 0) {
        throw std::runtime_error(path.string() + ": missing header x_mm,y_mm,z_mm,T_K");
    }
    std::vector<Vec3> coords;
    std::vector<double> values;
    std::array<std::set<double>, 3> axes;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::array<double, 4> row{};
        std::size_t pos = 0;
        for (int c = 0; c < 4; ++c) {
            std::size_t end = line.find(',', pos);
            if (c < 3 && end == std::string::npos) throw std::runtime_error(path.string() + ": short row");
            std::string_view tok(line.data() + pos, (c < 3 ? end : line.size()) - pos);
            row[c] = parse_double(tok);
            pos = end + 1;
        }
        coords.push_back({row[0], row[1], row[2]});
        values.push_back(row[3]);
        for (int a = 0; a < 3; ++a) axes[a].insert(row[a]);
    }
    std::array<int, 3> counts{};
    Vec3 origin{}, extent{};
    for (int a = 0; a < 3; ++a) {
        if (axes[a].size() < 2) throw std::runtime_error(path.string() + ": need at least 2 nodes per axis");
        counts[a] = static_cast<int>(axes[a].size());
        origin[a] = *axes[a].begin() / 1e3;
        extent[a] = (*axes[a].rbegin() - *axes[a].begin()) / 1e3;
    }
    TemperatureField field;
    field.mesh = Mesh(counts, origin, extent);
    if (values.size() != field.mesh.node_count()) {
        throw std::runtime_error(path.string() + ": row count is not a full structured mesh");
    }
    // enforce (k, j, i) ordering
    for (std::size_t n = 0; n < values.size(); ++n) {
        const int i = static_cast<int>(n % counts[0]);
        const int k = static_cast<int>(n / (static_cast<std::size_t>(counts[0]) * counts[1]));
        if (coords[n][0] != *std::next(axes[0].begin(), i) || coords[n][2] != *std::next(axes[2].begin(), k)) {
            throw std::runtime_error(path.string() + ": rows are not in (k, j, i) node order");
        }
    }
    field.values = std::move(values);
    return field;
}

}  // namespace deepoheat
