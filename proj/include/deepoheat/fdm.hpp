#pragma once

// Steady-state finite-difference reference solver for k * lap(T) + q_V = 0
// on the node mesh of a ChipConfig.
//
// Rows are assembled in conservative (dual-cell) form: each node owns the
// box [x - h/2, x + h/2] clipped to the domain, so boundary rows are the
// ghost-node eliminated equations scaled by the half-cell volume. The
// scaling makes the matrix symmetric positive definite; dividing a row by
// its cell volume recovers the pointwise stencil.

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "deepoheat/config.hpp"

namespace deepoheat {

class SingularSystemError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TemperatureField {
    Mesh mesh;
    std::vector<double> values;  // K, node order i fastest, then j, then k

    double at(int i, int j, int k) const { return values[mesh.index(i, j, k)]; }
};

/// A * x = rhs with T = offset + x. Pinned (Dirichlet) rows are identity
/// rows and their columns are eliminated from the other rows.
struct LinearSystem {
    Eigen::SparseMatrix<double, Eigen::RowMajor> matrix;
    Eigen::VectorXd rhs;
    Eigen::VectorXd cell_volume;  // dual-cell volume of each row, 0 on pinned rows
    std::vector<bool> pinned;
    double offset = 0.0;
    Mesh mesh;

    Eigen::Index size() const { return rhs.size(); }

    /// Row of the pointwise equation sum_faces k_f (T_nb - T_c) / h^2 + ... ,
    /// i.e. -A(row, :) / cell_volume(row), as (column, coefficient) pairs.
    std::vector<std::pair<Eigen::Index, double>> pointwise_row(Eigen::Index row) const;
};

LinearSystem assemble(const ChipConfig& config);

struct SolveOptions {
    double tol = 1e-10;  // relative residual ||b - Ax|| / ||b||
    int max_iter = 0;    // 0: 10 * unknowns
};

struct SolveStats {
    int iterations = 0;
    double relative_residual = 0.0;
};

/// Jacobi-preconditioned conjugate gradients.
TemperatureField solve(const LinearSystem& system, const SolveOptions& options = {}, SolveStats* stats = nullptr);

TemperatureField solve_config(const ChipConfig& config, const SolveOptions& options = {},
                              SolveStats* stats = nullptr);

/// Trilinear interpolation of nodal values. Throws std::out_of_range for
/// points outside the mesh box.
std::vector<double> sample_field(const TemperatureField& field, std::span<const Vec3> points);

struct EnergyBalance {
    double injected = 0.0;            // W, surface flux + volumetric source
    double convective_outflow = 0.0;  // W, sum of h (T - T_amb) over convection faces
};

/// Discrete power budget using the same dual-cell face areas and volumes
/// as the assembly.
EnergyBalance energy_balance(const ChipConfig& config, const TemperatureField& field);

/// CSV `x_mm,y_mm,z_mm,T_K`, one row per node in (k, j, i) order.
void write_field_csv(const TemperatureField& field, const std::filesystem::path& path);
TemperatureField read_field_csv(const std::filesystem::path& path);

}  // namespace deepoheat
