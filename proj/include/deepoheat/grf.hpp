#pragma once

// Gaussian random field power maps on an m x m unit-square grid and uniform
// sampling of heat-transfer-coefficient pairs.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "deepoheat/grid.hpp"

namespace deepoheat {

class GrfError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GrfSpec {
    int m = 21;
    double length_scale = 0.3;
    double jitter = 1e-8;

    void validate() const;
};

/// Unit-square coordinate of grid point p = i + m * j: (i / (m-1), j / (m-1)).
/// For m == 1 the single point sits at the origin.
std::pair<double, double> grf_point(int m, int p);

/// K(p, q) = exp(-|x_p - x_q|^2 / (2 l^2)) + jitter * [p == q], size m^2 x m^2.
Eigen::MatrixXd rbf_covariance(const GrfSpec& spec);

/// Holds the Cholesky factor and a seeded generator. One thread at a time.
class GrfSampler {
public:
    GrfSampler(const GrfSpec& spec, std::uint64_t seed);

    const GrfSpec& spec() const { return spec_; }
    const Eigen::MatrixXd& factor() const { return lower_; }

    /// One m x m sample, row j holding points with y = j / (m-1).
    Grid2D sample();
    std::vector<Grid2D> sample(int n);
    /// Draws the normals from a caller-owned generator instead.
    Grid2D sample(std::mt19937_64& rng);

private:
    Grid2D draw(std::mt19937_64& rng, std::normal_distribution<double>& normal) const;

    GrfSpec spec_;
    Eigen::MatrixXd lower_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

std::vector<Grid2D> sample_grf(const GrfSpec& spec, int n, std::uint64_t seed);

enum class PowerNormalization { MinMax, Raw };

/// Min-max rescale to [0, p_max]; constant samples become p_max / 2. Raw
/// passes the sample through unchanged.
Grid2D grf_to_power(const Grid2D& sample, double p_max, PowerNormalization mode = PowerNormalization::MinMax);

struct HtcRange {
    double lo = 333.33;
    double hi = 1000.0;
};

/// i.i.d. uniform (h_top, h_bottom) pairs in [lo, hi]^2.
std::vector<std::pair<double, double>> sample_htc_pairs(const HtcRange& range, int n, std::uint64_t seed);

/// Same, drawing from a caller-owned generator.
std::vector<std::pair<double, double>> sample_htc_pairs(const HtcRange& range, int n, std::mt19937_64& rng);

}  // namespace deepoheat
