#include "deepoheat/grf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace deepoheat {

void GrfSpec::validate() const {
    if (m < 1) throw GrfError("grid size m must be >= 1");
    if (!(length_scale > 0.0) || !std::isfinite(length_scale)) throw GrfError("length scale must be > 0");
    if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw GrfError("jitter must be >= 0");
}

std::pair<double, double> grf_point(int m, int p) {
    if (m == 1) return {0.0, 0.0};
    const int i = p % m;
    const int j = p / m;
    return {static_cast<double>(i) / (m - 1), static_cast<double>(j) / (m - 1)};
}

Eigen::MatrixXd rbf_covariance(const GrfSpec& spec) {
    spec.validate();
    const int n = spec.m * spec.m;
    const double inv = 1.0 / (2.0 * spec.length_scale * spec.length_scale);
    Eigen::MatrixXd k(n, n);
    for (int q = 0; q < n; ++q) {
        const auto [xq, yq] = grf_point(spec.m, q);
        for (int p = q; p < n; ++p) {
            const auto [xp, yp] = grf_point(spec.m, p);
            const double d2 = (xp - xq) * (xp - xq) + (yp - yq) * (yp - yq);
            const double v = std::exp(-d2 * inv);
            k(p, q) = v;
            k(q, p) = v;
        }
        k(q, q) += spec.jitter;
    }
    return k;
}

GrfSampler::GrfSampler(const GrfSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {
    Eigen::LLT<Eigen::MatrixXd> llt(rbf_covariance(spec_));
    if (llt.info() != Eigen::Success) {
        throw GrfError("Cholesky of the covariance failed (m=" + std::to_string(spec_.m) + ", length scale " +
                       format_double(spec_.length_scale) + ", jitter " + format_double(spec_.jitter) +
                       "); raise the jitter");
    }
    lower_ = llt.matrixL();
}

Grid2D GrfSampler::sample() { return draw(rng_, normal_); }

Grid2D GrfSampler::sample(std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    return draw(rng, normal);
}

Grid2D GrfSampler::draw(std::mt19937_64& rng, std::normal_distribution<double>& normal) const {
    const int n = spec_.m * spec_.m;
    Eigen::VectorXd z(n);
    for (int p = 0; p < n; ++p) z[p] = normal(rng);
    const Eigen::VectorXd field = lower_.triangularView<Eigen::Lower>() * z;
    Grid2D out(spec_.m, spec_.m);
    for (int p = 0; p < n; ++p) out.data[p] = field[p];
    return out;
}

std::vector<Grid2D> GrfSampler::sample(int n) {
    std::vector<Grid2D> out;
    out.reserve(std::max(n, 0));
    for (int s = 0; s < n; ++s) out.push_back(sample());
    return out;
}

std::vector<Grid2D> sample_grf(const GrfSpec& spec, int n, std::uint64_t seed) {
    GrfSampler sampler(spec, seed);
    return sampler.sample(n);
}

Grid2D grf_to_power(const Grid2D& sample, double p_max, PowerNormalization mode) {
    for (double v : sample.data) {
        if (!std::isfinite(v)) throw GrfError("sample contains a non-finite value");
    }
    if (mode == PowerNormalization::Raw || sample.empty()) return sample;
    const auto [lo_it, hi_it] = std::minmax_element(sample.data.begin(), sample.data.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    Grid2D out(sample.rows, sample.cols);
    if (hi == lo) {
        std::fill(out.data.begin(), out.data.end(), 0.5 * p_max);
        return out;
    }
    const double scale = p_max / (hi - lo);
    for (std::size_t p = 0; p < sample.size(); ++p) {
        out.data[p] = sample.data[p] == hi ? p_max : (sample.data[p] - lo) * scale;
    }
    return out;
}

std::vector<std::pair<double, double>> sample_htc_pairs(const HtcRange& range, int n, std::mt19937_64& rng) {
    if (!(range.lo <= range.hi)) throw GrfError("HTC range needs lo <= hi");
    std::vector<std::pair<double, double>> out;
    out.reserve(std::max(n, 0));
    if (range.lo == range.hi) {
        out.assign(std::max(n, 0), {range.lo, range.lo});
        return out;
    }
    std::uniform_real_distribution<double> u(range.lo, range.hi);
    for (int s = 0; s < n; ++s) {
        const double top = u(rng);
        const double bottom = u(rng);
        out.emplace_back(top, bottom);
    }
    return out;
}

std::vector<std::pair<double, double>> sample_htc_pairs(const HtcRange& range, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_htc_pairs(range, n, rng);
}

}  // namespace deepoheat
