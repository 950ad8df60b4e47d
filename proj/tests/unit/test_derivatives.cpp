#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "deepoheat/derivatives.hpp"

using namespace deepoheat;
using Catch::Matchers::WithinAbs;

namespace {

Mat random_coords(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Mat c(3, n);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
    return c;
}

// One branch with a zero-weight output layer whose bias is beta; the branch
// output is then beta for every input.
OperatorModel fixture(int fourier, std::vector<int> trunk, const Mat& beta) {
    ModelSpec s;
    s.branches = {MlpSpec{1, {static_cast<int>(beta.rows())}}};
    s.fourier_count = fourier;
    s.fourier_sigma = 1.0;
    s.trunk_widths = std::move(trunk);
    OperatorModel m = init_model(s, 1);
    m.branches[0].layers[0].weight.setZero();
    m.branches[0].layers[0].bias = beta;
    return m;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("sinusoid fixture derivatives are exact") {
    // T = beta * sin(2 pi b . y) with a single linear trunk layer picking the sine.
    const double beta = 1.7;
    OperatorModel m = fixture(1, {1}, Mat::Constant(1, 1, beta));
    m.fourier << 0.3, -0.8, 0.45;
    m.trunk.layers[0].weight << 1.0, 0.0;
    m.trunk.layers[0].bias.setZero();
    std::mt19937_64 rng(1);
    const Mat y = random_coords(rng, 20);
    const DualBatch d = spatial_derivs(m, {Mat::Zero(1, 1)}, y);
    const double w = 2 * std::numbers::pi;
    for (int c = 0; c < 20; ++c) {
        const double u = w * (m.fourier.row(0) * y.col(c))(0, 0);
        CHECK_THAT(d.values[c], WithinAbs(beta * std::sin(u), 1e-10));
        for (int i = 0; i < 3; ++i) {
            const double bi = w * m.fourier(0, i);
            CHECK_THAT(d.d[i][c], WithinAbs(beta * bi * std::cos(u), 1e-10));
            CHECK_THAT(d.dd[i][c], WithinAbs(-beta * bi * bi * std::sin(u), 1e-10));
        }
    }
}

TEST_CASE("swish fixture derivatives are exact") {
    // T = beta * s(w . y + c) through identity coordinates.
    const double beta = -0.6;
    OperatorModel m = fixture(0, {1, 1}, Mat::Constant(1, 1, beta));
    m.trunk.layers[0].weight << 1.3, -0.4, 2.1;
    m.trunk.layers[0].bias << 0.2;
    m.trunk.layers[1].weight << 1.0;
    m.trunk.layers[1].bias << 0.0;
    m.head(0, 0) = 0.9;
    std::mt19937_64 rng(2);
    const Mat y = random_coords(rng, 20);
    const DualBatch d = spatial_derivs(m, {Mat::Zero(1, 1)}, y);
    for (int c = 0; c < 20; ++c) {
        const double u = (m.trunk.layers[0].weight * y.col(c))(0, 0) + 0.2;
        const double s = sig(u);
        const double s1 = s + u * s * (1 - s);
        const double s2 = s * (1 - s) * (2 + u * (1 - 2 * s));
        CHECK_THAT(d.values[c], WithinAbs(0.9 + beta * u * s, 1e-12));
        for (int i = 0; i < 3; ++i) {
            const double wi = m.trunk.layers[0].weight(0, i);
            CHECK_THAT(d.d[i][c], WithinAbs(beta * s1 * wi, 1e-12));
            CHECK_THAT(d.dd[i][c], WithinAbs(beta * s2 * wi * wi, 1e-12));
        }
    }
}

TEST_CASE("derivatives of a summed head are the sum of the parts") {
    std::mt19937_64 rng(3);
    const Mat y = random_coords(rng, 10);
    OperatorModel both = fixture(4, {8, 8, 2}, (Mat(2, 1) << 1.0, 1.0).finished());
    OperatorModel first = both, second = both;
    first.branches[0].layers[0].bias << 1.0, 0.0;
    second.branches[0].layers[0].bias << 0.0, 1.0;
    const DualBatch a = spatial_derivs(both, {Mat::Zero(1, 1)}, y);
    const DualBatch b = spatial_derivs(first, {Mat::Zero(1, 1)}, y);
    const DualBatch c = spatial_derivs(second, {Mat::Zero(1, 1)}, y);
    CHECK((a.values - b.values - c.values).cwiseAbs().maxCoeff() < 1e-12);
    for (int i = 0; i < 3; ++i) {
        CHECK((a.d[i] - b.d[i] - c.d[i]).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((a.dd[i] - b.dd[i] - c.dd[i]).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("spatial derivatives match finite differences on a random model") {
    ModelSpec s;
    s.branches = {MlpSpec{25, {32, 32, 16}}};
    s.fourier_count = 8;
    s.fourier_sigma = 2 * std::numbers::pi;
    s.trunk_widths = {32, 32, 16};
    const OperatorModel m = init_model(s, 4);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Mat enc(25, 1);
    for (Eigen::Index i = 0; i < 25; ++i) enc(i) = u(rng);
    const Mat y = random_coords(rng, 10);
    const DualBatch d = spatial_derivs(m, {enc}, y);
    const Mat base = forward(m, {enc}, y);
    CHECK((base.row(0).transpose() - d.values).cwiseAbs().maxCoeff() < 1e-12);

    // Richardson-extrapolated central differences.
    auto value_at = [&](const Mat& pts) { return Eigen::VectorXd(forward(m, {enc}, pts).row(0).transpose()); };
    for (int i = 0; i < 3; ++i) {
        auto diffs = [&](double h) {
            Mat p = y, q = y;
            p.row(i).array() += h;
            q.row(i).array() -= h;
            const Eigen::VectorXd fp = value_at(p), fq = value_at(q), f0 = value_at(y);
            return std::pair<Eigen::VectorXd, Eigen::VectorXd>((fp - fq) / (2 * h), (fp - 2 * f0 + fq) / (h * h));
        };
        const auto [d1, dd1] = diffs(2e-4);
        const auto [d2, dd2] = diffs(1e-4);
        const Eigen::VectorXd first = (4 * d2 - d1) / 3, second = (4 * dd2 - dd1) / 3;
        const double s1 = std::max(1.0, d.d[i].cwiseAbs().maxCoeff());
        const double s2 = std::max(1.0, d.dd[i].cwiseAbs().maxCoeff());
        CHECK((first - d.d[i]).cwiseAbs().maxCoeff() / s1 < 1e-7);
        CHECK((second - d.dd[i]).cwiseAbs().maxCoeff() / s2 < 1e-5);
    }
}

TEST_CASE("parameter gradient of half the squared norm is the parameters") {
    ModelSpec s;
    s.branches = {MlpSpec{2, {3}}};
    s.fourier_count = 2;
    s.trunk_widths = {3};
    OperatorModel m = init_model(s, 6);
    m.head(0, 0) = 0.4;
    const LossAndGradient lg = loss_param_grad(m, [](ad::Tape&, const ParamVars& p) {
        ad::Var total = ad::sum(ad::square(p.vars[0]));
        for (std::size_t i = 1; i < p.vars.size(); ++i) total = total + ad::sum(ad::square(p.vars[i]));
        return 0.5 * total;
    });
    const auto params = m.parameters();
    REQUIRE(lg.gradient.grads.size() == params.size());
    double expected = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK((lg.gradient.grads[i] - *params[i]).cwiseAbs().maxCoeff() < 1e-15);
        expected += 0.5 * params[i]->squaredNorm();
    }
    CHECK_THAT(lg.loss, WithinAbs(expected, 1e-12));
}

TEST_CASE("a loss that ignores the parameters has zero gradient") {
    ModelSpec s;
    s.branches = {MlpSpec{2, {3}}};
    s.trunk_widths = {3};
    const OperatorModel m = init_model(s, 7);
    const LossAndGradient lg = loss_param_grad(m, [](ad::Tape& t, const ParamVars&) {
        return t.constant(Mat::Constant(1, 1, 2.0));
    });
    CHECK(lg.loss == 2.0);
    for (const auto& g : lg.gradient.grads) CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unpack_dual splits the blocks") {
    Mat row(1, 14);
    for (int i = 0; i < 14; ++i) row(0, i) = i;
    const DualBatch d = unpack_dual(row);
    REQUIRE(d.size() == 2);
    CHECK(d.values[1] == 1.0);
    CHECK(d.d[0][0] == 2.0);
    CHECK(d.d[2][1] == 7.0);
    CHECK(d.dd[0][0] == 8.0);
    CHECK(d.dd[2][1] == 13.0);
    CHECK_THROWS(unpack_dual(Mat::Zero(1, 5)));
}

TEST_CASE("a non-finite trunk layer is named") {
    ModelSpec s;
    s.branches = {MlpSpec{1, {2}}};
    s.fourier_count = 2;
    s.trunk_widths = {4, 2};
    OperatorModel m = init_model(s, 8);
    m.trunk.layers[1].bias(0, 0) = std::numeric_limits<double>::infinity();
    try {
        spatial_derivs(m, {Mat::Ones(1, 1)}, Mat::Constant(3, 2, 0.5));
        FAIL("expected NonFiniteError");
    } catch (const ad::NonFiniteError& e) {
        CHECK(std::string(e.what()).find("trunk layer 2") != std::string::npos);
    }
}
