#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <random>

#include "deepoheat/autodiff.hpp"

using namespace deepoheat::ad;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

double evaluate(const Builder& f, const std::vector<Mat>& inputs) {
    Tape t;
    std::vector<Var> leaves;
    for (const auto& m : inputs) leaves.push_back(t.parameter(m));
    return f(t, leaves).value()(0, 0);
}

// Directional central difference against the reverse sweep.
void check_gradient(const Builder& f, const std::vector<Mat>& inputs, std::uint64_t seed, double tol = 1e-6) {
    Tape t;
    std::vector<Var> leaves;
    for (const auto& m : inputs) leaves.push_back(t.parameter(m));
    Var out = f(t, leaves);
    REQUIRE(out.rows() == 1);
    REQUIRE(out.cols() == 1);
    t.backward(out);

    std::mt19937_64 rng(seed);
    for (int trial = 0; trial < 3; ++trial) {
        std::vector<Mat> dir, plus, minus;
        double analytic = 0.0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            dir.push_back(random_mat(rng, inputs[i].rows(), inputs[i].cols()));
            analytic += t.grad(leaves[i]).cwiseProduct(dir.back()).sum();
        }
        const double eps = 1e-6;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            plus.push_back(inputs[i] + eps * dir[i]);
            minus.push_back(inputs[i] - eps * dir[i]);
        }
        const double numeric = (evaluate(f, plus) - evaluate(f, minus)) / (2 * eps);
        INFO("analytic " << analytic << " numeric " << numeric);
        CHECK(std::abs(analytic - numeric) <= tol * std::max(1.0, std::abs(numeric)));
    }
}

double fd_richardson(const std::function<double(double)>& f, double x, int order) {
    auto d = [&](double h) {
        if (order == 1) return (f(x + h) - f(x - h)) / (2 * h);
        return (f(x + h) - 2 * f(x) + f(x - h)) / (h * h);
    };
    const double h = 1e-2;
    return (4 * d(h / 2) - d(h)) / 3;
}

// Packed dual value of a random function of three coordinates, so that
// blocks are consistent: any matrix works for the tape, but a consistent one
// keeps the check meaningful.
Mat random_dual(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index n) {
    return random_mat(rng, rows, kDualBlocks * n, 0.7);
}

}  // namespace

TEST_CASE("swish values and derivatives at zero") {
    CHECK(swish_derivative(0.0, 0) == 0.0);
    CHECK_THAT(swish_derivative(0.0, 1), WithinAbs(0.5, 1e-15));
    CHECK_THAT(swish_derivative(0.0, 2), WithinAbs(0.5, 1e-15));
    const SwishDerivs s = swish_derivs(0.0);
    CHECK(s.value == 0.0);
    CHECK_THAT(s.first, WithinAbs(0.5, 1e-15));
    CHECK_THAT(s.second, WithinAbs(0.5, 1e-15));
}

TEST_CASE("swish asymptote") {
    CHECK_THAT(swish_derivative(30.0, 0), WithinAbs(30.0, 1e-9));
    CHECK_THAT(swish_derivative(30.0, 1), WithinAbs(1.0, 1e-9));
    CHECK_THAT(swish_derivative(30.0, 2), WithinAbs(0.0, 1e-9));
    CHECK_THAT(swish_derivative(-30.0, 0), WithinAbs(0.0, 1e-9));
    CHECK(std::isfinite(swish_derivative(-800.0, 3)));
    CHECK(std::isfinite(swish_derivative(800.0, 3)));
    CHECK(sigmoid(-800.0) == 0.0);
    CHECK(sigmoid(800.0) == 1.0);
}

TEST_CASE("swish derivatives match finite differences of x sigma(x)") {
    auto f = [](double x) { return x / (1.0 + std::exp(-x)); };
    for (double x : {1.0, -2.3, 0.4, 4.0}) {
        CHECK_THAT(swish_derivative(x, 1), WithinAbs(fd_richardson(f, x, 1), 1e-8));
        CHECK_THAT(swish_derivative(x, 2), WithinAbs(fd_richardson(f, x, 2), 1e-8));
        auto f2 = [](double y) { return swish_derivative(y, 2); };
        CHECK_THAT(swish_derivative(x, 3), WithinAbs(fd_richardson(f2, x, 1), 1e-8));
    }
}

TEST_CASE("quadratic loss has the parameters as gradient") {
    Tape t;
    std::mt19937_64 rng(1);
    const Mat a = random_mat(rng, 3, 4), b = random_mat(rng, 2, 1);
    Var va = t.parameter(a), vb = t.parameter(b);
    Var loss = 0.5 * (sum(square(va)) + sum(square(vb)));
    t.backward(loss);
    CHECK((t.grad(va) - a).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((t.grad(vb) - b).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("constant loss has zero gradient") {
    Tape t;
    Var p = t.parameter(Mat::Ones(2, 2));
    Var c = t.constant(Mat::Constant(1, 1, 3.0));
    Var loss = c + 0.0 * sum(p);
    t.backward(loss);
    CHECK(t.grad(p).cwiseAbs().maxCoeff() == 0.0);
    // An unused parameter gets a zero matrix of its own shape.
    Tape u;
    Var q = u.parameter(Mat::Ones(3, 2));
    Var r = u.parameter(Mat::Ones(1, 1));
    u.backward(sum(r));
    CHECK(u.grad(q).rows() == 3);
    CHECK(u.grad(q).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("elementwise ops") {
    std::mt19937_64 rng(2);
    const std::vector<Mat> in{random_mat(rng, 3, 4), random_mat(rng, 3, 4)};
    const Mat c = random_mat(rng, 3, 4);
    check_gradient([](Tape&, const std::vector<Var>& v) { return sum(v[0] + v[1]); }, in, 1);
    check_gradient([](Tape&, const std::vector<Var>& v) { return sum(hadamard(v[0] - v[1], v[0])); }, in, 2);
    check_gradient([&](Tape&, const std::vector<Var>& v) { return mean(square(add_const(v[0], c))); }, in, 3);
    check_gradient([](Tape&, const std::vector<Var>& v) { return sum(hadamard(swish(v[0]), v[1])); }, in, 4);
    check_gradient([](Tape&, const std::vector<Var>& v) { return sum(hadamard(swish(v[0], 1), v[1])); }, in, 5);
    check_gradient([](Tape&, const std::vector<Var>& v) { return sum(hadamard(swish(v[0], 2), v[1])); }, in, 6);
    check_gradient([](Tape&, const std::vector<Var>& v) { return sum(-2.5 * v[0]); }, in, 7);
}

TEST_CASE("matrix and layout ops") {
    std::mt19937_64 rng(3);
    const std::vector<Mat> in{random_mat(rng, 3, 4), random_mat(rng, 4, 5), random_mat(rng, 3, 1),
                              random_mat(rng, 1, 1)};
    check_gradient(
        [](Tape&, const std::vector<Var>& v) { return sum(square(add_bias(matmul(v[0], v[1]), v[2]))); }, in, 1);
    check_gradient([](Tape&, const std::vector<Var>& v) { return sum(square(transpose(v[1]))); }, in, 2);
    check_gradient([](Tape&, const std::vector<Var>& v) { return sum(square(add_scalar(v[0], v[3]))); }, in, 3);
    check_gradient(
        [](Tape&, const std::vector<Var>& v) { return sum(square(gather_cols(v[0], {3, 0, 0, 2, 3}))); }, in, 4);
    check_gradient([](Tape&, const std::vector<Var>& v) { return sum(square(col_sum(v[1]))); }, in, 5);
    check_gradient([](Tape&, const std::vector<Var>& v) { return sum(square(cols(v[1], 1, 3))); }, in, 6);
    check_gradient(
        [](Tape&, const std::vector<Var>& v) {
            return sum(square(concat_cols({v[0], v[2], cols(v[0], 2, 1)})));
        },
        in, 7);
}

TEST_CASE("layout op values") {
    Tape t;
    Mat a(2, 3);
    a << 1, 2, 3, 4, 5, 6;
    Var va = t.constant(a);
    CHECK(gather_cols(va, {2, 2, 0}).value() == (Mat(2, 3) << 3, 3, 1, 6, 6, 4).finished());
    CHECK(col_sum(va).value() == (Mat(1, 3) << 5, 7, 9).finished());
    CHECK(cols(va, 1, 2).value() == (Mat(2, 2) << 2, 3, 5, 6).finished());
    CHECK(concat_cols({va, cols(va, 0, 1)}).value().cols() == 4);
    CHECK(mean(va).value()(0, 0) == 3.5);
    CHECK_THROWS(matmul(va, va));
}

TEST_CASE("dual ops match the chain rule") {
    std::mt19937_64 rng(4);
    const Eigen::Index n = 3, r = 2;
    Tape t;
    const Mat x = random_dual(rng, r, n);
    Var vx = t.constant(x);
    const Mat out = dual_swish(vx).value();
    for (Eigen::Index row = 0; row < r; ++row) {
        for (Eigen::Index c = 0; c < n; ++c) {
            const double a = x(row, c);
            const double s1 = swish_derivative(a, 1), s2 = swish_derivative(a, 2);
            CHECK_THAT(out(row, c), WithinAbs(swish_derivative(a, 0), 1e-15));
            for (int i = 0; i < 3; ++i) {
                const double ai = x(row, (1 + i) * n + c), aai = x(row, (4 + i) * n + c);
                CHECK_THAT(out(row, (1 + i) * n + c), WithinAbs(s1 * ai, 1e-14));
                CHECK_THAT(out(row, (4 + i) * n + c), WithinAbs(s2 * ai * ai + s1 * aai, 1e-14));
            }
        }
    }
    const Mat b = random_mat(rng, r, 1);
    const Mat biased = dual_bias(vx, t.constant(b)).value();
    CHECK((biased.leftCols(n) - (x.leftCols(n).colwise() + b.col(0))).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(biased.rightCols(6 * n) == x.rightCols(6 * n));
}

TEST_CASE("dual ops gradients") {
    std::mt19937_64 rng(5);
    const std::vector<Mat> in{random_dual(rng, 3, 4), random_mat(rng, 3, 1), random_mat(rng, 2, 3)};
    check_gradient([](Tape&, const std::vector<Var>& v) { return sum(square(dual_swish(v[0]))); }, in, 1);
    check_gradient(
        [](Tape&, const std::vector<Var>& v) {
            return mean(square(dual_swish(matmul(v[2], dual_swish(dual_bias(v[0], v[1]))))));
        },
        in, 2);
}

TEST_CASE("non-finite values are reported") {
    Mat m = Mat::Zero(2, 2);
    CHECK_NOTHROW(check_finite(m, "fine"));
    m(1, 0) = std::nan("");
    try {
        check_finite(m, "trunk layer 2");
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(std::string(e.what()).find("trunk layer 2") != std::string::npos);
    }
}
