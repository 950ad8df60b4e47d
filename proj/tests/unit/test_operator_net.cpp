#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "deepoheat/experiment.hpp"
#include "deepoheat/operator_net.hpp"
#include "temp_dir.hpp"

using namespace deepoheat;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelSpec small_spec(int branches = 1) {
    ModelSpec s;
    for (int b = 0; b < branches; ++b) s.branches.push_back(MlpSpec{4 + b, {6, 5}});
    s.fourier_count = 3;
    s.fourier_sigma = 1.5;
    s.trunk_widths = {7, 5};
    return s;
}

Mat random_coords(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Mat c(3, n);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
    return c;
}

Mat random_inputs(std::mt19937_64& rng, int rows, int cols) {
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

}  // namespace

TEST_CASE("fourier features at the origin") {
    std::mt19937_64 rng(1);
    const Mat b = random_inputs(rng, 4, 3);
    const Mat f = fourier_features(Mat::Zero(2, 3), b);
    REQUIRE(f.rows() == 2);
    REQUIRE(f.cols() == 8);
    CHECK(f.leftCols(4).cwiseAbs().maxCoeff() == 0.0);
    CHECK((f.rightCols(4).array() == 1.0).all());
}

TEST_CASE("fourier features at a quarter period") {
    Mat b(1, 3);
    b << 0.5, 0.25, 1.0;
    Mat y(1, 3);
    y << 0.1, 0.2, 0.15;  // b . y = 0.05 + 0.05 + 0.15 = 0.25
    const Mat f = fourier_features(y, b);
    CHECK_THAT(f(0, 0), WithinAbs(1.0, 1e-15));
    CHECK_THAT(f(0, 1), WithinAbs(0.0, 1e-15));
}

TEST_CASE("constant unit branch reduces the head to a trunk feature sum") {
    OperatorModel m = init_model(small_spec(), 3);
    auto& last = m.branches[0].layers.back();
    last.weight.setZero();
    last.bias.setOnes();
    m.head(0, 0) = 0.75;
    std::mt19937_64 rng(2);
    const Mat coords = random_coords(rng, 6);
    const Mat out = forward(m, {random_inputs(rng, 4, 2)}, coords);
    const Mat trunk = trunk_features(m, coords);
    for (int f = 0; f < 2; ++f) {
        for (int c = 0; c < 6; ++c) CHECK_THAT(out(f, c), WithinAbs(0.75 + trunk.col(c).sum(), 1e-13));
    }
}

TEST_CASE("a second branch of ones is the Hadamard identity") {
    OperatorModel two = init_model(small_spec(2), 4);
    auto& last = two.branches[1].layers.back();
    last.weight.setZero();
    last.bias.setOnes();
    OperatorModel one = two;
    one.spec.branches.pop_back();
    one.branches.pop_back();
    std::mt19937_64 rng(5);
    const Mat coords = random_coords(rng, 5);
    const Mat in0 = random_inputs(rng, 4, 3), in1 = random_inputs(rng, 5, 3);
    const Mat a = forward(two, {in0, in1}, coords);
    const Mat b = forward(one, {in0}, coords);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("reference network shapes") {
    const auto pm = experiment_setup(ExperimentKind::PowerMap2D, ExperimentScale::Paper).model;
    REQUIRE(pm.branches.size() == 1);
    CHECK(pm.branches[0].input == 441);
    CHECK(pm.branches[0].widths.size() == 9);
    CHECK(pm.trunk_widths.size() == 6);
    CHECK(pm.feature_width() == 128);
    CHECK(pm.fourier_count * 2 == 128);

    const auto htc = experiment_setup(ExperimentKind::HtcDual, ExperimentScale::Paper).model;
    REQUIRE(htc.branches.size() == 2);
    CHECK(htc.feature_width() == 50);
    CHECK(htc.branches[0].widths.size() == 5);
    CHECK(htc.branches[1].input == 1);

    const OperatorModel m = init_model(pm, 0);
    std::mt19937_64 rng(6);
    const Mat out = forward(m, {random_inputs(rng, 441, 2)}, random_coords(rng, 3));
    CHECK(out.rows() == 2);
    CHECK(out.cols() == 3);
}

TEST_CASE("initialization") {
    const ModelSpec spec = small_spec(2);
    CHECK(init_model(spec, 9) == init_model(spec, 9));
    CHECK_FALSE(init_model(spec, 9) == init_model(spec, 10));

    ModelSpec wide;
    wide.branches = {MlpSpec{300, {500}}};
    wide.fourier_count = 2000;
    wide.fourier_sigma = 3.0;
    wide.trunk_widths = {500};
    const OperatorModel m = init_model(wide, 1);
    const Mat& w = m.branches[0].layers[0].weight;
    const double std_w = std::sqrt(w.array().square().mean());
    CHECK_THAT(std_w, WithinRel(std::sqrt(2.0 / 800.0), 0.02));
    CHECK(m.branches[0].layers[0].bias.cwiseAbs().maxCoeff() == 0.0);
    const double std_b = std::sqrt(m.fourier.array().square().mean());
    CHECK_THAT(std_b, WithinRel(3.0, 0.03));
    CHECK(m.bias() == 0.0);
}

TEST_CASE("parameters are listed branches, trunk, then head bias") {
    ModelSpec spec = small_spec(2);
    const OperatorModel m = init_model(spec, 1);
    const auto names = m.parameter_names();
    REQUIRE(names.size() == m.parameters().size());
    CHECK(names.front() == "branch0.layer0.weight");
    CHECK(names[4] == "branch1.layer0.weight");
    CHECK(names[8] == "trunk.layer0.weight");
    CHECK(names.back() == "head.bias");
    // 2q = 6 inputs to the trunk's first dense layer.
    CHECK(m.trunk.layers[0].weight.cols() == 6);
    std::size_t count = 0;
    for (const Mat* p : m.parameters()) count += static_cast<std::size_t>(p->size());
    CHECK(m.parameter_count() == count);

    spec.head_bias = false;
    const OperatorModel nb = init_model(spec, 1);
    CHECK(nb.parameter_names().back() == "trunk.layer1.bias");
}

TEST_CASE("width mismatches are rejected") {
    ModelSpec s = small_spec();
    s.trunk_widths = {7, 4};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = small_spec();
    s.branches.clear();
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("identity coordinates without a fourier layer") {
    ModelSpec s = small_spec();
    s.fourier_count = 0;
    const OperatorModel m = init_model(s, 2);
    CHECK(m.trunk.layers[0].weight.cols() == 3);
    std::mt19937_64 rng(8);
    const Mat c = random_coords(rng, 4);
    const Mat t = trunk_features(m, c);
    CHECK((t - m.trunk.forward(c)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("paired evaluation and the cached predictor agree with forward") {
    const OperatorModel m = init_model(small_spec(2), 11);
    std::mt19937_64 rng(12);
    const Mat coords = random_coords(rng, 7);
    const Mat in0 = random_inputs(rng, 4, 3), in1 = random_inputs(rng, 5, 3);
    const Mat full = forward(m, {in0, in1}, coords);
    const std::vector<int> fn{0, 2, 1, 1, 0, 2, 2};
    const Mat paired = forward_paired(m, {in0, in1}, coords, fn);
    for (int c = 0; c < 7; ++c) CHECK_THAT(paired(0, c), WithinAbs(full(fn[c], c), 1e-13));

    const Predictor pred(m, coords);
    const Eigen::VectorXd v = pred.predict({in0.col(2), in1.col(2)});
    for (int c = 0; c < 7; ++c) CHECK_THAT(v[c], WithinAbs(full(2, c), 1e-13));
}

TEST_CASE("checkpoint round trip") {
    testing::TempDir dir("ckpt");
    OperatorModel m = init_model(small_spec(2), 13);
    m.head(0, 0) = -0.125;
    save_checkpoint(m, {{"experiment", "htc-dual"}, {"t_scale", "20"}}, dir / "m.bin");
    std::map<std::string, std::string> meta;
    const OperatorModel back = load_checkpoint(dir / "m.bin", &meta);
    CHECK(back == m);
    CHECK(meta.at("experiment") == "htc-dual");
    CHECK(meta.at("t_scale") == "20");

    {
        std::ofstream bad(dir / "bad.bin", std::ios::binary);
        bad << "NOTACKPT";
    }
    CHECK_THROWS(load_checkpoint(dir / "bad.bin"));
    CHECK_THROWS(load_checkpoint(dir / "missing.bin"));

    // Truncated file.
    std::ifstream in(dir / "m.bin", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(dir / "cut.bin", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS(load_checkpoint(dir / "cut.bin"));

    // Unsupported version.
    std::string v2 = bytes;
    v2[8] = 2;
    std::ofstream(dir / "v2.bin", std::ios::binary) << v2;
    CHECK_THROWS(load_checkpoint(dir / "v2.bin"));
}

TEST_CASE("model spec json round trip") {
    ModelSpec s = small_spec(2);
    s.head_bias = false;
    s.fourier_sigma = std::numbers::pi;
    CHECK(spec_from_json(spec_to_json(s)) == s);
}
