#include "deepoheat/operator_net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

namespace deepoheat {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr char kMagic[8] = {'D', 'O', 'H', 'C', 'K', 'P', 'T', '1'};

Mat swish_values(const Mat& x) {
    return x.unaryExpr([](double v) { return ad::swish_derivative(v, 0); });
}

/// Product over branches, each entry multiplied in ascending order so the
/// result does not depend on branch order.
Mat sorted_product(const std::vector<Mat>& outs) {
    Mat out = outs.front();
    if (outs.size() == 1) return out;
    std::vector<double> vals(outs.size());
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            for (std::size_t i = 0; i < outs.size(); ++i) vals[i] = outs[i](r, c);
            std::sort(vals.begin(), vals.end());
            double prod = vals[0];
            for (std::size_t i = 1; i < vals.size(); ++i) prod *= vals[i];
            out(r, c) = prod;
        }
    }
    return out;
}

void check_encoded(const OperatorModel& model, const std::vector<Mat>& encoded) {
    if (encoded.size() != model.branches.size()) {
        throw std::invalid_argument("expected " + std::to_string(model.branches.size()) + " encoded inputs, got " +
                                    std::to_string(encoded.size()));
    }
    for (std::size_t i = 0; i < encoded.size(); ++i) {
        if (encoded[i].rows() != model.spec.branches[i].input) {
            throw std::invalid_argument("branch " + std::to_string(i) + " expects width " +
                                        std::to_string(model.spec.branches[i].input) + ", got " +
                                        std::to_string(encoded[i].rows()));
        }
        if (encoded[i].cols() != encoded.front().cols()) {
            throw std::invalid_argument("encoded inputs disagree on the number of functions");
        }
    }
}

void check_coords(const Mat& coords) {
    if (coords.rows() != 3) throw std::invalid_argument("coordinates must be 3 x N");
}

Mlp init_mlp(int input, const std::vector<int>& widths, std::mt19937_64& rng) {
    Mlp mlp;
    int fan_in = input;
    for (int w : widths) {
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (fan_in + w)));
        Dense layer;
        layer.weight.resize(w, fan_in);
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
            for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = normal(rng);
        }
        layer.bias = Mat::Zero(w, 1);
        mlp.layers.push_back(std::move(layer));
        fan_in = w;
    }
    return mlp;
}

}  // namespace

int ModelSpec::feature_width() const {
    return trunk_widths.empty() ? trunk_input() : trunk_widths.back();
}

void ModelSpec::validate() const {
    if (branches.empty()) throw std::invalid_argument("model needs at least one branch");
    if (trunk_widths.empty()) throw std::invalid_argument("trunk needs at least one layer");
    if (fourier_count < 0) throw std::invalid_argument("fourier count must be >= 0");
    if (!(fourier_sigma > 0.0)) throw std::invalid_argument("fourier sigma must be > 0");
    auto positive = [](const std::vector<int>& w, const std::string& what) {
        for (int x : w) {
            if (x <= 0) throw std::invalid_argument(what + " widths must be positive");
        }
    };
    positive(trunk_widths, "trunk");
    const int p = feature_width();
    for (std::size_t i = 0; i < branches.size(); ++i) {
        const std::string name = "branch " + std::to_string(i);
        if (branches[i].input <= 0) throw std::invalid_argument(name + " input width must be positive");
        if (branches[i].widths.empty()) throw std::invalid_argument(name + " needs at least one layer");
        positive(branches[i].widths, name);
        if (branches[i].output() != p) {
            throw std::invalid_argument(name + " output width " + std::to_string(branches[i].output()) +
                                        " differs from trunk output width " + std::to_string(p));
        }
    }
}

Mat Mlp::forward(const Mat& input) const {
    Mat x = input;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Mat y = layers[l].weight * x;
        y.colwise() += layers[l].bias.col(0);
        x = l + 1 < layers.size() ? swish_values(y) : std::move(y);
    }
    return x;
}

std::vector<Mat*> OperatorModel::parameters() {
    std::vector<Mat*> out;
    for (Mlp& b : branches) {
        for (Dense& d : b.layers) {
            out.push_back(&d.weight);
            out.push_back(&d.bias);
        }
    }
    for (Dense& d : trunk.layers) {
        out.push_back(&d.weight);
        out.push_back(&d.bias);
    }
    if (spec.head_bias) out.push_back(&head);
    return out;
}

std::vector<const Mat*> OperatorModel::parameters() const {
    auto* self = const_cast<OperatorModel*>(this);
    std::vector<const Mat*> out;
    for (Mat* m : self->parameters()) out.push_back(m);
    return out;
}

std::vector<std::string> OperatorModel::parameter_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < branches.size(); ++i) {
        for (std::size_t l = 0; l < branches[i].layers.size(); ++l) {
            const std::string base = "branch" + std::to_string(i) + ".layer" + std::to_string(l);
            out.push_back(base + ".weight");
            out.push_back(base + ".bias");
        }
    }
    for (std::size_t l = 0; l < trunk.layers.size(); ++l) {
        const std::string base = "trunk.layer" + std::to_string(l);
        out.push_back(base + ".weight");
        out.push_back(base + ".bias");
    }
    if (spec.head_bias) out.push_back("head.bias");
    return out;
}

std::size_t OperatorModel::parameter_count() const {
    std::size_t n = 0;
    for (const Mat* m : parameters()) n += static_cast<std::size_t>(m->size());
    return n;
}

bool OperatorModel::operator==(const OperatorModel& other) const {
    if (!(spec == other.spec) || fourier != other.fourier) return false;
    auto a = parameters();
    auto b = other.parameters();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (*a[i] != *b[i]) return false;
    }
    return head == other.head;
}

OperatorModel init_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    OperatorModel model;
    model.spec = spec;
    model.fourier.resize(spec.fourier_count, 3);
    std::normal_distribution<double> normal(0.0, spec.fourier_sigma);
    for (Eigen::Index c = 0; c < 3; ++c) {
        for (Eigen::Index r = 0; r < model.fourier.rows(); ++r) model.fourier(r, c) = normal(rng);
    }
    for (const MlpSpec& b : spec.branches) model.branches.push_back(init_mlp(b.input, b.widths, rng));
    model.trunk = init_mlp(spec.trunk_input(), spec.trunk_widths, rng);
    model.head = Mat::Zero(1, 1);
    return model;
}

Mat fourier_features(const Mat& coords, const Mat& b) {
    if (coords.cols() != 3) throw std::invalid_argument("fourier_features: coordinates must be n x 3");
    const Mat z = kTwoPi * coords * b.transpose();
    Mat out(coords.rows(), 2 * b.rows());
    out.leftCols(b.rows()) = z.array().sin().matrix();
    out.rightCols(b.rows()) = z.array().cos().matrix();
    return out;
}

Mat branch_features(const OperatorModel& model, const std::vector<Mat>& encoded) {
    check_encoded(model, encoded);
    std::vector<Mat> outs;
    for (std::size_t i = 0; i < encoded.size(); ++i) outs.push_back(model.branches[i].forward(encoded[i]));
    return sorted_product(outs);
}

Mat trunk_features(const OperatorModel& model, const Mat& coords) {
    check_coords(coords);
    if (model.spec.fourier_count == 0) return model.trunk.forward(coords);
    return model.trunk.forward(fourier_features(coords.transpose(), model.fourier).transpose());
}

Mat forward(const OperatorModel& model, const std::vector<Mat>& encoded, const Mat& coords) {
    const Mat beta = branch_features(model, encoded);
    const Mat t = trunk_features(model, coords);
    Mat out = beta.transpose() * t;
    out.array() += model.bias();
    return out;
}

Mat forward_paired(const OperatorModel& model, const std::vector<Mat>& encoded, const Mat& coords,
                   const std::vector<int>& point_function) {
    if (static_cast<Eigen::Index>(point_function.size()) != coords.cols()) {
        throw std::invalid_argument("forward_paired: one function index per point required");
    }
    const Mat beta = branch_features(model, encoded);
    const Mat t = trunk_features(model, coords);
    Mat out(1, coords.cols());
    for (Eigen::Index c = 0; c < coords.cols(); ++c) {
        const int f = point_function[c];
        if (f < 0 || f >= beta.cols()) throw std::out_of_range("forward_paired: function index out of range");
        out(0, c) = beta.col(f).dot(t.col(c)) + model.bias();
    }
    return out;
}

Predictor::Predictor(const OperatorModel& model, const Mat& coords)
    : model_(&model), trunk_(trunk_features(model, coords)) {}

Eigen::VectorXd Predictor::predict(const std::vector<Mat>& encoded) const {
    const Mat beta = branch_features(*model_, encoded);
    if (beta.cols() != 1) throw std::invalid_argument("Predictor::predict takes one function per branch");
    Eigen::VectorXd out = trunk_.transpose() * beta.col(0);
    out.array() += model_->bias();
    return out;
}

ParamVars register_parameters(ad::Tape& tape, const OperatorModel& model) {
    ParamVars pv;
    for (const Mat* m : model.parameters()) pv.vars.push_back(tape.parameter(*m));
    return pv;
}

namespace {

struct LayerVars {
    ad::Var weight;
    ad::Var bias;
};

/// Parameter variables of one MLP: branches first, then the trunk.
std::vector<LayerVars> mlp_vars(const OperatorModel& model, const ParamVars& params, int branch) {
    std::size_t offset = 0;
    const int limit = branch < 0 ? static_cast<int>(model.branches.size()) : branch;
    for (int i = 0; i < limit; ++i) offset += 2 * model.branches[i].layers.size();
    const Mlp& mlp = branch < 0 ? model.trunk : model.branches[branch];
    std::vector<LayerVars> out;
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        out.push_back({params.vars.at(offset + 2 * l), params.vars.at(offset + 2 * l + 1)});
    }
    return out;
}

ad::Var add_head_bias(const OperatorModel& model, const ParamVars& params, ad::Var packed) {
    if (!model.spec.head_bias) return packed;
    const Eigen::Index w = packed.cols() / ad::kDualBlocks;
    ad::Var value = ad::add_scalar(ad::cols(packed, 0, w), params.vars.back());
    return ad::concat_cols({value, ad::cols(packed, w, packed.cols() - w)});
}

}  // namespace

ad::Var branch_product(ad::Tape& tape, const OperatorModel& model, const ParamVars& params,
                       const std::vector<Mat>& encoded) {
    check_encoded(model, encoded);
    ad::Var product{};
    for (std::size_t i = 0; i < encoded.size(); ++i) {
        auto layers = mlp_vars(model, params, static_cast<int>(i));
        ad::Var x = tape.constant(encoded[i]);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            x = ad::add_bias(ad::matmul(layers[l].weight, x), layers[l].bias);
            if (l + 1 < layers.size()) x = ad::swish(x);
        }
        product = i == 0 ? x : ad::hadamard(product, x);
    }
    return product;
}

Mat fourier_dual(const Mat& coords, const Mat& b) {
    check_coords(coords);
    const Eigen::Index n = coords.cols();
    if (b.rows() == 0) {
        Mat out = Mat::Zero(3, ad::kDualBlocks * n);
        out.leftCols(n) = coords;
        for (int i = 0; i < 3; ++i) out.block(i, (1 + i) * n, 1, n).setOnes();
        return out;
    }
    const Eigen::Index q = b.rows();
    const Mat z = kTwoPi * b * coords;
    const Mat s = z.array().sin().matrix();
    const Mat c = z.array().cos().matrix();
    Mat out(2 * q, ad::kDualBlocks * n);
    out.block(0, 0, q, n) = s;
    out.block(q, 0, q, n) = c;
    for (int i = 0; i < 3; ++i) {
        const Eigen::VectorXd dz = kTwoPi * b.col(i);
        const Eigen::VectorXd dz2 = dz.array().square();
        out.block(0, (1 + i) * n, q, n) = dz.asDiagonal() * c;
        out.block(q, (1 + i) * n, q, n) = -(dz.asDiagonal() * s);
        out.block(0, (4 + i) * n, q, n) = -(dz2.asDiagonal() * s);
        out.block(q, (4 + i) * n, q, n) = -(dz2.asDiagonal() * c);
    }
    return out;
}

ad::Var trunk_dual(ad::Tape& tape, const OperatorModel& model, const ParamVars& params, const Mat& coords) {
    ad::Var x = tape.constant(fourier_dual(coords, model.fourier));
    ad::check_finite(x.value(), "trunk layer 0 (fourier features)");
    auto layers = mlp_vars(model, params, -1);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        x = ad::dual_bias(ad::matmul(layers[l].weight, x), layers[l].bias);
        if (l + 1 < layers.size()) x = ad::dual_swish(x);
        ad::check_finite(x.value(), "trunk layer " + std::to_string(l + 1));
    }
    return x;
}

ad::Var head_cartesian(const OperatorModel& model, const ParamVars& params, ad::Var product, ad::Var trunk) {
    return add_head_bias(model, params, ad::matmul(ad::transpose(product), trunk));
}

ad::Var head_paired(const OperatorModel& model, const ParamVars& params, ad::Var product, ad::Var trunk,
                    const std::vector<int>& point_function) {
    const Eigen::Index n = trunk.cols() / ad::kDualBlocks;
    if (static_cast<Eigen::Index>(point_function.size()) != n) {
        throw std::invalid_argument("head_paired: one function index per point required");
    }
    std::vector<int> idx;
    idx.reserve(trunk.cols());
    for (int b = 0; b < ad::kDualBlocks; ++b) idx.insert(idx.end(), point_function.begin(), point_function.end());
    ad::Var spread = ad::gather_cols(product, idx);
    return add_head_bias(model, params, ad::col_sum(ad::hadamard(spread, trunk)));
}

std::string spec_to_json(const ModelSpec& spec) {
    nlohmann::json j;
    j["fourier_count"] = spec.fourier_count;
    j["fourier_sigma"] = spec.fourier_sigma;
    j["trunk_widths"] = spec.trunk_widths;
    j["head_bias"] = spec.head_bias;
    j["branches"] = nlohmann::json::array();
    for (const MlpSpec& b : spec.branches) j["branches"].push_back({{"input", b.input}, {"widths", b.widths}});
    return j.dump();
}

ModelSpec spec_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    ModelSpec spec;
    spec.fourier_count = j.at("fourier_count").get<int>();
    spec.fourier_sigma = j.at("fourier_sigma").get<double>();
    spec.trunk_widths = j.at("trunk_widths").get<std::vector<int>>();
    spec.head_bias = j.at("head_bias").get<bool>();
    for (const auto& b : j.at("branches")) {
        spec.branches.push_back({b.at("input").get<int>(), b.at("widths").get<std::vector<int>>()});
    }
    spec.validate();
    return spec;
}

namespace {

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint truncated while reading " + what);
    return v;
}

void put_tensor(std::ostream& out, const std::string& name, const Mat& m) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
    }
}

}  // namespace

void save_checkpoint(const OperatorModel& model, const std::map<std::string, std::string>& metadata,
                     const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    nlohmann::json header;
    header["spec"] = nlohmann::json::parse(spec_to_json(model.spec));
    header["metadata"] = metadata;
    const std::string text = header.dump();
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto names = model.parameter_names();
    const auto params = model.parameters();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size() + 1));
    put_tensor(out, "fourier.B", model.fourier);
    for (std::size_t i = 0; i < params.size(); ++i) put_tensor(out, names[i], *params[i]);
    if (!out) throw std::runtime_error("error writing checkpoint " + path.string());
}

OperatorModel load_checkpoint(const std::filesystem::path& path, std::map<std::string, std::string>* metadata) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error(path.string() + " is not a checkpoint (bad magic)");
    }
    const auto version = get<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    const auto len = get<std::uint64_t>(in, "header length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("checkpoint truncated in header");
    const nlohmann::json header = nlohmann::json::parse(text);
    OperatorModel model = init_model(spec_from_json(header.at("spec").dump()), 0);
    if (metadata) *metadata = header.at("metadata").get<std::map<std::string, std::string>>();

    std::map<std::string, Mat*> slots;
    const auto names = model.parameter_names();
    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) slots[names[i]] = params[i];
    slots["fourier.B"] = &model.fourier;

    const auto count = get<std::uint32_t>(in, "tensor count");
    if (count != slots.size()) {
        throw std::runtime_error("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                                 std::to_string(slots.size()));
    }
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = get<std::uint32_t>(in, "tensor name");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rows = get<std::uint64_t>(in, name);
        const auto cols = get<std::uint64_t>(in, name);
        auto it = slots.find(name);
        if (it == slots.end()) throw std::runtime_error("unexpected tensor '" + name + "' in checkpoint");
        Mat& dst = *it->second;
        if (static_cast<std::uint64_t>(dst.rows()) != rows || static_cast<std::uint64_t>(dst.cols()) != cols) {
            throw std::runtime_error("tensor '" + name + "' has the wrong shape");
        }
        for (Eigen::Index r = 0; r < dst.rows(); ++r) {
            for (Eigen::Index c = 0; c < dst.cols(); ++c) dst(r, c) = get<double>(in, name);
        }
        slots.erase(it);
    }
    return model;
}

}  // namespace deepoheat
