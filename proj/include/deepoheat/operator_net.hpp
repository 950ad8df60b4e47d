#pragma once

// Multi-input operator network: one MLP branch per input function, a trunk
// MLP over coordinates whose first layer is a frozen Fourier-feature map, and
// a head that multiplies branch features elementwise, contracts them with the
// trunk features and adds a scalar bias.
//
// Batches are stored features x samples (one column per function or point).

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deepoheat/autodiff.hpp"

namespace deepoheat {

using ad::Mat;

struct MlpSpec {
    int input = 1;
    std::vector<int> widths;  // every fully-connected layer, output layer last

    int output() const { return widths.empty() ? input : widths.back(); }
    bool operator==(const MlpSpec&) const = default;
};

struct ModelSpec {
    std::vector<MlpSpec> branches;
    int fourier_count = 0;        // rows of B; 0 feeds raw coordinates to the trunk
    double fourier_sigma = 6.283185307179586;
    std::vector<int> trunk_widths;
    bool head_bias = true;

    int feature_width() const;  // p
    int trunk_input() const { return fourier_count > 0 ? 2 * fourier_count : 3; }
    /// Throws std::invalid_argument on width mismatches.
    void validate() const;
    bool operator==(const ModelSpec&) const = default;
};

struct Dense {
    Mat weight;  // out x in
    Mat bias;    // out x 1
};

struct Mlp {
    std::vector<Dense> layers;
    /// Value-only evaluation; swish between layers, linear output.
    Mat forward(const Mat& input) const;
};

struct OperatorModel {
    ModelSpec spec;
    std::vector<Mlp> branches;
    Mat fourier;  // fourier_count x 3, frozen
    Mlp trunk;
    Mat head = Mat::Zero(1, 1);  // scalar bias; stays zero when spec.head_bias is off

    /// Trainable tensors in a fixed order: branches, trunk, head bias.
    std::vector<Mat*> parameters();
    std::vector<const Mat*> parameters() const;
    std::vector<std::string> parameter_names() const;
    std::size_t parameter_count() const;
    double bias() const { return head(0, 0); }
    bool operator==(const OperatorModel& other) const;
};

/// Glorot-normal weights, zero biases, B ~ N(0, sigma^2).
OperatorModel init_model(const ModelSpec& spec, std::uint64_t seed);

/// coords n x 3 -> n x 2q rows [sin(2 pi B y), cos(2 pi B y)].
Mat fourier_features(const Mat& coords, const Mat& b);

/// Branch outputs for a batch of functions: encoded[i] is m_i x F.
Mat branch_features(const OperatorModel& model, const std::vector<Mat>& encoded);

/// Trunk outputs for coords given as 3 x N columns.
Mat trunk_features(const OperatorModel& model, const Mat& coords);

/// T for every (function, point) pair: F x N. coords are 3 x N normalized.
Mat forward(const OperatorModel& model, const std::vector<Mat>& encoded, const Mat& coords);

/// T at point c for function point_function[c]: 1 x N.
Mat forward_paired(const OperatorModel& model, const std::vector<Mat>& encoded, const Mat& coords,
                   const std::vector<int>& point_function);

/// Caches trunk features for a fixed query grid.
class Predictor {
public:
    Predictor(const OperatorModel& model, const Mat& coords);
    /// encoded[i] is one m_i x 1 column per branch; returns N values.
    Eigen::VectorXd predict(const std::vector<Mat>& encoded) const;

private:
    const OperatorModel* model_;
    Mat trunk_;
};

// Tape-level building blocks.

struct ParamVars {
    std::vector<ad::Var> vars;  // same order as OperatorModel::parameters()
};

ParamVars register_parameters(ad::Tape& tape, const OperatorModel& model);

/// Elementwise product of all branch outputs, p x F.
ad::Var branch_product(ad::Tape& tape, const OperatorModel& model, const ParamVars& params,
                       const std::vector<Mat>& encoded);

/// Packed dual trunk output, p x 7N, for coords 3 x N. Layer values are
/// checked for finiteness; the error names the layer index.
ad::Var trunk_dual(ad::Tape& tape, const OperatorModel& model, const ParamVars& params, const Mat& coords);

/// Packed dual Fourier (or identity) features as a tape constant.
Mat fourier_dual(const Mat& coords, const Mat& b);

/// Head over shared points: packed F x 7N.
ad::Var head_cartesian(const OperatorModel& model, const ParamVars& params, ad::Var product, ad::Var trunk);

/// Head over per-function points: packed 1 x 7N.
ad::Var head_paired(const OperatorModel& model, const ParamVars& params, ad::Var product, ad::Var trunk,
                    const std::vector<int>& point_function);

// Checkpoints: "DOHCKPT1", u32 version, u64 length + JSON header (spec and
// metadata), u32 tensor count, then per tensor u32 name length, name, u64
// rows, u64 cols and rows*cols little-endian doubles in row-major order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const OperatorModel& model, const std::map<std::string, std::string>& metadata,
                     const std::filesystem::path& path);
OperatorModel load_checkpoint(const std::filesystem::path& path, std::map<std::string, std::string>* metadata = nullptr);

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& text);

}  // namespace deepoheat
