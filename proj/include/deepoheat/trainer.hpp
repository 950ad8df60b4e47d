#pragma once

// Physics-informed loss over region-tagged collocation points and the Adam
// training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deepoheat/collocation.hpp"
#include "deepoheat/config.hpp"
#include "deepoheat/derivatives.hpp"
#include "deepoheat/operator_net.hpp"

namespace deepoheat {

/// One sampled input function: the full configuration it induces and its
/// branch encodings (one column vector per branch).
struct FunctionSample {
    ChipConfig config;
    std::vector<Eigen::VectorXd> encoded;
};

/// Residual of one region, evaluated on a column range of the batch.
///   pde:     sum_i lap[i] * tau_ii + c
///   surface: a * tau + b * tau_n + c, tau_n along the surface axis
struct RegionTerm {
    Region region = Region::Interior;
    std::string name;
    Eigen::Index start = 0;
    Eigen::Index count = 0;
    bool pde = false;
    int axis = 2;
    Mat a, b, c;  // rows = functions (shared points) or 1 (paired points)
};

struct TrainingBatch {
    std::vector<Mat> encoded;          // m_i x F per branch
    Mat coords;                        // 3 x N normalized, region-major
    std::vector<int> point_function;   // empty: every function sees every point
    std::vector<RegionTerm> terms;
    Vec3 laplacian{1.0, 1.0, 1.0};     // k_hat * axis_factor^2
};

/// Shared points: every function is evaluated on `points`.
TrainingBatch make_batch(const std::vector<FunctionSample>& functions, const CollocationSet& points);

/// Paired points: function f is evaluated on points[f] only.
TrainingBatch make_batch(const std::vector<FunctionSample>& functions, const std::vector<CollocationSet>& points);

struct LossReport {
    int iteration = 0;
    double total = 0.0;
    std::vector<std::pair<std::string, double>> terms;  // L_r first, then L_slab and surface terms

    double term(const std::string& name) const;
};

/// Total loss on the tape plus the per-term values. Unweighted unless
/// weights name a term.
ad::Var physics_loss(ad::Tape& tape, const OperatorModel& model, const ParamVars& params,
                     const TrainingBatch& batch, const std::map<std::string, double>& weights, LossReport* report);

LossReport residual_losses(const OperatorModel& model, const TrainingBatch& batch,
                           const std::map<std::string, double>& weights = {});

struct AdamSpec {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(const OperatorModel& model, AdamSpec spec = {});
    void step(OperatorModel& model, const ParamGradient& grad, double lr);
    long steps() const { return t_; }

private:
    AdamSpec spec_;
    std::vector<Mat> m_, v_;
    long t_ = 0;
};

struct TrainSpec {
    int iterations = 10000;
    int functions_per_iter = 50;
    double lr = 1e-3;
    double lr_decay = 0.9;
    int lr_decay_every = 500;
    AdamSpec adam;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // 0: none
    std::filesystem::path checkpoint_dir;
    std::map<std::string, std::string> checkpoint_metadata;  // written with every checkpoint
    std::map<std::string, double> weights;

    void validate() const;
    /// lr * decay^floor(iteration / every), iteration counted from 0.
    double learning_rate(int iteration) const;
};

enum class CollocationMode { Mesh, Random };

struct TrainingProblem {
    ChipConfig base;
    ScalingMap scaling;
    CollocationMode mode = CollocationMode::Mesh;
    int points_per_function = 0;  // random mode
    std::function<std::vector<FunctionSample>(int, std::mt19937_64&)> sample_functions;
};

struct TrainResult {
    std::vector<LossReport> history;
};

using TrainCallback = std::function<void(const LossReport&)>;

/// Iteration i (1-based in reports) samples functions and points, evaluates
/// the loss, and takes one Adam step. Aborts with ad::NonFiniteError naming
/// the term and iteration on a non-finite loss.
TrainResult train(OperatorModel& model, const TrainingProblem& problem, const TrainSpec& spec,
                  const TrainCallback& on_iteration = {});

void write_loss_csv(const std::vector<LossReport>& history, const std::filesystem::path& path);

}  // namespace deepoheat
