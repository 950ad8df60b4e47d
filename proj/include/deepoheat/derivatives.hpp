#pragma once

// Exact spatial derivatives of the operator network and parameter gradients
// of scalar losses built on the tape.

#include <array>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "deepoheat/autodiff.hpp"
#include "deepoheat/operator_net.hpp"

namespace deepoheat {

/// Output and pure derivatives with respect to the normalized coordinates.
struct DualBatch {
    Eigen::VectorXd values;
    std::array<Eigen::VectorXd, 3> d;
    std::array<Eigen::VectorXd, 3> dd;

    Eigen::Index size() const { return values.size(); }
};

/// encoded[i] holds one column per branch (a single function); coords 3 x N.
/// Throws ad::NonFiniteError naming the trunk layer on a non-finite value.
DualBatch spatial_derivs(const OperatorModel& model, const std::vector<Mat>& encoded, const Mat& coords);

/// Splits a packed 1 x 7N row into a DualBatch.
DualBatch unpack_dual(const Mat& packed_row);

struct ParamGradient {
    std::vector<Mat> grads;  // same order and shapes as OperatorModel::parameters()
};

using LossClosure = std::function<ad::Var(ad::Tape&, const ParamVars&)>;

struct LossAndGradient {
    double loss = 0.0;
    ParamGradient gradient;
};

/// Evaluates the closure on a fresh tape and sweeps it backward.
LossAndGradient loss_param_grad(const OperatorModel& model, const LossClosure& closure);

}  // namespace deepoheat
