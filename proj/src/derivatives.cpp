#include "deepoheat/derivatives.hpp"

#include <cmath>

namespace deepoheat {

DualBatch unpack_dual(const Mat& packed_row) {
    if (packed_row.rows() != 1 || packed_row.cols() % ad::kDualBlocks != 0) {
        throw std::invalid_argument("unpack_dual: expected a 1 x 7N row");
    }
    const Eigen::Index n = packed_row.cols() / ad::kDualBlocks;
    DualBatch out;
    out.values = packed_row.leftCols(n).transpose();
    for (int i = 0; i < 3; ++i) {
        out.d[i] = packed_row.middleCols((1 + i) * n, n).transpose();
        out.dd[i] = packed_row.middleCols((4 + i) * n, n).transpose();
    }
    return out;
}

DualBatch spatial_derivs(const OperatorModel& model, const std::vector<Mat>& encoded, const Mat& coords) {
    if (coords.cols() == 0) throw std::invalid_argument("spatial_derivs: empty coordinate batch");
    for (const Mat& e : encoded) {
        if (e.cols() != 1) throw std::invalid_argument("spatial_derivs: one function per branch");
    }
    ad::Tape tape;
    const ParamVars params = register_parameters(tape, model);
    ad::Var product = branch_product(tape, model, params, encoded);
    ad::Var trunk = trunk_dual(tape, model, params, coords);
    ad::Var head = head_cartesian(model, params, product, trunk);
    ad::check_finite(head.value(), "head");
    return unpack_dual(head.value());
}

LossAndGradient loss_param_grad(const OperatorModel& model, const LossClosure& closure) {
    ad::Tape tape;
    const ParamVars params = register_parameters(tape, model);
    ad::Var loss = closure(tape, params);
    if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("loss closure must return a 1 x 1 value");
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) throw ad::NonFiniteError("non-finite loss");
    tape.backward(loss);
    LossAndGradient out;
    out.loss = value;
    for (const ad::Var& v : params.vars) {
        Mat g = tape.grad(v);
        ad::check_finite(g, "parameter gradient");
        out.gradient.grads.push_back(std::move(g));
    }
    return out;
}

}  // namespace deepoheat
