#include "deepoheat/autodiff.hpp"

#include <cmath>

namespace deepoheat::ad {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double swish_derivative(double x, int k) {
    const double s = sigmoid(x);
    const double g = s * (1.0 - s);
    switch (k) {
        case 0: return x * s;
        case 1: return s * (1.0 + x * (1.0 - s));
        case 2: return g * (2.0 + x * (1.0 - 2.0 * s));
        case 3: return g * (3.0 * (1.0 - 2.0 * s) + x * (1.0 - 6.0 * s + 6.0 * s * s));
        default: throw std::invalid_argument("swish derivative order must be 0..3");
    }
}

SwishDerivs swish_derivs(double x) {
    return {swish_derivative(x, 0), swish_derivative(x, 1), swish_derivative(x, 2)};
}

void check_finite(const Mat& m, const std::string& what) {
    if (!m.allFinite()) throw NonFiniteError("non-finite value in " + what);
}

const Mat& Var::value() const { return tape->value(*this); }

namespace {

Mat swish_apply(const Mat& a, int k) {
    return a.unaryExpr([k](double x) { return swish_derivative(x, k); });
}

void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument("variables belong to different tapes");
}

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()));
    }
}

}  // namespace

Var Tape::constant(Mat value) { return push(Op::Leaf, std::move(value), {}, 0.0, {}, 0); }

Var Tape::parameter(Mat value) { return push(Op::Leaf, std::move(value), {}, 0.0, {}, 1); }

Var Tape::push(Op op, Mat value, std::vector<int> inputs, double scalar, std::vector<int> index, int param) {
    Node node;
    node.op = op;
    node.value = std::move(value);
    node.inputs = std::move(inputs);
    node.scalar = scalar;
    node.index = std::move(index);
    node.param = param;
    node.needs_grad = op == Op::Leaf ? param != 0 : false;
    for (int in : node.inputs) node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Mat Tape::grad(Var v) const {
    if (v.id < static_cast<int>(grads_.size()) && has_grad_[v.id]) return grads_[v.id];
    return Mat::Zero(nodes_[v.id].value.rows(), nodes_[v.id].value.cols());
}

void Tape::accumulate(int id, const Mat& g) {
    if (!nodes_[id].needs_grad) return;
    if (has_grad_[id]) {
        grads_[id] += g;
    } else {
        grads_[id] = g;
        has_grad_[id] = true;
    }
}

void Tape::backward(Var out) {
    if (out.tape != this) throw std::invalid_argument("backward: variable from another tape");
    const Mat& v = nodes_[out.id].value;
    if (v.rows() != 1 || v.cols() != 1) throw std::invalid_argument("backward needs a 1 x 1 output");
    if (!std::isfinite(v(0, 0))) throw NonFiniteError("non-finite loss");
    grads_.assign(nodes_.size(), Mat());
    has_grad_.assign(nodes_.size(), false);
    accumulate(out.id, Mat::Ones(1, 1));

    auto slot = [&](int id) -> Mat& {
        if (!has_grad_[id]) {
            grads_[id] = Mat::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
            has_grad_[id] = true;
        }
        return grads_[id];
    };

    for (int id = out.id; id >= 0; --id) {
        if (!has_grad_[id]) continue;
        const Node& n = nodes_[id];
        if (n.op == Op::Leaf) continue;
        const Mat& g = grads_[id];
        auto in = [&](int k) -> const Node& { return nodes_[n.inputs[k]]; };
        auto wants = [&](int k) { return nodes_[n.inputs[k]].needs_grad; };
        switch (n.op) {
            case Op::Leaf: break;
            case Op::Add:
                accumulate(n.inputs[0], g);
                accumulate(n.inputs[1], g);
                break;
            case Op::Sub:
                accumulate(n.inputs[0], g);
                if (wants(1)) accumulate(n.inputs[1], -g);
                break;
            case Op::Scale:
                if (wants(0)) accumulate(n.inputs[0], n.scalar * g);
                break;
            case Op::AddConst: accumulate(n.inputs[0], g); break;
            case Op::Hadamard:
                if (wants(0)) accumulate(n.inputs[0], g.cwiseProduct(in(1).value));
                if (wants(1)) accumulate(n.inputs[1], g.cwiseProduct(in(0).value));
                break;
            case Op::Square:
                if (wants(0)) accumulate(n.inputs[0], 2.0 * g.cwiseProduct(in(0).value));
                break;
            case Op::Swish:
                if (wants(0)) {
                    accumulate(n.inputs[0], g.cwiseProduct(swish_apply(in(0).value, n.param + 1)));
                }
                break;
            case Op::MatMul:
                if (wants(0)) slot(n.inputs[0]).noalias() += g * in(1).value.transpose();
                if (wants(1)) slot(n.inputs[1]).noalias() += in(0).value.transpose() * g;
                break;
            case Op::Transpose:
                if (wants(0)) accumulate(n.inputs[0], g.transpose());
                break;
            case Op::AddBias:
                accumulate(n.inputs[0], g);
                if (wants(1)) accumulate(n.inputs[1], g.rowwise().sum());
                break;
            case Op::AddScalar:
                accumulate(n.inputs[0], g);
                if (wants(1)) accumulate(n.inputs[1], Mat::Constant(1, 1, g.sum()));
                break;
            case Op::GatherCols:
                if (wants(0)) {
                    Mat& dst = slot(n.inputs[0]);
                    for (std::size_t c = 0; c < n.index.size(); ++c) dst.col(n.index[c]) += g.col(c);
                }
                break;
            case Op::ColSum:
                if (wants(0)) {
                    Mat& dst = slot(n.inputs[0]);
                    dst.rowwise() += g.row(0);
                }
                break;
            case Op::Cols:
                if (wants(0)) slot(n.inputs[0]).middleCols(n.index[0], g.cols()) += g;
                break;
            case Op::Concat: {
                Eigen::Index start = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    const Eigen::Index w = nodes_[n.inputs[k]].value.cols();
                    if (nodes_[n.inputs[k]].needs_grad) slot(n.inputs[k]) += g.middleCols(start, w);
                    start += w;
                }
                break;
            }
            case Op::Sum:
                if (wants(0)) slot(n.inputs[0]).array() += g(0, 0);
                break;
            case Op::Mean:
                if (wants(0)) slot(n.inputs[0]).array() += g(0, 0) / static_cast<double>(in(0).value.size());
                break;
            case Op::DualSwish: {
                if (!wants(0)) break;
                const Mat& a = in(0).value;
                const Eigen::Index w = a.cols() / kDualBlocks;
                const auto a0 = a.leftCols(w);
                const Mat s1 = swish_apply(a0, 1);
                const Mat s2 = swish_apply(a0, 2);
                const Mat s3 = swish_apply(a0, 3);
                Mat& dst = slot(n.inputs[0]);
                auto d0 = dst.leftCols(w);
                d0 += g.leftCols(w).cwiseProduct(s1);
                for (int i = 0; i < 3; ++i) {
                    const auto ai = a.middleCols((1 + i) * w, w);
                    const auto aai = a.middleCols((4 + i) * w, w);
                    const auto gi = g.middleCols((1 + i) * w, w);
                    const auto ggi = g.middleCols((4 + i) * w, w);
                    d0.array() += gi.array() * s2.array() * ai.array() +
                                  ggi.array() * (s3.array() * ai.array().square() + s2.array() * aai.array());
                    dst.middleCols((1 + i) * w, w).array() +=
                        gi.array() * s1.array() + 2.0 * ggi.array() * s2.array() * ai.array();
                    dst.middleCols((4 + i) * w, w).array() += ggi.array() * s1.array();
                }
                break;
            }
            case Op::DualBias: {
                accumulate(n.inputs[0], g);
                if (wants(1)) {
                    const Eigen::Index w = g.cols() / kDualBlocks;
                    accumulate(n.inputs[1], g.leftCols(w).rowwise().sum());
                }
                break;
            }
        }
    }
}

Var operator+(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape(a.value(), b.value(), "add");
    return a.tape->push(Tape::Op::Add, a.value() + b.value(), {a.id, b.id});
}

Var operator-(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape(a.value(), b.value(), "sub");
    return a.tape->push(Tape::Op::Sub, a.value() - b.value(), {a.id, b.id});
}

Var operator*(double c, Var a) { return a.tape->push(Tape::Op::Scale, c * a.value(), {a.id}, c); }

Var add_const(Var a, const Mat& c) {
    require_same_shape(a.value(), c, "add_const");
    return a.tape->push(Tape::Op::AddConst, a.value() + c, {a.id});
}

Var hadamard(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape(a.value(), b.value(), "hadamard");
    return a.tape->push(Tape::Op::Hadamard, a.value().cwiseProduct(b.value()), {a.id, b.id});
}

Var square(Var a) { return a.tape->push(Tape::Op::Square, a.value().array().square().matrix(), {a.id}); }

Var swish(Var a, int order) {
    if (order < 0 || order > 2) throw std::invalid_argument("swish op order must be 0..2");
    return a.tape->push(Tape::Op::Swish, swish_apply(a.value(), order), {a.id}, 0.0, {}, order);
}

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                                    std::to_string(b.rows()) + " differ");
    }
    Mat out;
    out.noalias() = a.value() * b.value();
    return a.tape->push(Tape::Op::MatMul, std::move(out), {a.id, b.id});
}

Var transpose(Var a) { return a.tape->push(Tape::Op::Transpose, a.value().transpose(), {a.id}); }

Var add_bias(Var a, Var b) {
    require_same_tape(a, b);
    if (b.cols() != 1 || b.rows() != a.rows()) throw std::invalid_argument("add_bias: bias must be rows x 1");
    Mat out = a.value();
    out.colwise() += b.value().col(0);
    return a.tape->push(Tape::Op::AddBias, std::move(out), {a.id, b.id});
}

Var add_scalar(Var a, Var s) {
    require_same_tape(a, s);
    if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("add_scalar: scalar must be 1 x 1");
    Mat out = a.value().array() + s.value()(0, 0);
    return a.tape->push(Tape::Op::AddScalar, std::move(out), {a.id, s.id});
}

Var gather_cols(Var a, const std::vector<int>& idx) {
    const Mat& v = a.value();
    Mat out(v.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) {
        if (idx[c] < 0 || idx[c] >= v.cols()) throw std::out_of_range("gather_cols: column index out of range");
        out.col(c) = v.col(idx[c]);
    }
    return a.tape->push(Tape::Op::GatherCols, std::move(out), {a.id}, 0.0, idx);
}

Var col_sum(Var a) { return a.tape->push(Tape::Op::ColSum, a.value().colwise().sum(), {a.id}); }

Var cols(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw std::out_of_range("cols: range out of bounds");
    return a.tape->push(Tape::Op::Cols, a.value().middleCols(start, count), {a.id}, 0.0,
                        {static_cast<int>(start)});
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    Eigen::Index total = 0;
    std::vector<int> ids;
    for (const Var& p : parts) {
        require_same_tape(parts.front(), p);
        if (p.rows() != parts.front().rows()) throw std::invalid_argument("concat_cols: row counts differ");
        total += p.cols();
        ids.push_back(p.id);
    }
    Mat out(parts.front().rows(), total);
    Eigen::Index start = 0;
    for (const Var& p : parts) {
        out.middleCols(start, p.cols()) = p.value();
        start += p.cols();
    }
    return parts.front().tape->push(Tape::Op::Concat, std::move(out), std::move(ids));
}

Var sum(Var a) { return a.tape->push(Tape::Op::Sum, Mat::Constant(1, 1, a.value().sum()), {a.id}); }

Var mean(Var a) {
    if (a.value().size() == 0) throw std::invalid_argument("mean of an empty matrix");
    return a.tape->push(Tape::Op::Mean, Mat::Constant(1, 1, a.value().mean()), {a.id});
}

Var dual_swish(Var packed) {
    const Mat& a = packed.value();
    if (a.cols() % kDualBlocks != 0) throw std::invalid_argument("dual_swish: column count not a multiple of 7");
    const Eigen::Index w = a.cols() / kDualBlocks;
    const auto a0 = a.leftCols(w);
    const Mat s1 = swish_apply(a0, 1);
    const Mat s2 = swish_apply(a0, 2);
    Mat out(a.rows(), a.cols());
    out.leftCols(w) = swish_apply(a0, 0);
    for (int i = 0; i < 3; ++i) {
        const auto ai = a.middleCols((1 + i) * w, w);
        const auto aai = a.middleCols((4 + i) * w, w);
        out.middleCols((1 + i) * w, w) = s1.cwiseProduct(ai);
        out.middleCols((4 + i) * w, w).array() = s2.array() * ai.array().square() + s1.array() * aai.array();
    }
    return packed.tape->push(Tape::Op::DualSwish, std::move(out), {packed.id});
}

Var dual_bias(Var packed, Var b) {
    require_same_tape(packed, b);
    if (packed.cols() % kDualBlocks != 0) throw std::invalid_argument("dual_bias: column count not a multiple of 7");
    if (b.cols() != 1 || b.rows() != packed.rows()) throw std::invalid_argument("dual_bias: bias must be rows x 1");
    const Eigen::Index w = packed.cols() / kDualBlocks;
    Mat out = packed.value();
    out.leftCols(w).colwise() += b.value().col(0);
    return packed.tape->push(Tape::Op::DualBias, std::move(out), {packed.id, b.id});
}

}  // namespace deepoheat::ad
