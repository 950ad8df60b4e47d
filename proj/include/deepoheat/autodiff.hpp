#pragma once

// Matrix-level reverse-mode tape. Values are dense column-major matrices with
// features along rows and batch entries along columns.
//
// Spatial derivatives travel as packed dual matrices: seven column blocks of
// equal width [value | d/dy0 d/dy1 d/dy2 | d2/dy0^2 d2/dy1^2 d2/dy2^2]. The
// dual ops below propagate all blocks forward and are themselves taped, so a
// loss built from derivative blocks can be differentiated with respect to the
// parameters in one reverse sweep.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace deepoheat::ad {

using Mat = Eigen::MatrixXd;

inline constexpr int kDualBlocks = 7;

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Stable logistic function.
double sigmoid(double x);

/// k-th derivative of x * sigmoid(x), k in 0..3.
double swish_derivative(double x, int k);

struct SwishDerivs {
    double value;
    double first;
    double second;
};
SwishDerivs swish_derivs(double x);

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Mat& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

class Tape {
public:
    Var constant(Mat value);
    Var parameter(Mat value);

    const Mat& value(Var v) const { return nodes_[v.id].value; }
    /// Gradient after backward(); zero matrix if the node received none.
    Mat grad(Var v) const;

    /// Seeds d(out)/d(out) = 1 for a 1 x 1 output and sweeps in reverse.
    void backward(Var out);

    std::size_t size() const { return nodes_.size(); }

    enum class Op {
        Leaf,
        Add,
        Sub,
        Scale,
        AddConst,
        Hadamard,
        Square,
        Swish,
        MatMul,
        Transpose,
        AddBias,
        AddScalar,
        GatherCols,
        ColSum,
        Cols,
        Sum,
        Mean,
        DualSwish,
        DualBias,
        Concat,
    };

    // Internal: used by the free op functions.
    Var push(Op op, Mat value, std::vector<int> inputs, double scalar = 0.0, std::vector<int> index = {},
             int param = 0);

private:
    struct Node {
        Op op = Op::Leaf;
        Mat value;
        std::vector<int> inputs;
        double scalar = 0.0;
        std::vector<int> index;
        int param = 0;
        bool needs_grad = false;
    };

    void accumulate(int id, const Mat& g);

    std::vector<Node> nodes_;
    std::vector<Mat> grads_;
    std::vector<bool> has_grad_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(double c, Var a);
/// a + constant matrix of the same shape.
Var add_const(Var a, const Mat& c);
Var hadamard(Var a, Var b);
Var square(Var a);
/// Elementwise k-th derivative of swish, k in 0..2.
Var swish(Var a, int order = 0);
Var matmul(Var a, Var b);
Var transpose(Var a);
/// a (r x n) + b (r x 1) broadcast over columns.
Var add_bias(Var a, Var b);
/// a + s for a 1 x 1 variable s.
Var add_scalar(Var a, Var s);
/// Columns idx of a, with repeats allowed.
Var gather_cols(Var a, const std::vector<int>& idx);
/// 1 x n column sums.
Var col_sum(Var a);
/// Columns [start, start + count).
Var cols(Var a, Eigen::Index start, Eigen::Index count);
/// Horizontal concatenation.
Var concat_cols(const std::vector<Var>& parts);
Var sum(Var a);
Var mean(Var a);

/// Swish over a packed dual matrix.
Var dual_swish(Var packed);
/// Adds b (r x 1) to the value block only.
Var dual_bias(Var packed, Var b);

/// Throws NonFiniteError naming `what` if any entry is NaN or infinite.
void check_finite(const Mat& m, const std::string& what);

}  // namespace deepoheat::ad
