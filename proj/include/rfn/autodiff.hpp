#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records primitives in topological order; every Value is a handle
// (tape, node index). Broadcasting is limited to scalar-tensor (1x1) and
// matrix-vector (rows x 1 or 1 x cols against rows x cols).

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace ad {

class Tape;

class Value {
public:
    Value() = default;
    Value(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Matrix& data() const;
    Eigen::Index rows() const { return data().rows(); }
    Eigen::Index cols() const { return data().cols(); }
    double scalar() const;

    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Matrix& grad)>;

    // In no-grad mode no backward closures are recorded; use it for sampling.
    explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Value parameter(Matrix value);
    Value constant(Matrix value);
    Value constant(double value);

    // Adds a primitive result. `backward` receives the gradient of this node and
    // must accumulate into the parents it closed over.
    Value push(Matrix value, bool requires_grad, const char* op, BackwardFn backward);

    void accumulate(int id, const Matrix& grad);
    void accumulate(int id, Matrix&& grad);

    // Propagates d(root)/d(node) to every node. Root must be 1x1. May be run
    // once per forward pass.
    void backward(const Value& root);

    // Gradient of the last backward root w.r.t. `v`; zeros if v was unreachable.
    Matrix grad(const Value& v) const;

    const Matrix& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    const char* op(int id) const { return nodes_[static_cast<size_t>(id)].op; }
    bool recording() const { return record_; }
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        BackwardFn backward;
        const char* op = "";
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    bool record_;
    bool backward_done_ = false;
};

// Elementwise with limited broadcasting.
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value hadamard(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);

Value matmul(const Value& a, const Value& b);

Value sigmoid(const Value& a);
Value tanh(const Value& a);
Value softplus(const Value& a);
Value exp(const Value& a);
Value log(const Value& a);
Value relu(const Value& a);
Value square(const Value& a);
// max(a, floor) elementwise; gradient passes only where a > floor.
Value clamp_min(const Value& a, double floor);

Value scale(const Value& a, double c);
Value add_scalar(const Value& a, double c);
Value neg(const Value& a);
// 1 - a
Value one_minus(const Value& a);

// Sum of all entries (1x1) and per-column sums (1 x cols).
Value sum(const Value& a);
Value colsum(const Value& a);

Value slice_rows(const Value& a, Eigen::Index start, Eigen::Index count);
Value slice_cols(const Value& a, Eigen::Index start, Eigen::Index count);
Value concat_rows(const std::vector<Value>& parts);
Value concat_cols(const std::vector<Value>& parts);

// Column-wise log N(r_j; 0, L_j L_j^T) for lower-triangular L_j assembled from
// `diag` (D x N, strictly positive) and `lower` (D(D-1)/2 x N, strictly lower
// entries in row-major order: (1,0), (2,0), (2,1), (3,0), ...). Returns 1 x N.
Value mvn_chol_logpdf(const Value& residual, const Value& diag, const Value& lower);

// Assembles the lower-triangular factor for column j of the packed layout above.
Matrix unpack_cholesky(const Eigen::Ref<const Vector>& diag, const Eigen::Ref<const Vector>& lower);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }

// Max over parameters of |analytic - central difference| / (|analytic| + 1e-8).
// `f` evaluates the scalar objective at the given parameter values; `grads` are
// the analytic gradients aligned with `params`.
double finite_diff_check(const std::function<double(const std::vector<Matrix>&)>& f,
                         const std::vector<Matrix>& params, const std::vector<Matrix>& grads,
                         double step);

}  // namespace ad
}  // namespace rfn
