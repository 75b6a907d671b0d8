#include "rfn/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace rfn::ad {

namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

[[noreturn]] void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

Tape& same_tape(const Value& a, const Value& b, const char* op) {
    if (!a.valid() || !b.valid()) throw std::invalid_argument(std::string(op) + ": value not on a tape");
    if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
    return *a.tape();
}

// Broadcast `m` to rows x cols; `m` must be 1x1, rows x 1, 1 x cols or full size.
Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
    if (m.rows() == rows && m.cols() == cols) return m;
    if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
    if (m.cols() == 1 && m.rows() == rows) return m.replicate(1, cols);
    return m.replicate(rows, 1);
}

// Sum `g` down to the operand's shape (inverse of expand).
Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
    if (cols == 1) return g.rowwise().sum();
    return g.colwise().sum();
}

bool broadcastable(const Matrix& small, Eigen::Index rows, Eigen::Index cols) {
    if (small.rows() == rows && small.cols() == cols) return true;
    if (small.rows() == 1 && small.cols() == 1) return true;
    if (small.cols() == 1 && small.rows() == rows) return true;
    return small.rows() == 1 && small.cols() == cols;
}

struct BroadcastShape {
    Eigen::Index rows;
    Eigen::Index cols;
};

BroadcastShape broadcast_shape(const char* op, const Matrix& a, const Matrix& b) {
    // One operand must carry the full shape.
    if (broadcastable(b, a.rows(), a.cols())) return {a.rows(), a.cols()};
    if (broadcastable(a, b.rows(), b.cols())) return {b.rows(), b.cols()};
    shape_fail(op, a, b);
}

template <class Fwd>
Value unary(const Value& a, const char* op, Fwd fwd, std::function<Matrix(const Matrix& x, const Matrix& g)> dfdx) {
    Tape& t = *a.tape();
    Matrix y = fwd(a.data());
    const bool rg = a.requires_grad();
    const int ia = a.id();
    Tape::BackwardFn bw;
    if (rg) {
        bw = [ia, dfdx](Tape& tp, const Matrix& g) {
            tp.accumulate(ia, dfdx(tp.value(ia), g));
        };
    }
    return t.push(std::move(y), rg, op, std::move(bw));
}

}  // namespace

// ---------------------------------------------------------------------------

const Matrix& Value::data() const { return tape_->value(id_); }

double Value::scalar() const {
    const Matrix& d = data();
    if (d.rows() != 1 || d.cols() != 1) throw ShapeError("scalar(): value is " + shape_str(d));
    return d(0, 0);
}

bool Value::requires_grad() const { return tape_->requires_grad(id_); }

Value Tape::parameter(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, "parameter", record_});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, "constant", false});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Value Tape::push(Matrix value, bool requires_grad, const char* op, BackwardFn backward) {
    const bool rg = record_ && requires_grad;
    nodes_.push_back(Node{std::move(value), Matrix(), rg ? std::move(backward) : nullptr, op, rg});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Matrix& grad) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
        n.grad = grad;
    else
        n.grad += grad;
}

void Tape::accumulate(int id, Matrix&& grad) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
        n.grad = std::move(grad);
    else
        n.grad += grad;
}

void Tape::backward(const Value& root) {
    if (root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
    const Matrix& r = root.data();
    if (r.rows() != 1 || r.cols() != 1)
        throw ShapeError("backward: root must be scalar, got " + shape_str(r));
    if (backward_done_) throw std::logic_error("backward: tape already differentiated");
    backward_done_ = true;
    if (!nodes_[static_cast<size_t>(root.id())].requires_grad) return;
    nodes_[static_cast<size_t>(root.id())].grad = Matrix::Ones(1, 1);
    for (int i = root.id(); i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.grad.size() == 0 || !n.backward) continue;
        const Matrix g = n.grad;
        n.backward(*this, g);
    }
}

Matrix Tape::grad(const Value& v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id())];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

// ---------------------------------------------------------------------------
// Binary elementwise

Value add(const Value& a, const Value& b) {
    Tape& t = same_tape(a, b, "add");
    const auto [r, c] = broadcast_shape("add", a.data(), b.data());
    Matrix y = expand(a.data(), r, c) + expand(b.data(), r, c);
    const int ia = a.id(), ib = b.id();
    const auto ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
    return t.push(std::move(y), a.requires_grad() || b.requires_grad(), "add",
                  [=](Tape& tp, const Matrix& g) {
                      if (tp.requires_grad(ia)) tp.accumulate(ia, reduce_to(g, ar, ac));
                      if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_to(g, br, bc));
                  });
}

Value sub(const Value& a, const Value& b) {
    Tape& t = same_tape(a, b, "sub");
    const auto [r, c] = broadcast_shape("sub", a.data(), b.data());
    Matrix y = expand(a.data(), r, c) - expand(b.data(), r, c);
    const int ia = a.id(), ib = b.id();
    const auto ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
    return t.push(std::move(y), a.requires_grad() || b.requires_grad(), "sub",
                  [=](Tape& tp, const Matrix& g) {
                      if (tp.requires_grad(ia)) tp.accumulate(ia, reduce_to(g, ar, ac));
                      if (tp.requires_grad(ib)) tp.accumulate(ib, Matrix(-reduce_to(g, br, bc)));
                  });
}

Value hadamard(const Value& a, const Value& b) {
    Tape& t = same_tape(a, b, "hadamard");
    const auto [r, c] = broadcast_shape("hadamard", a.data(), b.data());
    Matrix y = expand(a.data(), r, c).cwiseProduct(expand(b.data(), r, c));
    const int ia = a.id(), ib = b.id();
    const auto ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
    return t.push(std::move(y), a.requires_grad() || b.requires_grad(), "hadamard",
                  [=](Tape& tp, const Matrix& g) {
                      if (tp.requires_grad(ia))
                          tp.accumulate(ia, reduce_to(g.cwiseProduct(expand(tp.value(ib), r, c)), ar, ac));
                      if (tp.requires_grad(ib))
                          tp.accumulate(ib, reduce_to(g.cwiseProduct(expand(tp.value(ia), r, c)), br, bc));
                  });
}

Value div(const Value& a, const Value& b) {
    Tape& t = same_tape(a, b, "div");
    const auto [r, c] = broadcast_shape("div", a.data(), b.data());
    Matrix y = expand(a.data(), r, c).cwiseQuotient(expand(b.data(), r, c));
    const int ia = a.id(), ib = b.id();
    const auto ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
    return t.push(std::move(y), a.requires_grad() || b.requires_grad(), "div",
                  [=](Tape& tp, const Matrix& g) {
                      const Matrix bx = expand(tp.value(ib), r, c);
                      if (tp.requires_grad(ia)) tp.accumulate(ia, reduce_to(g.cwiseQuotient(bx), ar, ac));
                      if (tp.requires_grad(ib)) {
                          const Matrix ax = expand(tp.value(ia), r, c);
                          Matrix gb = -(g.cwiseProduct(ax).cwiseQuotient(bx.cwiseProduct(bx)));
                          tp.accumulate(ib, reduce_to(gb, br, bc));
                      }
                  });
}

Value matmul(const Value& a, const Value& b) {
    Tape& t = same_tape(a, b, "matmul");
    if (a.cols() != b.rows()) shape_fail("matmul", a.data(), b.data());
    Matrix y = a.data() * b.data();
    const int ia = a.id(), ib = b.id();
    return t.push(std::move(y), a.requires_grad() || b.requires_grad(), "matmul",
                  [=](Tape& tp, const Matrix& g) {
                      if (tp.requires_grad(ia)) tp.accumulate(ia, Matrix(g * tp.value(ib).transpose()));
                      if (tp.requires_grad(ib)) tp.accumulate(ib, Matrix(tp.value(ia).transpose() * g));
                  });
}

// ---------------------------------------------------------------------------
// Unary

namespace {

double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_scalar(double x) {
    // log(1 + e^x) without overflow.
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

Value sigmoid(const Value& a) {
    return unary(
        a, "sigmoid", [](const Matrix& x) -> Matrix { return x.unaryExpr(&sigmoid_scalar); },
        [](const Matrix& x, const Matrix& g) -> Matrix {
            const Matrix s = x.unaryExpr(&sigmoid_scalar);
            return g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
        });
}

Value tanh(const Value& a) {
    return unary(
        a, "tanh", [](const Matrix& x) -> Matrix { return x.array().tanh().matrix(); },
        [](const Matrix& x, const Matrix& g) -> Matrix {
            const Eigen::ArrayXXd th = x.array().tanh();
            return (g.array() * (1.0 - th * th)).matrix();
        });
}

Value softplus(const Value& a) {
    return unary(
        a, "softplus", [](const Matrix& x) -> Matrix { return x.unaryExpr(&softplus_scalar); },
        [](const Matrix& x, const Matrix& g) -> Matrix {
            return g.cwiseProduct(x.unaryExpr(&sigmoid_scalar));
        });
}

Value exp(const Value& a) {
    return unary(
        a, "exp", [](const Matrix& x) -> Matrix { return x.array().exp().matrix(); },
        [](const Matrix& x, const Matrix& g) -> Matrix { return (g.array() * x.array().exp()).matrix(); });
}

Value log(const Value& a) {
    return unary(
        a, "log", [](const Matrix& x) -> Matrix { return x.array().log().matrix(); },
        [](const Matrix& x, const Matrix& g) -> Matrix { return (g.array() / x.array()).matrix(); });
}

Value relu(const Value& a) {
    return unary(
        a, "relu", [](const Matrix& x) -> Matrix { return x.cwiseMax(0.0); },
        [](const Matrix& x, const Matrix& g) -> Matrix {
            return (x.array() > 0.0).select(g, 0.0);
        });
}

Value square(const Value& a) {
    return unary(
        a, "square", [](const Matrix& x) -> Matrix { return x.cwiseProduct(x); },
        [](const Matrix& x, const Matrix& g) -> Matrix { return 2.0 * g.cwiseProduct(x); });
}

Value clamp_min(const Value& a, double floor) {
    return unary(
        a, "clamp_min", [floor](const Matrix& x) -> Matrix { return x.cwiseMax(floor); },
        [floor](const Matrix& x, const Matrix& g) -> Matrix {
            return (x.array() > floor).select(g, 0.0);
        });
}

Value scale(const Value& a, double c) {
    return unary(
        a, "scale", [c](const Matrix& x) -> Matrix { return c * x; },
        [c](const Matrix&, const Matrix& g) -> Matrix { return c * g; });
}

Value add_scalar(const Value& a, double c) {
    return unary(
        a, "add_scalar", [c](const Matrix& x) -> Matrix { return (x.array() + c).matrix(); },
        [](const Matrix&, const Matrix& g) -> Matrix { return g; });
}

Value neg(const Value& a) { return scale(a, -1.0); }

Value one_minus(const Value& a) {
    return unary(
        a, "one_minus", [](const Matrix& x) -> Matrix { return (1.0 - x.array()).matrix(); },
        [](const Matrix&, const Matrix& g) -> Matrix { return -g; });
}

Value sum(const Value& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    const auto r = a.rows(), c = a.cols();
    return t.push(Matrix::Constant(1, 1, a.data().sum()), a.requires_grad(), "sum",
                  [=](Tape& tp, const Matrix& g) { tp.accumulate(ia, Matrix(Matrix::Constant(r, c, g(0, 0)))); });
}

Value colsum(const Value& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    const auto r = a.rows();
    return t.push(a.data().colwise().sum(), a.requires_grad(), "colsum",
                  [=](Tape& tp, const Matrix& g) { tp.accumulate(ia, Matrix(g.replicate(r, 1))); });
}

Value slice_rows(const Value& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows())
        throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_str(a.data()));
    Tape& t = *a.tape();
    const int ia = a.id();
    const auto r = a.rows(), c = a.cols();
    return t.push(a.data().middleRows(start, count), a.requires_grad(), "slice_rows",
                  [=](Tape& tp, const Matrix& g) {
                      Matrix full = Matrix::Zero(r, c);
                      full.middleRows(start, count) = g;
                      tp.accumulate(ia, std::move(full));
                  });
}

Value slice_cols(const Value& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols())
        throw ShapeError("slice_cols: cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_str(a.data()));
    Tape& t = *a.tape();
    const int ia = a.id();
    const auto r = a.rows(), c = a.cols();
    return t.push(a.data().middleCols(start, count), a.requires_grad(), "slice_cols",
                  [=](Tape& tp, const Matrix& g) {
                      Matrix full = Matrix::Zero(r, c);
                      full.middleCols(start, count) = g;
                      tp.accumulate(ia, std::move(full));
                  });
}

Value concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    Tape& t = *parts.front().tape();
    const auto c = parts.front().cols();
    Eigen::Index total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.tape() != &t) throw std::invalid_argument("concat_rows: operands live on different tapes");
        if (p.cols() != c) shape_fail("concat_rows", parts.front().data(), p.data());
        total += p.rows();
        rg = rg || p.requires_grad();
    }
    Matrix y(total, c);
    std::vector<std::pair<int, Eigen::Index>> layout;
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        y.middleRows(off, p.rows()) = p.data();
        layout.emplace_back(p.id(), off);
        off += p.rows();
    }
    return t.push(std::move(y), rg, "concat_rows", [layout](Tape& tp, const Matrix& g) {
        for (const auto& [id, o] : layout)
            if (tp.requires_grad(id)) tp.accumulate(id, Matrix(g.middleRows(o, tp.value(id).rows())));
    });
}

Value concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no operands");
    Tape& t = *parts.front().tape();
    const auto r = parts.front().rows();
    Eigen::Index total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.tape() != &t) throw std::invalid_argument("concat_cols: operands live on different tapes");
        if (p.rows() != r) shape_fail("concat_cols", parts.front().data(), p.data());
        total += p.cols();
        rg = rg || p.requires_grad();
    }
    Matrix y(r, total);
    std::vector<std::pair<int, Eigen::Index>> layout;
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        y.middleCols(off, p.cols()) = p.data();
        layout.emplace_back(p.id(), off);
        off += p.cols();
    }
    return t.push(std::move(y), rg, "concat_cols", [layout](Tape& tp, const Matrix& g) {
        for (const auto& [id, o] : layout)
            if (tp.requires_grad(id)) tp.accumulate(id, Matrix(g.middleCols(o, tp.value(id).cols())));
    });
}

// ---------------------------------------------------------------------------

Matrix unpack_cholesky(const Eigen::Ref<const Vector>& diag, const Eigen::Ref<const Vector>& lower) {
    const auto d = diag.size();
    Matrix l = Matrix::Zero(d, d);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < i; ++j) l(i, j) = lower(k++);
        l(i, i) = diag(i);
    }
    return l;
}

Value mvn_chol_logpdf(const Value& residual, const Value& diag, const Value& lower) {
    const auto d = residual.rows();
    const auto n = residual.cols();
    if (diag.rows() != d || diag.cols() != n) shape_fail("mvn_chol_logpdf", residual.data(), diag.data());
    if (lower.rows() != d * (d - 1) / 2 || lower.cols() != n)
        shape_fail("mvn_chol_logpdf", residual.data(), lower.data());
    same_tape(residual, diag, "mvn_chol_logpdf");
    same_tape(residual, lower, "mvn_chol_logpdf");
    Tape& t = *residual.tape();

    static const double kLog2Pi = std::log(2.0 * M_PI);
    Matrix out(1, n);
    const Matrix& r = residual.data();
    const Matrix& dg = diag.data();
    const Matrix& lo = lower.data();
    for (Eigen::Index j = 0; j < n; ++j) {
        const Matrix l = unpack_cholesky(dg.col(j), lo.col(j));
        const Vector y = l.triangularView<Eigen::Lower>().solve(r.col(j));
        out(0, j) = -0.5 * y.squaredNorm() - dg.col(j).array().log().sum() - 0.5 * static_cast<double>(d) * kLog2Pi;
    }
    const int ir = residual.id(), idg = diag.id(), ilo = lower.id();
    const bool rg = residual.requires_grad() || diag.requires_grad() || lower.requires_grad();
    return t.push(std::move(out), rg, "mvn_chol_logpdf", [=](Tape& tp, const Matrix& g) {
        const Matrix& rr = tp.value(ir);
        const Matrix& dd = tp.value(idg);
        const Matrix& ll = tp.value(ilo);
        Matrix gr(d, n), gd(d, n), gl(ll.rows(), n);
        for (Eigen::Index j = 0; j < n; ++j) {
            const Matrix l = unpack_cholesky(dd.col(j), ll.col(j));
            const Vector y = l.triangularView<Eigen::Lower>().solve(rr.col(j));
            // a = L^{-T} y;  d/dr = -a;  d/dL = a y^T - diag(1/L_ii) on the lower triangle.
            const Vector a = l.transpose().triangularView<Eigen::Upper>().solve(y);
            const double gj = g(0, j);
            gr.col(j) = -gj * a;
            Eigen::Index k = 0;
            for (Eigen::Index i = 0; i < d; ++i) {
                for (Eigen::Index c = 0; c < i; ++c) gl(k++, j) = gj * a(i) * y(c);
                gd(i, j) = gj * (a(i) * y(i) - 1.0 / l(i, i));
            }
        }
        if (tp.requires_grad(ir)) tp.accumulate(ir, std::move(gr));
        if (tp.requires_grad(idg)) tp.accumulate(idg, std::move(gd));
        if (tp.requires_grad(ilo)) tp.accumulate(ilo, std::move(gl));
    });
}

// ---------------------------------------------------------------------------

double finite_diff_check(const std::function<double(const std::vector<Matrix>&)>& f,
                         const std::vector<Matrix>& params, const std::vector<Matrix>& grads, double step) {
    if (step <= 0) throw std::invalid_argument("finite_diff_check: step must be positive");
    if (params.size() != grads.size()) throw std::invalid_argument("finite_diff_check: params/grads size mismatch");
    std::vector<Matrix> work = params;
    double worst = 0.0;
    for (size_t p = 0; p < params.size(); ++p) {
        if (grads[p].rows() != params[p].rows() || grads[p].cols() != params[p].cols())
            shape_fail("finite_diff_check", params[p], grads[p]);
        for (Eigen::Index i = 0; i < params[p].size(); ++i) {
            const double orig = params[p](i);
            work[p](i) = orig + step;
            const double up = f(work);
            work[p](i) = orig - step;
            const double down = f(work);
            work[p](i) = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = grads[p](i);
            const double err = std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
            if (std::isnan(err)) return std::numeric_limits<double>::infinity();
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace rfn::ad
