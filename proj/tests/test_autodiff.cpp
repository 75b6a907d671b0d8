#include "doctest.h"

#include "rfn/autodiff.hpp"

#include <cmath>
#include <random>

using namespace rfn;
using namespace rfn::ad;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
    return m;
}

// Scalar objective sum(w .* op(inputs)) with fixed random weights, so every
// output entry contributes a distinct gradient.
using Op = std::function<Value(const std::vector<Value>&)>;

double check_op(const Op& op, const std::vector<Matrix>& inputs, std::mt19937_64& rng) {
    Matrix weights;
    auto eval = [&](const std::vector<Matrix>& xs, std::vector<Matrix>* grads) {
        Tape t;
        std::vector<Value> vs;
        for (const auto& x : xs) vs.push_back(t.parameter(x));
        const Value out = op(vs);
        if (weights.size() == 0) weights = random_matrix(out.rows(), out.cols(), rng, 0.5, 1.5);
        const Value loss = sum(hadamard(out, t.constant(weights)));
        if (grads) {
            t.backward(loss);
            grads->clear();
            for (const auto& v : vs) grads->push_back(t.grad(v));
        }
        return loss.scalar();
    };
    std::vector<Matrix> grads;
    eval(inputs, &grads);
    return finite_diff_check([&](const std::vector<Matrix>& xs) { return eval(xs, nullptr); }, inputs, grads, 1e-4);
}

}  // namespace

TEST_CASE("forward examples") {
    Tape t;
    CHECK(sigmoid(t.constant(0.0)).scalar() == doctest::Approx(0.5).epsilon(1e-15));
    const Matrix v = (Matrix(3, 1) << 1.5, -2.0, 0.25).finished();
    const Value iv = matmul(t.constant(Matrix(Matrix::Identity(3, 3))), t.constant(v));
    CHECK(iv.data() == v);
    CHECK(softplus(t.constant(0.0)).scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("simple derivatives") {
    {
        Tape t;
        const Value x = t.parameter(Matrix::Constant(1, 1, 3.0));
        t.backward(square(x));
        CHECK(t.grad(x)(0, 0) == doctest::Approx(6.0));
    }
    {
        Tape t;
        const Value x = t.parameter(Matrix::Zero(1, 1));
        t.backward(sigmoid(x));
        CHECK(t.grad(x)(0, 0) == doctest::Approx(0.25));
    }
}

TEST_CASE("sum(tanh(Wx)) gradient matches finite differences") {
    std::mt19937_64 rng(1);
    const Matrix w = random_matrix(4, 3, rng), x = random_matrix(3, 1, rng);
    auto f = [&](const std::vector<Matrix>& ps, Matrix* g) {
        Tape t;
        const Value wv = t.parameter(ps[0]);
        const Value loss = sum(tanh(matmul(wv, t.constant(x))));
        if (g) {
            t.backward(loss);
            *g = t.grad(wv);
        }
        return loss.scalar();
    };
    Matrix g;
    f({w}, &g);
    CHECK(finite_diff_check([&](const std::vector<Matrix>& ps) { return f(ps, nullptr); }, {w}, {g}, 1e-4) < 1e-5);
}

TEST_CASE("finite_diff_check examples") {
    const Matrix x = Matrix::Constant(1, 1, 2.0);
    const Matrix g = Matrix::Constant(1, 1, 12.0);
    CHECK(finite_diff_check([](const std::vector<Matrix>& p) { return std::pow(p[0](0, 0), 3); }, {x}, {g}, 1e-4) <
          1e-6);
    CHECK(finite_diff_check([](const std::vector<Matrix>&) { return 7.0; }, {x}, {Matrix::Zero(1, 1)}, 1e-4) == 0.0);
    CHECK(std::isinf(
        finite_diff_check([](const std::vector<Matrix>&) { return std::nan(""); }, {x}, {Matrix::Zero(1, 1)}, 1e-4)));
}

TEST_CASE("every primitive passes the finite-difference check") {
    std::mt19937_64 rng(7);
    const Matrix a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng);
    const Matrix pos = random_matrix(3, 4, rng, 0.5, 2.0);
    const Matrix col = random_matrix(3, 1, rng), row = random_matrix(1, 4, rng), s = random_matrix(1, 1, rng);
    const Matrix m = random_matrix(4, 2, rng);
    // Inputs bounded away from the kinks of relu/clamp.
    Matrix away = random_matrix(3, 4, rng, 0.2, 1.0);
    for (Eigen::Index i = 0; i < away.size(); i += 2) away(i) = -away(i);

    struct Case {
        const char* name;
        Op op;
        std::vector<Matrix> in;
    };
    const std::vector<Case> cases{
        {"add", [](auto& v) { return add(v[0], v[1]); }, {a, b}},
        {"add col", [](auto& v) { return add(v[0], v[1]); }, {a, col}},
        {"add row", [](auto& v) { return add(v[1], v[0]); }, {a, row}},
        {"add scalar", [](auto& v) { return add(v[0], v[1]); }, {a, s}},
        {"sub", [](auto& v) { return sub(v[0], v[1]); }, {a, col}},
        {"hadamard", [](auto& v) { return hadamard(v[0], v[1]); }, {a, b}},
        {"hadamard row", [](auto& v) { return hadamard(v[0], v[1]); }, {a, row}},
        {"div", [](auto& v) { return div(v[0], v[1]); }, {a, pos}},
        {"div col", [](auto& v) { return div(v[0], v[1]); }, {a, Matrix(col.cwiseAbs().array() + 0.5)}},
        {"matmul", [](auto& v) { return matmul(v[0], v[1]); }, {a, m}},
        {"sigmoid", [](auto& v) { return sigmoid(v[0]); }, {a}},
        {"tanh", [](auto& v) { return tanh(v[0]); }, {a}},
        {"softplus", [](auto& v) { return softplus(v[0]); }, {a}},
        {"exp", [](auto& v) { return exp(v[0]); }, {a}},
        {"log", [](auto& v) { return log(v[0]); }, {pos}},
        {"relu", [](auto& v) { return relu(v[0]); }, {away}},
        {"square", [](auto& v) { return square(v[0]); }, {a}},
        {"clamp_min", [](auto& v) { return clamp_min(v[0], 0.0); }, {away}},
        {"scale", [](auto& v) { return scale(v[0], -2.5); }, {a}},
        {"add_scalar", [](auto& v) { return add_scalar(v[0], 3.0); }, {a}},
        {"neg", [](auto& v) { return neg(v[0]); }, {a}},
        {"one_minus", [](auto& v) { return one_minus(v[0]); }, {a}},
        {"sum", [](auto& v) { return sum(v[0]); }, {a}},
        {"colsum", [](auto& v) { return colsum(v[0]); }, {a}},
        {"slice_rows", [](auto& v) { return slice_rows(v[0], 1, 2); }, {a}},
        {"slice_cols", [](auto& v) { return slice_cols(v[0], 1, 2); }, {a}},
        {"concat_rows", [](auto& v) { return concat_rows({v[0], v[1]}); }, {a, row}},
        {"concat_cols", [](auto& v) { return concat_cols({v[0], v[1]}); }, {a, col}},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        CHECK(check_op(c.op, c.in, rng) < 1e-5);
    }
}

TEST_CASE("mvn_chol_logpdf matches the direct density and its gradient") {
    std::mt19937_64 rng(3);
    const int d = 3, n = 4;
    const Matrix r = random_matrix(d, n, rng);
    const Matrix diag = random_matrix(d, n, rng, 0.5, 1.5);
    const Matrix lower = random_matrix(d * (d - 1) / 2, n, rng, -0.5, 0.5);
    Tape t;
    const Value lp = mvn_chol_logpdf(t.constant(r), t.constant(diag), t.constant(lower));
    for (int j = 0; j < n; ++j) {
        Matrix l = Matrix::Zero(d, d);
        int k = 0;
        for (int i = 0; i < d; ++i) {
            for (int c = 0; c < i; ++c) l(i, c) = lower(k++, j);
            l(i, i) = diag(i, j);
        }
        const Matrix sigma = l * l.transpose();
        const double quad = r.col(j).dot(sigma.inverse() * r.col(j));
        const double expect = -0.5 * quad - 0.5 * std::log(sigma.determinant()) - 0.5 * d * std::log(2 * M_PI);
        CHECK(lp.data()(0, j) == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(check_op([](auto& v) { return mvn_chol_logpdf(v[0], v[1], v[2]); }, {r, diag, lower}, rng) < 1e-5);
}

TEST_CASE("shape errors name the primitive") {
    Tape t;
    const Value a = t.constant(Matrix::Zero(2, 3)), b = t.constant(Matrix::Zero(3, 2));
    CHECK_THROWS_AS(add(a, b), ShapeError);
    try {
        matmul(a, a);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    }
}

TEST_CASE("backward requires a scalar root") {
    Tape t;
    const Value a = t.parameter(Matrix::Ones(2, 2));
    CHECK_THROWS(t.backward(tanh(a)));
}

TEST_CASE("backward is deterministic and accumulates additively") {
    std::mt19937_64 rng(11);
    const Matrix x0 = random_matrix(3, 2, rng);
    auto grad_of = [&](int which) {
        Tape t;
        const Value x = t.parameter(x0);
        const Value f = sum(tanh(x));
        const Value g = sum(square(x));
        const Value root = which == 0 ? f : which == 1 ? g : add(f, g);
        t.backward(root);
        return t.grad(x);
    };
    CHECK(grad_of(2) == grad_of(2));
    const Matrix sum_parts = grad_of(0) + grad_of(1);
    CHECK((grad_of(2) - sum_parts).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("no-grad tape still computes values") {
    Tape t(false);
    const Value x = t.parameter(Matrix::Constant(1, 1, 2.0));
    CHECK(exp(x).scalar() == doctest::Approx(std::exp(2.0)));
    CHECK_FALSE(t.recording());
}
