#include "rfn/ode.hpp"

#include <cmath>

namespace rfn::ode {

using ad::Value;

Method parse_method(const std::string& name) {
    if (name == "euler") return Method::Euler;
    if (name == "rk4") return Method::Rk4;
    throw std::invalid_argument("unknown integration method '" + name + "' (expected euler or rk4)");
}

std::string to_string(Method m) { return m == Method::Euler ? "euler" : "rk4"; }

void IntegrationSpec::validate() const {
    if (n_steps < 1) throw std::invalid_argument("IntegrationSpec: n_steps must be >= 1");
    if (!std::isfinite(t0) || !std::isfinite(t1)) throw std::invalid_argument("IntegrationSpec: non-finite bounds");
}

namespace {

void check_finite(const Value& y, int step) {
    if (!y.data().allFinite())
        throw IntegrationError("integration produced NaN/Inf at step " + std::to_string(step), step);
}

// Weighted RK4 combination y + h/6 (k1 + 2k2 + 2k3 + k4), with `h` a tape value
// (1x1 or a 1 x cols row) so reverse steps and per-column steps share one path.
Value rk4_combine(const Value& y, const Value& k1, const Value& k2, const Value& k3, const Value& k4,
                  const Value& h_sixth) {
    const Value inner = add(add(k1, scale(add(k2, k3), 2.0)), k4);
    return add(y, hadamard(inner, h_sixth));
}

}  // namespace

Value integrate(const VectorField& field, const Value& y0, const IntegrationSpec& spec) {
    spec.validate();
    if (!y0.data().allFinite()) throw IntegrationError("integration initial state is not finite", 0);
    ad::Tape& tape = *y0.tape();
    const double h = spec.step();
    Value y = y0;
    if (spec.method == Method::Euler) {
        const Value hv = tape.constant(h);
        for (int i = 0; i < spec.n_steps; ++i) {
            const double t = spec.t0 + i * h;
            Value k = field(y, t);
            if (k.rows() != y.rows() || k.cols() != y.cols())
                throw ShapeError("vector field output shape differs from state shape");
            y = add(y, hadamard(k, hv));
            check_finite(y, i + 1);
        }
        return y;
    }
    const Value half = tape.constant(0.5 * h);
    const Value sixth = tape.constant(h / 6.0);
    for (int i = 0; i < spec.n_steps; ++i) {
        const double t = spec.t0 + i * h;
        const Value k1 = field(y, t);
        if (k1.rows() != y.rows() || k1.cols() != y.cols())
            throw ShapeError("vector field output shape differs from state shape");
        const Value k2 = field(add(y, hadamard(k1, half)), t + 0.5 * h);
        const Value k3 = field(add(y, hadamard(k2, half)), t + 0.5 * h);
        const Value k4 = field(add(y, scale(k3, h)), t + h);
        y = rk4_combine(y, k1, k2, k3, k4, sixth);
        check_finite(y, i + 1);
    }
    return y;
}

Augmented integrate_augmented(const VectorField& field, const TraceFn& trace_fn, const Value& y0,
                              const Value& ell0, const IntegrationSpec& spec) {
    spec.validate();
    if (!y0.data().allFinite()) throw IntegrationError("integration initial state is not finite", 0);
    ad::Tape& tape = *y0.tape();
    const double h = spec.step();
    Value y = y0;
    Value ell = ell0;
    if (spec.method == Method::Euler) {
        const Value hv = tape.constant(h);
        for (int i = 0; i < spec.n_steps; ++i) {
            const double t = spec.t0 + i * h;
            const Value k = field(y, t);
            const Value tr = trace_fn(y, t);
            y = add(y, hadamard(k, hv));
            ell = sub(ell, scale(tr, h));
            check_finite(y, i + 1);
        }
        return {y, ell};
    }
    const Value half = tape.constant(0.5 * h);
    const Value sixth = tape.constant(h / 6.0);
    for (int i = 0; i < spec.n_steps; ++i) {
        const double t = spec.t0 + i * h;
        const Value k1 = field(y, t);
        const Value y2 = add(y, hadamard(k1, half));
        const Value k2 = field(y2, t + 0.5 * h);
        const Value y3 = add(y, hadamard(k2, half));
        const Value k3 = field(y3, t + 0.5 * h);
        const Value y4 = add(y, scale(k3, h));
        const Value k4 = field(y4, t + h);
        const Value tr = add(add(trace_fn(y, t), scale(add(trace_fn(y2, t + 0.5 * h), trace_fn(y3, t + 0.5 * h)), 2.0)),
                             trace_fn(y4, t + h));
        y = rk4_combine(y, k1, k2, k3, k4, sixth);
        ell = sub(ell, scale(tr, h / 6.0));
        check_finite(y, i + 1);
    }
    return {y, ell};
}

int micro_steps(double horizon, double max_step) {
    if (horizon <= 0.0) return 0;
    return std::max(1, static_cast<int>(std::ceil(horizon / max_step - 1e-12)));
}

Value integrate_columns(const AutonomousField& field, const Value& y0, const Vector& horizon, double max_step,
                        Method method) {
    if (horizon.size() != y0.cols())
        throw ShapeError("integrate_columns: horizon has " + std::to_string(horizon.size()) + " entries for " +
                         std::to_string(y0.cols()) + " columns");
    if (!(max_step > 0)) throw std::invalid_argument("integrate_columns: max_step must be positive");
    ad::Tape& tape = *y0.tape();
    const auto cols = y0.cols();
    std::vector<int> steps(static_cast<size_t>(cols));
    int n = 0;
    for (Eigen::Index j = 0; j < cols; ++j) {
        if (horizon(j) < 0 || !std::isfinite(horizon(j)))
            throw std::invalid_argument("integrate_columns: horizons must be finite and non-negative");
        steps[static_cast<size_t>(j)] = micro_steps(horizon(j), max_step);
        n = std::max(n, steps[static_cast<size_t>(j)]);
    }
    Value y = y0;
    for (int i = 0; i < n; ++i) {
        Matrix h(1, cols);
        for (Eigen::Index j = 0; j < cols; ++j) {
            const int sj = steps[static_cast<size_t>(j)];
            h(0, j) = i < sj ? horizon(j) / sj : 0.0;
        }
        if (method == Method::Euler) {
            y = add(y, hadamard(field(y), tape.constant(h)));
        } else {
            const Value half = tape.constant(Matrix(0.5 * h));
            const Value full = tape.constant(h);
            const Value sixth = tape.constant(Matrix(h / 6.0));
            const Value k1 = field(y);
            const Value k2 = field(add(y, hadamard(k1, half)));
            const Value k3 = field(add(y, hadamard(k2, half)));
            const Value k4 = field(add(y, hadamard(k3, full)));
            y = rk4_combine(y, k1, k2, k3, k4, sixth);
        }
        check_finite(y, i + 1);
    }
    return y;
}

}  // namespace rfn::ode
