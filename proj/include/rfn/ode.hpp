#pragma once

// Fixed-step explicit integration of vector fields recorded on an autodiff tape.
// Gradients flow through the unrolled steps (discretize-then-optimize).

#include "rfn/autodiff.hpp"

#include <functional>
#include <stdexcept>
#include <string>

namespace rfn::ode {

enum class Method { Euler, Rk4 };

Method parse_method(const std::string& name);
std::string to_string(Method m);

struct IntegrationSpec {
    Method method = Method::Rk4;
    double t0 = 0.0;
    double t1 = 1.0;  // may be < t0 for reverse integration
    int n_steps = 20;

    double step() const { return (t1 - t0) / n_steps; }
    void validate() const;
};

// step() is the 1-based index of the failing step; 0 means a non-finite initial state.
class IntegrationError : public std::runtime_error {
public:
    IntegrationError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

// dy/dt = field(y, t). Conditioning context is captured by the callable.
using VectorField = std::function<ad::Value(const ad::Value& state, double time)>;
// Returns Tr[d field / d state] at (state, time): 1x1, or 1 x cols for per-column traces.
using TraceFn = std::function<ad::Value(const ad::Value& state, double time)>;
// Autonomous field used for per-column physical-time evolution.
using AutonomousField = std::function<ad::Value(const ad::Value& state)>;

ad::Value integrate(const VectorField& field, const ad::Value& y0, const IntegrationSpec& spec);

struct Augmented {
    ad::Value state;
    ad::Value ell;
};

// Jointly integrates dy/ds = field and d ell/ds = -trace_fn.
Augmented integrate_augmented(const VectorField& field, const TraceFn& trace_fn, const ad::Value& y0,
                              const ad::Value& ell0, const IntegrationSpec& spec);

// Per-column horizons: column j of y0 is advanced over `horizon[j] >= 0` with
// ceil(horizon[j] / max_step) equal steps. Columns that finish early take
// zero-length steps, which leave them bit-unchanged.
ad::Value integrate_columns(const AutonomousField& field, const ad::Value& y0, const Vector& horizon,
                            double max_step, Method method);

// Number of equal micro-steps used for a horizon under `max_step`.
int micro_steps(double horizon, double max_step);

}  // namespace rfn::ode
