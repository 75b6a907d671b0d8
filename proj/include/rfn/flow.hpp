#pragma once

// Conditional continuous normalizing flow. A hidden-state-conditioned Gaussian
// base N(mu(h), Sigma(h)) at flow time s0 = 0 is carried to data space at
// s1 = 1 by the gated affine field
//   f(z, s, h) = (W_z z + W_h h + b_z) * sigmoid(w_s s + b_s).
// All functions work column-wise: column j of x/h is one (instance, event).

#include "rfn/ode.hpp"
#include "rfn/params.hpp"

#include <optional>
#include <random>

namespace rfn::flow {

enum class Covariance { Full, Diagonal };

Covariance parse_covariance(const std::string& name);
std::string to_string(Covariance c);

inline constexpr double kScaleFloor = 1e-4;

struct JointOptions {
    int dim = 1;
    int hidden = 64;
    Covariance covariance = Covariance::Full;
    // false: Gaussian head only (baseline), no flow parameters.
    bool use_flow = true;
    // Flow-time integration; encode runs it backwards from t1 to t0.
    ode::IntegrationSpec spec{};
};

// Adds "head.*" and, with use_flow, "flow.*" parameters.
void init(ParamSet& params, const JointOptions& opt, std::mt19937_64& rng);

// Per-column base parameters. `scale` holds the Cholesky diagonal (Full) or the
// per-dimension standard deviation sqrt(Sigma^d) (Diagonal).
struct Base {
    ad::Value mu;      // D x N
    ad::Value scale;   // D x N
    ad::Value lower;   // D(D-1)/2 x N, Full only
};

Base base_params(const Binding& p, const JointOptions& opt, const ad::Value& h);

// Output rows of the head's final layer.
int head_outputs(int dim, Covariance c);

// W_h h + b_z, the hidden-state term of the field (D x N).
ad::Value field_context(const Binding& p, const ad::Value& h);

// Field value at (z, s). With a mask (D x N, 0/1) the masked field
// m * f(m * z) is used, which leaves unobserved components fixed.
ad::Value field(const Binding& p, const ad::Value& z, double s, const ad::Value& context, const Matrix* mask = nullptr);

// Tr[df/dz] = sigmoid(w_s s + b_s) * Tr(W_z): 1 x 1, or 1 x N masked.
ad::Value exact_trace(const Binding& p, double s, const Matrix* mask = nullptr);

struct Encoded {
    ad::Value z;
    ad::Value delta_logdet;  // integral of the trace from s1 down to s0; 1 x 1 or 1 x N
};

// Integrates x from s1 back to s0 together with the trace integral.
Encoded encode(const Binding& p, const JointOptions& opt, const ad::Value& x, const ad::Value& h,
               const Matrix* mask = nullptr);

// Forward map s0 -> s1 (no trace). With a mask the masked field is used.
ad::Value decode(const Binding& p, const JointOptions& opt, const ad::Value& z, const ad::Value& h,
                 const Matrix* mask = nullptr);

// log p(x | h) for every column (1 x N). Full covariance needs fully observed
// columns; with a mask the base is evaluated per dimension and summed over the
// observed entries, plus the masked trace integral.
ad::Value log_likelihood(const Binding& p, const JointOptions& opt, const Matrix& x, const ad::Value& h,
                         const Matrix* mask = nullptr);

// Base log-density alone (Gaussian baseline objective when use_flow is false).
ad::Value base_logpdf(const Base& base, const JointOptions& opt, const ad::Value& z, const Matrix* mask);

// n draws (n x D) from p(x | h) for a single hidden state. By default every
// dimension goes through the full field. With a mask, the observed
// coordinates follow the masked density that log_likelihood evaluates, and
// unobserved ones keep their base draws.
Matrix sample(const ParamSet& params, const JointOptions& opt, const Vector& h, int n, std::mt19937_64& rng,
              const Vector* mask = nullptr);

// Trace of the central-difference Jacobian of `f` at z (for checking fields).
double finite_difference_trace(const std::function<Vector(const Vector&)>& f, const Vector& z, double step = 1e-5);

}  // namespace rfn::flow
