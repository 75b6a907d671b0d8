#include "rfn/flow.hpp"

#include <cmath>
#include <stdexcept>

namespace rfn::flow {

using ad::Value;

Covariance parse_covariance(const std::string& name) {
    if (name == "full") return Covariance::Full;
    if (name == "diag" || name == "diagonal") return Covariance::Diagonal;
    throw std::invalid_argument("unknown covariance '" + name + "' (expected full or diag)");
}

std::string to_string(Covariance c) { return c == Covariance::Full ? "full" : "diag"; }

int head_outputs(int dim, Covariance c) {
    return c == Covariance::Full ? 2 * dim + dim * (dim - 1) / 2 : 2 * dim;
}

void init(ParamSet& params, const JointOptions& opt, std::mt19937_64& rng) {
    const int d = opt.dim, h = opt.hidden;
    if (d < 1 || h < 1) throw std::invalid_argument("flow::init: dim and hidden must be positive");
    const int out = head_outputs(d, opt.covariance);
    params.add("head.W1", glorot(h, h, rng));
    params.add("head.b1", Matrix::Zero(h, 1));
    params.add("head.W2", Matrix(0.1 * glorot(out, h, rng)));
    Matrix b2 = Matrix::Zero(out, 1);
    // softplus(0.5413) = 1: unit base scale at initialisation.
    b2.block(d, 0, d, 1).setConstant(0.5413248546129181);
    params.add("head.b2", b2);
    if (!opt.use_flow) return;
    params.add("flow.W_z", Matrix(0.1 * glorot(d, d, rng)));
    params.add("flow.W_h", Matrix(0.1 * glorot(d, h, rng)));
    params.add("flow.b_z", Matrix::Zero(d, 1));
    params.add("flow.w_s", Matrix::Zero(1, 1));
    params.add("flow.b_s", Matrix::Zero(1, 1));
}

Base base_params(const Binding& p, const JointOptions& opt, const Value& h) {
    const int d = opt.dim;
    const Value hidden = ad::tanh(ad::add(ad::matmul(p["head.W1"], h), p["head.b1"]));
    const Value out = ad::add(ad::matmul(p["head.W2"], hidden), p["head.b2"]);
    Base b;
    b.mu = ad::slice_rows(out, 0, d);
    const Value pos = ad::clamp_min(ad::softplus(ad::slice_rows(out, d, d)), kScaleFloor);
    if (opt.covariance == Covariance::Full) {
        b.scale = pos;
        b.lower = ad::slice_rows(out, 2 * d, d * (d - 1) / 2);
    } else {
        // pos is the variance; scale = sqrt(variance).
        b.scale = ad::exp(ad::scale(ad::log(pos), 0.5));
    }
    return b;
}

Value field_context(const Binding& p, const Value& h) { return ad::add(ad::matmul(p["flow.W_h"], h), p["flow.b_z"]); }

namespace {

Value gate(const Binding& p, double s) {
    return ad::sigmoid(ad::add(ad::scale(p["flow.w_s"], s), p["flow.b_s"]));
}

}  // namespace

Value field(const Binding& p, const Value& z, double s, const Value& context, const Matrix* mask) {
    if (!mask) return ad::hadamard(ad::add(ad::matmul(p["flow.W_z"], z), context), gate(p, s));
    const Value m = p.tape().constant(*mask);
    const Value inner = ad::add(ad::matmul(p["flow.W_z"], ad::hadamard(m, z)), context);
    return ad::hadamard(m, ad::hadamard(inner, gate(p, s)));
}

Value exact_trace(const Binding& p, double s, const Matrix* mask) {
    const Value& wz = p["flow.W_z"];
    const auto d = wz.rows();
    const Value diag_only = ad::hadamard(wz, p.tape().constant(Matrix(Matrix::Identity(d, d))));
    if (!mask) return ad::hadamard(ad::sum(diag_only), gate(p, s));
    const Value diag = ad::matmul(diag_only, p.tape().constant(Matrix(Matrix::Ones(d, 1))));
    const Value masked = ad::colsum(ad::hadamard(p.tape().constant(*mask), diag));
    return ad::hadamard(masked, gate(p, s));
}

Encoded encode(const Binding& p, const JointOptions& opt, const Value& x, const Value& h, const Matrix* mask) {
    if (!opt.use_flow) return {x, p.tape().constant(0.0)};
    const Value ctx = field_context(p, h);
    ode::IntegrationSpec back = opt.spec;
    back.t0 = opt.spec.t1;
    back.t1 = opt.spec.t0;
    auto f = [&](const Value& z, double s) { return field(p, z, s, ctx, mask); };
    auto tr = [&](const Value&, double s) { return exact_trace(p, s, mask); };
    const Value ell0 = mask ? p.tape().constant(Matrix(Matrix::Zero(1, x.cols()))) : p.tape().constant(0.0);
    const ode::Augmented a = ode::integrate_augmented(f, tr, x, ell0, back);
    // ell accumulates -trace along s1 -> s0, so it holds the integral over [s0, s1].
    return {a.state, ad::neg(a.ell)};
}

Value decode(const Binding& p, const JointOptions& opt, const Value& z, const Value& h, const Matrix* mask) {
    if (!opt.use_flow) return z;
    const Value ctx = field_context(p, h);
    return ode::integrate([&](const Value& y, double s) { return field(p, y, s, ctx, mask); }, z, opt.spec);
}

Value base_logpdf(const Base& base, const JointOptions& opt, const Value& z, const Matrix* mask) {
    ad::Tape& t = *z.tape();
    const Value r = ad::sub(z, base.mu);
    if (opt.covariance == Covariance::Full) {
        if (mask && (mask->array() != 1.0).any())
            throw std::invalid_argument("base_logpdf: full covariance needs fully observed columns");
        return ad::mvn_chol_logpdf(r, base.scale, base.lower);
    }
    static const double kHalfLog2Pi = 0.5 * std::log(2.0 * M_PI);
    const Value std_r = ad::div(r, base.scale);
    const Value per_dim =
        ad::add_scalar(ad::neg(ad::add(ad::log(base.scale), ad::scale(ad::square(std_r), 0.5))), -kHalfLog2Pi);
    if (!mask) return ad::colsum(per_dim);
    return ad::colsum(ad::hadamard(t.constant(*mask), per_dim));
}

Value log_likelihood(const Binding& p, const JointOptions& opt, const Matrix& x, const Value& h, const Matrix* mask) {
    if (x.rows() != opt.dim || x.cols() != h.cols()) throw ShapeError("log_likelihood: x must be D x N matching h");
    if (mask) {
        if (mask->rows() != x.rows() || mask->cols() != x.cols()) throw ShapeError("log_likelihood: mask shape");
        for (Eigen::Index j = 0; j < mask->cols(); ++j)
            if (mask->col(j).sum() <= 0.0) throw std::invalid_argument("log_likelihood: all-zero mask");
    }
    ad::Tape& t = p.tape();
    const Base base = base_params(p, opt, h);
    const Encoded e = encode(p, opt, t.constant(x), h, mask);
    return ad::add(base_logpdf(base, opt, e.z, mask), e.delta_logdet);
}

Matrix sample(const ParamSet& params, const JointOptions& opt, const Vector& h, int n, std::mt19937_64& rng,
              const Vector* mask) {
    if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
    if (h.size() != opt.hidden) throw ShapeError("sample: hidden state has the wrong size");
    if (mask && mask->size() != opt.dim) throw ShapeError("sample: mask has the wrong size");
    ad::Tape t(false);
    const Binding p(t, params);
    const Value h1 = t.constant(Matrix(h));
    const Base base = base_params(p, opt, h1);
    const int d = opt.dim;
    const Vector mu = base.mu.data().col(0);
    Matrix chol = Matrix::Zero(d, d);
    if (opt.covariance == Covariance::Full) {
        chol = ad::unpack_cholesky(base.scale.data().col(0), base.lower.data().col(0));
    } else {
        chol.diagonal() = base.scale.data().col(0);
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix eps(d, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < d; ++i) eps(i, j) = normal(rng);
    const Matrix z = (chol * eps).colwise() + mu;
    const Value hn = t.constant(Matrix(h.replicate(1, n)));
    const Matrix m = mask ? Matrix(mask->replicate(1, n)) : Matrix();
    const Value x = decode(p, opt, t.constant(z), hn, mask ? &m : nullptr);
    return x.data().transpose();
}

double finite_difference_trace(const std::function<Vector(const Vector&)>& f, const Vector& z, double step) {
    double tr = 0.0;
    Vector zp = z, zm = z;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        zp(i) = z(i) + step;
        zm(i) = z(i) - step;
        tr += (f(zp)(i) - f(zm)(i)) / (2.0 * step);
        zp(i) = zm(i) = z(i);
    }
    return tr;
}

}  // namespace rfn::flow
