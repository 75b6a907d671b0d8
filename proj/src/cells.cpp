#include "rfn/cells.hpp"

#include <cmath>
#include <stdexcept>

namespace rfn::cells {

using ad::Value;

CellKind parse_cell_kind(const std::string& name) {
    if (name == "gruode") return CellKind::GruOde;
    if (name == "gru-d" || name == "grud") return CellKind::GruD;
    if (name == "odernn") return CellKind::OdeRnn;
    if (name == "odelstm") return CellKind::OdeLstm;
    throw std::invalid_argument("unknown cell '" + name + "' (expected gruode, gru-d, odernn or odelstm)");
}

std::string to_string(CellKind k) {
    switch (k) {
        case CellKind::GruOde: return "gruode";
        case CellKind::GruD: return "gru-d";
        case CellKind::OdeRnn: return "odernn";
        case CellKind::OdeLstm: return "odelstm";
    }
    return "?";
}

namespace {

void add_gate_set(ParamSet& params, const std::string& prefix, const std::vector<std::string>& gates, int in, int hidden,
                  std::mt19937_64& rng, bool with_input = true) {
    for (const auto& g : gates) {
        if (with_input) params.add(prefix + "W_" + g, glorot(hidden, in, rng));
        params.add(prefix + "U_" + g, glorot(hidden, hidden, rng));
        params.add(prefix + "b_" + g, Matrix::Zero(hidden, 1));
    }
}

void add_mlp_field(ParamSet& params, int hidden, std::mt19937_64& rng) {
    params.add("cell.f_W1", glorot(hidden, hidden, rng));
    params.add("cell.f_b1", Matrix::Zero(hidden, 1));
    params.add("cell.f_W2", Matrix(0.1 * glorot(hidden, hidden, rng)));
    params.add("cell.f_b2", Matrix::Zero(hidden, 1));
}

Value mlp_field(const Binding& p, const Value& h) {
    const Value hidden = ad::tanh(ad::add(ad::matmul(p["cell.f_W1"], h), p["cell.f_b1"]));
    return ad::add(ad::matmul(p["cell.f_W2"], hidden), p["cell.f_b2"]);
}

// out = a * new + (1 - a) * old, exact for a in {0, 1}.
Value blend(ad::Tape& t, const Matrix& active, const Value& fresh, const Value& old) {
    if ((active.array() == 1.0).all()) return fresh;
    const Value a = t.constant(active);
    const Value na = t.constant(Matrix((1.0 - active.array()).matrix()));
    return ad::add(ad::hadamard(fresh, a), ad::hadamard(old, na));
}

// ---------------------------------------------------------------------------

class GruOdeCell final : public Cell {
public:
    using Cell::Cell;

    void init(ParamSet& params, std::mt19937_64& rng) const override {
        const int h = options().hidden;
        add_gate_set(params, "cell.c_", {"r", "z", "h"}, options().dim, h, rng, options().held_input);
        add_gate_set(params, "cell.u_", {"r", "z", "h"}, input_dim(), h, rng);
    }

    State evolve(const Binding& p, const State& s, const Vector& horizon) const override {
        ad::Tape& t = p.tape();
        Value br = p["cell.c_b_r"], bz = p["cell.c_b_z"], bh = p["cell.c_b_h"];
        if (options().held_input) {
            const Value x = t.constant(s.x_last);
            br = ad::add(ad::matmul(p["cell.c_W_r"], x), br);
            bz = ad::add(ad::matmul(p["cell.c_W_z"], x), bz);
            bh = ad::add(ad::matmul(p["cell.c_W_h"], x), bh);
        }
        const Value ur = p["cell.c_U_r"], uz = p["cell.c_U_z"], uh = p["cell.c_U_h"];
        auto field = [&](const Value& h) {
            const Value r = ad::sigmoid(ad::add(ad::matmul(ur, h), br));
            const Value z = ad::sigmoid(ad::add(ad::matmul(uz, h), bz));
            const Value cand = ad::tanh(ad::add(ad::matmul(uh, ad::hadamard(r, h)), bh));
            return ad::hadamard(ad::one_minus(z), ad::sub(cand, h));
        };
        State out = s;
        out.h = ode::integrate_columns(field, s.h, horizon, options().max_step, options().method);
        out.time = s.time + horizon.transpose();
        return out;
    }

protected:
    State update_active(const Binding& p, const State& s, const EventInputs& in, const Matrix&) const override {
        State out = s;
        out.h = gru_step(p, "cell.u_", p.tape().constant(input_matrix(in)), s.h);
        return out;
    }
};

class GruDCell final : public Cell {
public:
    using Cell::Cell;

    void init(ParamSet& params, std::mt19937_64& rng) const override {
        const int h = options().hidden, d = options().dim;
        add_gate_set(params, "cell.u_", {"r", "z", "h"}, d, h, rng);
        for (const char* g : {"r", "z", "h"}) params.add(std::string("cell.u_V_") + g, glorot(h, d, rng));
        params.add("cell.gx_w", Matrix::Constant(d, 1, 0.1));
        params.add("cell.gx_b", Matrix::Zero(d, 1));
        params.add("cell.gh_W", Matrix(0.1 * glorot(h, d, rng).cwiseAbs()));
        params.add("cell.gh_b", Matrix::Zero(h, 1));
        params.add("cell.x_mean", Matrix::Zero(d, 1), false);
    }

    State evolve(const Binding&, const State& s, const Vector& horizon) const override {
        State out = s;
        out.time = s.time + horizon.transpose();
        return out;
    }

protected:
    State update_active(const Binding& p, const State& s, const EventInputs& in, const Matrix& t) const override {
        ad::Tape& tp = p.tape();
        const Matrix delta_m = (t.replicate(s.t_last.rows(), 1) - s.t_last).cwiseMax(0.0);
        const Value delta = tp.constant(delta_m);
        // gamma = exp(-max(0, w * delta + b))
        const Value gx = ad::exp(ad::neg(ad::relu(ad::add(ad::hadamard(delta, p["cell.gx_w"]), p["cell.gx_b"]))));
        const Value gh =
            ad::exp(ad::neg(ad::relu(ad::add(ad::matmul(p["cell.gh_W"], delta), p["cell.gh_b"]))));
        const Value xm = p["cell.x_mean"];
        const Value m = tp.constant(in.mask);
        const Value nm = tp.constant(Matrix((1.0 - in.mask.array()).matrix()));
        const Value fill = ad::add(ad::hadamard(gx, ad::sub(tp.constant(s.x_last), xm)), xm);
        const Value xhat = ad::add(ad::hadamard(m, tp.constant(in.x)), ad::hadamard(nm, fill));
        const Value hdec = ad::hadamard(gh, s.h);
        State out = s;
        out.h = gru_step(p, "cell.u_", xhat, hdec, &m);
        return out;
    }
};

class OdeRnnCell final : public Cell {
public:
    using Cell::Cell;

    void init(ParamSet& params, std::mt19937_64& rng) const override {
        add_mlp_field(params, options().hidden, rng);
        add_gate_set(params, "cell.u_", {"r", "z", "h"}, input_dim(), options().hidden, rng);
    }

    State evolve(const Binding& p, const State& s, const Vector& horizon) const override {
        State out = s;
        out.h = ode::integrate_columns([&](const Value& h) { return mlp_field(p, h); }, s.h, horizon,
                                       options().max_step, options().method);
        out.time = s.time + horizon.transpose();
        return out;
    }

protected:
    State update_active(const Binding& p, const State& s, const EventInputs& in, const Matrix&) const override {
        State out = s;
        out.h = gru_step(p, "cell.u_", p.tape().constant(input_matrix(in)), s.h);
        return out;
    }
};

class OdeLstmCell final : public Cell {
public:
    using Cell::Cell;

    void init(ParamSet& params, std::mt19937_64& rng) const override {
        add_mlp_field(params, options().hidden, rng);
        add_gate_set(params, "cell.u_", {"f", "i", "o", "c"}, input_dim(), options().hidden, rng);
        params.get("cell.u_b_f").setOnes();
    }

    State evolve(const Binding& p, const State& s, const Vector& horizon) const override {
        State out = s;
        out.h = ode::integrate_columns([&](const Value& h) { return mlp_field(p, h); }, s.h, horizon,
                                       options().max_step, options().method);
        out.time = s.time + horizon.transpose();
        return out;
    }

protected:
    State update_active(const Binding& p, const State& s, const EventInputs& in, const Matrix&) const override {
        const Value x = p.tape().constant(input_matrix(in));
        auto gate = [&](const char* g) {
            const std::string n(g);
            return ad::add(ad::add(ad::matmul(p["cell.u_W_" + n], x), ad::matmul(p["cell.u_U_" + n], s.h)),
                           p["cell.u_b_" + n]);
        };
        const Value f = ad::sigmoid(gate("f"));
        const Value i = ad::sigmoid(gate("i"));
        const Value o = ad::sigmoid(gate("o"));
        const Value cand = ad::tanh(gate("c"));
        State out = s;
        out.c = ad::add(ad::hadamard(f, s.c), ad::hadamard(i, cand));
        out.h = ad::hadamard(o, ad::tanh(out.c));
        return out;
    }
};

}  // namespace

// ---------------------------------------------------------------------------

Value gru_step(const Binding& p, const std::string& prefix, const Value& input, const Value& h, const Value* extra) {
    auto pre = [&](const char* g) {
        const std::string n(g);
        Value a = ad::add(ad::matmul(p[prefix + "W_" + n], input), p[prefix + "b_" + n]);
        if (extra) a = ad::add(a, ad::matmul(p[prefix + "V_" + n], *extra));
        return a;
    };
    const Value r = ad::sigmoid(ad::add(pre("r"), ad::matmul(p[prefix + "U_r"], h)));
    const Value z = ad::sigmoid(ad::add(pre("z"), ad::matmul(p[prefix + "U_z"], h)));
    const Value cand = ad::tanh(ad::add(pre("h"), ad::matmul(p[prefix + "U_h"], ad::hadamard(r, h))));
    return ad::add(ad::hadamard(z, h), ad::hadamard(ad::one_minus(z), cand));
}

State Cell::initial(const Binding& p, Eigen::Index batch) const {
    ad::Tape& t = p.tape();
    State s;
    s.h = t.constant(Matrix::Zero(opt_.hidden, batch));
    if (kind_ == CellKind::OdeLstm) s.c = t.constant(Matrix::Zero(opt_.hidden, batch));
    Matrix mean = Matrix::Zero(opt_.dim, 1);
    if (kind_ == CellKind::GruD) mean = p["cell.x_mean"].data();
    s.x_last = mean.replicate(1, batch);
    s.t_last = Matrix::Zero(opt_.dim, batch);
    s.time = Matrix::Zero(1, batch);
    return s;
}

Matrix Cell::input_matrix(const EventInputs& in) const {
    const Matrix x = in.x.cwiseProduct(in.mask);
    if (!opt_.mask_input) return x;
    Matrix out(2 * opt_.dim, in.x.cols());
    out.topRows(opt_.dim) = x;
    out.bottomRows(opt_.dim) = in.mask;
    return out;
}

State Cell::update(const Binding& p, const State& s, const EventInputs& in) const {
    const auto b = s.h.cols();
    if (in.x.rows() != opt_.dim || in.x.cols() != b || in.mask.rows() != opt_.dim || in.mask.cols() != b ||
        in.active.rows() != 1 || in.active.cols() != b)
        throw ShapeError("Cell::update: event inputs do not match the state's batch");
    for (Eigen::Index j = 0; j < b; ++j)
        if (in.active(0, j) == 1.0 && in.mask.col(j).sum() <= 0.0)
            throw std::invalid_argument("Cell::update: all-zero mask is not an event");

    State fresh = update_active(p, s, in, s.time);
    ad::Tape& t = p.tape();
    State out = fresh;
    out.h = blend(t, in.active, fresh.h, s.h);
    if (kind_ == CellKind::OdeLstm) out.c = blend(t, in.active, fresh.c, s.c);
    out.x_last = s.x_last;
    out.t_last = s.t_last;
    for (Eigen::Index j = 0; j < b; ++j) {
        if (in.active(0, j) != 1.0) continue;
        for (Eigen::Index d = 0; d < opt_.dim; ++d)
            if (in.mask(d, j) == 1.0) {
                out.x_last(d, j) = in.x(d, j);
                out.t_last(d, j) = s.time(0, j);
            }
    }
    return out;
}

std::unique_ptr<Cell> make_cell(CellKind kind, const CellOptions& opt) {
    if (opt.dim < 1 || opt.hidden < 1) throw std::invalid_argument("make_cell: dim and hidden must be positive");
    switch (kind) {
        case CellKind::GruOde: return std::make_unique<GruOdeCell>(kind, opt);
        case CellKind::GruD: return std::make_unique<GruDCell>(kind, opt);
        case CellKind::OdeRnn: return std::make_unique<OdeRnnCell>(kind, opt);
        case CellKind::OdeLstm: return std::make_unique<OdeLstmCell>(kind, opt);
    }
    throw std::invalid_argument("make_cell: unknown kind");
}

// ---------------------------------------------------------------------------

BatchRun run_batch(const Cell& cell, const Binding& p, const std::vector<const data::Instance*>& batch) {
    const auto b = static_cast<Eigen::Index>(batch.size());
    if (b == 0) throw std::invalid_argument("run_batch: empty batch");
    const int dim = cell.options().dim;
    Eigen::Index max_k = 0;
    for (const auto* inst : batch) {
        if (inst->dim() != dim) throw ShapeError("run_batch: instance dimension does not match the cell");
        max_k = std::max(max_k, inst->events());
    }
    BatchRun run;
    run.active = Matrix::Zero(max_k, b);
    State s = cell.initial(p, b);
    for (Eigen::Index k = 0; k < max_k; ++k) {
        Vector horizon = Vector::Zero(b);
        EventInputs in{Matrix::Zero(dim, b), Matrix::Zero(dim, b), Matrix::Zero(1, b)};
        for (Eigen::Index j = 0; j < b; ++j) {
            const auto* inst = batch[static_cast<size_t>(j)];
            if (k >= inst->events()) continue;
            horizon(j) = inst->times(k) - s.time(0, j);
            in.x.col(j) = inst->values.col(k);
            in.mask.col(j) = inst->mask.col(k);
            in.active(0, j) = 1.0;
            run.active(k, j) = 1.0;
        }
        s = cell.evolve(p, s, horizon);
        // Land exactly on the event times.
        for (Eigen::Index j = 0; j < b; ++j)
            if (in.active(0, j) == 1.0) s.time(0, j) = batch[static_cast<size_t>(j)]->times(k);
        run.h_pre.push_back(s.h);
        s = cell.update(p, s, in);
        run.h_post.push_back(s.h);
    }
    return run;
}

// ---------------------------------------------------------------------------

namespace {

State to_batch(const Cell& cell, ad::Tape& t, const HiddenState& s) {
    State out;
    out.h = t.constant(Matrix(s.h));
    if (cell.kind() == CellKind::OdeLstm) out.c = t.constant(Matrix(s.c));
    out.x_last = s.x_last;
    out.t_last = s.t_last;
    out.time = Matrix::Constant(1, 1, s.time);
    return out;
}

HiddenState from_batch(const State& s) {
    HiddenState out;
    out.h = s.h.data().col(0);
    if (s.c.valid()) out.c = s.c.data().col(0);
    out.x_last = s.x_last.col(0);
    out.t_last = s.t_last.col(0);
    out.time = s.time(0, 0);
    return out;
}

}  // namespace

HiddenState initial_state(const Cell& cell, const ParamSet& params) {
    ad::Tape t(false);
    const Binding p(t, params);
    return from_batch(cell.initial(p, 1));
}

HiddenState evolve(const Cell& cell, const ParamSet& params, const HiddenState& s, double t_from, double t_to) {
    if (t_to < t_from) throw std::invalid_argument("evolve: t_to must be >= t_from");
    ad::Tape t(false);
    const Binding p(t, params);
    State bs = to_batch(cell, t, s);
    bs.time(0, 0) = t_from;
    State out = cell.evolve(p, bs, Vector::Constant(1, t_to - t_from));
    out.time(0, 0) = t_to;
    return from_batch(out);
}

HiddenState update(const Cell& cell, const ParamSet& params, const HiddenState& s, const Vector& x, const Vector& m,
                   double time) {
    ad::Tape t(false);
    const Binding p(t, params);
    State bs = to_batch(cell, t, s);
    bs.time(0, 0) = time;
    EventInputs in{Matrix(x), Matrix(m), Matrix::Ones(1, 1)};
    return from_batch(cell.update(p, bs, in));
}

std::vector<std::pair<Vector, Vector>> run_sequence(const Cell& cell, const ParamSet& params,
                                                    const data::Instance& instance) {
    std::vector<std::pair<Vector, Vector>> out;
    HiddenState s = initial_state(cell, params);
    for (Eigen::Index k = 0; k < instance.events(); ++k) {
        s = evolve(cell, params, s, s.time, instance.times(k));
        const Vector pre = s.h;
        s = update(cell, params, s, instance.values.col(k), instance.mask.col(k), instance.times(k));
        out.emplace_back(pre, s.h);
    }
    return out;
}

}  // namespace rfn::cells
