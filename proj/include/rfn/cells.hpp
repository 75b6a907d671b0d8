#pragma once

// Continuous-time recurrent cells for the marginal layer. Every cell evolves
// a hidden state between observation events and updates it at events. States
// are batched column-wise: column j belongs to instance j of the batch.

#include "rfn/ode.hpp"
#include "rfn/params.hpp"
#include "rfn/timeseries.hpp"

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace rfn::cells {

enum class CellKind { GruOde, GruD, OdeRnn, OdeLstm };

CellKind parse_cell_kind(const std::string& name);
std::string to_string(CellKind k);

struct CellOptions {
    int dim = 1;
    int hidden = 64;
    // Append the observation mask to the update input (D extra inputs).
    bool mask_input = false;
    // GRUODE only: feed the last observed values into the continuous gates
    // instead of a zero input.
    bool held_input = false;
    double max_step = 0.05;
    ode::Method method = ode::Method::Rk4;
};

struct State {
    ad::Value h;     // H x B
    ad::Value c;     // H x B cell memory (ODELSTM only)
    Matrix x_last;   // D x B last observed value per variable (empirical mean before the first)
    Matrix t_last;   // D x B time of that observation (0 before the first)
    Matrix time;     // 1 x B current time of each column
};

// One event slice across the batch. Inactive columns (instances with fewer
// events) keep their state unchanged.
struct EventInputs {
    Matrix x;       // D x B, zero where unobserved
    Matrix mask;    // D x B
    Matrix active;  // 1 x B in {0, 1}
};

class Cell {
public:
    Cell(CellKind kind, CellOptions opt) : kind_(kind), opt_(opt) {}
    virtual ~Cell() = default;

    CellKind kind() const { return kind_; }
    const CellOptions& options() const { return opt_; }
    int input_dim() const { return opt_.mask_input ? 2 * opt_.dim : opt_.dim; }

    // Adds this cell's parameters (prefix "cell.") to `params`.
    virtual void init(ParamSet& params, std::mt19937_64& rng) const = 0;

    // h(0) = 0 for every column.
    State initial(const Binding& p, Eigen::Index batch) const;

    // Advances column j from state.time(j) to state.time(j) + horizon(j).
    virtual State evolve(const Binding& p, const State& s, const Vector& horizon) const = 0;

    // Discrete update at event times `t` (1 x B). Every active column must have
    // at least one observed variable.
    State update(const Binding& p, const State& s, const EventInputs& in) const;

protected:
    virtual State update_active(const Binding& p, const State& s, const EventInputs& in, const Matrix& t) const = 0;
    Matrix input_matrix(const EventInputs& in) const;

private:
    CellKind kind_;
    CellOptions opt_;
};

std::unique_ptr<Cell> make_cell(CellKind kind, const CellOptions& opt);

// GRU update h+ = z*h + (1-z)*h~ with gates driven by `input` and `h`, using
// parameters "<prefix>W_{r,z,h}", "<prefix>U_{r,z,h}", "<prefix>b_{r,z,h}" and,
// when `extra` is valid, "<prefix>V_{r,z,h}" applied to it.
ad::Value gru_step(const Binding& p, const std::string& prefix, const ad::Value& input, const ad::Value& h,
                   const ad::Value* extra = nullptr);

// Batched run over a set of instances. Entry k of `h_pre`/`h_post` holds the
// H x B states just before/after event k; columns whose instance has fewer
// than k+1 events are carried unchanged and flagged in `active`.
struct BatchRun {
    std::vector<ad::Value> h_pre;
    std::vector<ad::Value> h_post;
    Matrix active;  // max_events x B
};

BatchRun run_batch(const Cell& cell, const Binding& p, const std::vector<const data::Instance*>& batch);

// Single-instance convenience API on plain vectors.
struct HiddenState {
    Vector h;
    Vector c;
    Vector x_last;
    Vector t_last;
    double time = 0.0;
};

HiddenState initial_state(const Cell& cell, const ParamSet& params);
HiddenState evolve(const Cell& cell, const ParamSet& params, const HiddenState& s, double t_from, double t_to);
HiddenState update(const Cell& cell, const ParamSet& params, const HiddenState& s, const Vector& x, const Vector& m,
                   double t);
// (h(t_k-), h(t_k+)) for every event, starting from h(0) = 0.
std::vector<std::pair<Vector, Vector>> run_sequence(const Cell& cell, const ParamSet& params,
                                                    const data::Instance& instance);

}  // namespace rfn::cells
