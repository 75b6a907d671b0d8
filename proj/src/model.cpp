#include "rfn/model.hpp"

#include "rfn/gbm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace rfn::train {

using ad::Value;

JointKind parse_joint(const std::string& s) {
    if (s == "cnf") return JointKind::Cnf;
    if (s == "gaussian") return JointKind::Gaussian;
    throw std::invalid_argument("unknown joint layer '" + s + "' (expected cnf or gaussian)");
}

std::string to_string(JointKind k) { return k == JointKind::Cnf ? "cnf" : "gaussian"; }

flow::Covariance RunConfig::resolved_covariance() const {
    if (covariance == "auto")
        return mode == data::SeriesKind::Syn && joint == JointKind::Cnf ? flow::Covariance::Full
                                                                        : flow::Covariance::Diagonal;
    return flow::parse_covariance(covariance);
}

void RunConfig::validate() const {
    if (hidden < 1) throw std::invalid_argument("config: hidden must be >= 1");
    if (!(lr > 0)) throw std::invalid_argument("config: lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
    if (patience < 1) throw std::invalid_argument("config: patience must be >= 1");
    if (flow_steps < 1) throw std::invalid_argument("config: flow_steps must be >= 1");
    if (!(max_step > 0)) throw std::invalid_argument("config: max_step must be positive");
    if (n_samples < 1) throw std::invalid_argument("config: n_samples must be >= 1");
    ode::parse_method(method);
    if (mode == data::SeriesKind::Asyn && resolved_covariance() == flow::Covariance::Full)
        throw std::invalid_argument("config: asyn mode needs a diagonal base (independent dimensions)");
    if (split.size() != 3) throw std::invalid_argument("config: split needs three fractions");
    if (held_input && cell != cells::CellKind::GruOde)
        throw std::invalid_argument("config: held_input applies to the gruode cell only");
    for (double p : cs_levels)
        if (!(p > 0 && p < 1)) throw std::invalid_argument("config: cs levels must lie in (0, 1)");
}

nlohmann::json RunConfig::to_json() const {
    return {{"schema", "rfn.config/1"},
            {"cell", cells::to_string(cell)},
            {"joint", to_string(joint)},
            {"mode", data::to_string(mode)},
            {"hidden", hidden},
            {"lr", lr},
            {"clip_norm", clip_norm},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"patience", patience},
            {"seed", seed},
            {"method", method},
            {"flow_steps", flow_steps},
            {"max_step", max_step},
            {"covariance", covariance},
            {"mask_input", mask_input},
            {"held_input", held_input},
            {"standardize", standardize},
            {"split", split},
            {"cs_levels", cs_levels},
            {"n_samples", n_samples}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    for (const auto& [key, _] : j.items()) {
        static const std::vector<std::string> known{
            "schema",     "cell",       "joint",    "mode",       "hidden",     "lr",          "clip_norm",
            "batch_size", "epochs",     "patience", "seed",       "method",     "flow_steps",  "max_step",
            "covariance", "mask_input", "held_input", "standardize", "split",   "cs_levels",   "n_samples"};
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    if (j.contains("schema") && j["schema"] != "rfn.config/1")
        throw std::invalid_argument("config: unsupported schema " + j["schema"].dump());
    if (j.contains("cell")) c.cell = cells::parse_cell_kind(j["cell"]);
    if (j.contains("joint")) c.joint = parse_joint(j["joint"]);
    if (j.contains("mode")) c.mode = data::parse_series_kind(j["mode"]);
    c.hidden = j.value("hidden", c.hidden);
    c.lr = j.value("lr", c.lr);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    c.method = j.value("method", c.method);
    c.flow_steps = j.value("flow_steps", c.flow_steps);
    c.max_step = j.value("max_step", c.max_step);
    c.covariance = j.value("covariance", c.covariance);
    c.mask_input = j.value("mask_input", c.mask_input);
    c.held_input = j.value("held_input", c.held_input);
    c.standardize = j.value("standardize", c.standardize);
    c.split = j.value("split", c.split);
    c.cs_levels = j.value("cs_levels", c.cs_levels);
    c.n_samples = j.value("n_samples", c.n_samples);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

namespace {

cells::CellOptions cell_options(const RunConfig& c, int dim) {
    cells::CellOptions o;
    o.dim = dim;
    o.hidden = c.hidden;
    o.mask_input = c.mask_input;
    o.held_input = c.held_input;
    o.max_step = c.max_step;
    o.method = ode::parse_method(c.method);
    return o;
}

flow::JointOptions joint_options(const RunConfig& c, int dim) {
    flow::JointOptions o;
    o.dim = dim;
    o.hidden = c.hidden;
    o.covariance = c.resolved_covariance();
    o.use_flow = c.joint == JointKind::Cnf;
    o.spec.method = ode::parse_method(c.method);
    o.spec.t0 = 0.0;
    o.spec.t1 = 1.0;
    o.spec.n_steps = c.flow_steps;
    return o;
}

}  // namespace

Model::Model(RunConfig config, int dim) : config_(std::move(config)), dim_(dim) {
    config_.validate();
    if (dim < 1) throw std::invalid_argument("Model: dim must be >= 1");
    cell_ = cells::make_cell(config_.cell, cell_options(config_, dim));
    joint_ = joint_options(config_, dim);
    std::mt19937_64 rng(gbm::derive_seed(config_.seed, 1));
    cell_->init(params_, rng);
    flow::init(params_, joint_, rng);
}

Model::Model(const Model& o)
    : standardization(o.standardization),
      config_(o.config_),
      dim_(o.dim_),
      cell_(cells::make_cell(o.config_.cell, o.cell_->options())),
      joint_(o.joint_),
      params_(o.params_) {}

Model& Model::operator=(const Model& o) {
    if (this != &o) {
        Model tmp(o);
        *this = std::move(tmp);
    }
    return *this;
}

Model::EventTerms Model::event_terms(const Binding& p, const std::vector<const data::Instance*>& batch) const {
    const cells::BatchRun run = cells::run_batch(*cell_, p, batch);
    const auto b = static_cast<Eigen::Index>(batch.size());
    const auto max_k = run.active.rows();
    const auto n = max_k * b;
    Matrix x = Matrix::Zero(dim_, n);
    Matrix m = Matrix::Ones(dim_, n);
    Matrix w = Matrix::Zero(1, n);
    const bool asyn = config_.mode == data::SeriesKind::Asyn;
    for (Eigen::Index i = 0; i < b; ++i) {
        const auto& inst = *batch[static_cast<size_t>(i)];
        const double k_i = static_cast<double>(inst.events());
        for (Eigen::Index k = 0; k < inst.events(); ++k) {
            const auto col = k * b + i;
            x.col(col) = inst.values.col(k);
            m.col(col) = inst.mask.col(k);
            w(0, col) = 1.0 / (k_i * static_cast<double>(b) * (asyn ? dim_ : 1));
        }
    }
    const Value h = ad::concat_cols(run.h_pre);
    const Value ll = flow::log_likelihood(p, joint_, x, h, asyn ? &m : nullptr);
    return {ll, w};
}

Value Model::loss(const Binding& p, const std::vector<const data::Instance*>& batch) const {
    const EventTerms t = event_terms(p, batch);
    return ad::neg(ad::sum(ad::hadamard(t.loglik, p.tape().constant(t.weights))));
}

Matrix Model::pre_event_states(const data::Instance& instance, std::optional<double> cutoff) const {
    Matrix out(config_.hidden, instance.events());
    cells::HiddenState s = cells::initial_state(*cell_, params_);
    for (Eigen::Index k = 0; k < instance.events(); ++k) {
        const double t = instance.times(k);
        s = cells::evolve(*cell_, params_, s, s.time, t);
        out.col(k) = s.h;
        if (cutoff && t >= *cutoff) continue;
        s = cells::update(*cell_, params_, s, instance.values.col(k), instance.mask.col(k), t);
    }
    return out;
}

Matrix Model::sample_at(const Vector& h, int n, std::mt19937_64& rng, const Vector* mask) const {
    return flow::sample(params_, joint_, h, n, rng, mask);
}

nlohmann::json Model::to_json() const {
    nlohmann::json j{{"config", config_.to_json()}, {"dim", dim_}, {"params", params_.to_json()}};
    if (standardization) {
        j["standardization"] = {
            {"mean", std::vector<double>(standardization->mean.data(), standardization->mean.data() + dim_)},
            {"std", std::vector<double>(standardization->std.data(), standardization->std.data() + dim_)}};
    } else {
        j["standardization"] = nullptr;
    }
    return j;
}

Model Model::from_json(const nlohmann::json& j) {
    Model m(RunConfig::from_json(j.at("config")), j.at("dim").get<int>());
    ParamSet loaded = ParamSet::from_json(j.at("params"));
    if (loaded.size() != m.params_.size()) throw std::invalid_argument("checkpoint: parameter count mismatch");
    for (const auto& e : m.params_.entries()) {
        if (!loaded.contains(e.name)) throw std::invalid_argument("checkpoint: missing parameter " + e.name);
        const Matrix& v = loaded.get(e.name);
        if (v.rows() != e.value.rows() || v.cols() != e.value.cols())
            throw std::invalid_argument("checkpoint: shape mismatch for " + e.name);
    }
    m.params_ = std::move(loaded);
    if (j.contains("standardization") && !j["standardization"].is_null()) {
        const auto mean = j["standardization"].at("mean").get<std::vector<double>>();
        const auto sd = j["standardization"].at("std").get<std::vector<double>>();
        data::Standardization s;
        s.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
        s.std = Eigen::Map<const Vector>(sd.data(), static_cast<Eigen::Index>(sd.size()));
        m.standardization = s;
    }
    return m;
}

// ---------------------------------------------------------------------------

data::Dataset prepare(const RunConfig& config, const data::Dataset& dataset) {
    data::Dataset ds = dataset;
    ds.validate();
    if (config.mode == data::SeriesKind::Syn && ds.kind() != data::SeriesKind::Syn)
        throw std::invalid_argument("syn mode requires a synchronously observed dataset");
    if (ds.splits.empty()) ds = data::split(std::move(ds), config.split, config.seed);
    if (config.standardize && !ds.standardization) ds = data::standardize(std::move(ds));
    return ds;
}

namespace {

std::vector<std::vector<const data::Instance*>> batches_of(const std::vector<const data::Instance*>& items, int size) {
    std::vector<std::vector<const data::Instance*>> out;
    for (size_t i = 0; i < items.size(); i += static_cast<size_t>(size))
        out.emplace_back(items.begin() + static_cast<long>(i),
                         items.begin() + static_cast<long>(std::min(items.size(), i + static_cast<size_t>(size))));
    return out;
}

}  // namespace

double mean_loss(const Model& model, const std::vector<const data::Instance*>& instances) {
    if (instances.empty()) throw std::invalid_argument("mean_loss: no instances");
    double total = 0.0;
    for (const auto& b : batches_of(instances, model.config().batch_size)) {
        ad::Tape t(false);
        const Binding p(t, model.params());
        total += model.loss(p, b).scalar() * static_cast<double>(b.size());
    }
    return total / static_cast<double>(instances.size());
}

TrainResult train(const RunConfig& config, const data::Dataset& dataset, std::ostream* log) {
    const data::Dataset ds = prepare(config, dataset);
    const auto train_set = ds.subset(data::Split::Train);
    auto valid_set = ds.subset(data::Split::Valid);
    if (train_set.empty()) throw std::invalid_argument("train: empty training split");
    if (valid_set.empty()) valid_set = train_set;

    Model model(config, ds.dim);
    model.standardization = ds.standardization;
    if (model.params().contains("cell.x_mean")) model.params().get("cell.x_mean") = data::observed_means(train_set, ds.dim);

    Adam::Options aopt;
    aopt.lr = config.lr;
    aopt.clip_norm = config.clip_norm;
    Adam adam(model.params(), aopt);
    std::mt19937_64 shuffle(gbm::derive_seed(config.seed, 2));

    TrainResult result{model, {}, 0, mean_loss(model, valid_set), ""};
    int stale = 0;
    std::vector<const data::Instance*> order = train_set;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle);
        double total = 0.0;
        int bi = 0;
        for (const auto& b : batches_of(order, config.batch_size)) {
            ad::Tape t;
            const Binding p(t, model.params());
            const Value l = model.loss(p, b);
            if (!std::isfinite(l.scalar())) throw DivergenceError(epoch, bi);
            t.backward(l);
            const auto grads = p.gradients();
            for (const auto& g : grads)
                if (!g.allFinite()) throw DivergenceError(epoch, bi);
            adam.step(model.params(), grads);
            total += l.scalar() * static_cast<double>(b.size());
            ++bi;
        }
        const double train_loss = total / static_cast<double>(order.size());
        const double valid_loss = mean_loss(model, valid_set);
        if (!std::isfinite(valid_loss)) throw DivergenceError(epoch, -1);
        result.history.push_back({epoch, train_loss, valid_loss});
        if (log) *log << "epoch " << epoch << " train " << train_loss << " valid " << valid_loss << "\n";
        if (valid_loss < result.best_valid) {
            result.best_valid = valid_loss;
            result.best_epoch = epoch;
            result.model = model;
            stale = 0;
        } else if (++stale >= config.patience) {
            if (log) *log << "early stop at epoch " << epoch << " (best " << result.best_epoch << ")\n";
            break;
        }
    }
    std::ostringstream rs;
    rs << shuffle;
    result.rng_state = rs.str();
    return result;
}

// ---------------------------------------------------------------------------

namespace {

data::Instance to_model_units(const Model& model, const data::Instance& inst) {
    if (!model.standardization) return inst;
    data::Instance out = inst;
    out.values = model.standardization->apply(inst.values, inst.mask);
    return out;
}

metrics::Ensemble ensemble_at(const Model& model, const data::Instance& raw, const Vector& h, int k, int n,
                              std::uint64_t seed, bool masked) {
    std::mt19937_64 rng(seed);
    const Vector m = raw.mask.col(k);
    Matrix s = model.sample_at(h, n, rng, masked ? &m : nullptr);
    if (model.standardization) s = model.standardization->invert_rows(s);
    return {s, raw.values.col(k), raw.mask.col(k)};
}

std::uint64_t event_seed(std::uint64_t seed, const data::Instance& inst, int k) {
    std::uint64_t key = 1469598103934665603ULL;  // FNV-1a, stable across platforms
    for (unsigned char c : inst.id) key = (key ^ c) * 1099511628211ULL;
    return gbm::derive_seed(gbm::derive_seed(seed, key), static_cast<std::uint64_t>(k));
}

}  // namespace

metrics::Ensemble forecast(const Model& model, const data::Instance& instance, int k, int n_samples,
                           std::uint64_t seed, std::optional<double> cutoff, bool masked_sampling) {
    if (k < 0 || k >= instance.events()) throw std::out_of_range("forecast: event index out of range");
    data::Instance prefix = to_model_units(model, instance);
    // Only events before k can influence h(t_k-); truncate so nothing later is read.
    prefix.times.conservativeResize(k + 1);
    prefix.values.conservativeResize(Eigen::NoChange, k + 1);
    prefix.mask.conservativeResize(Eigen::NoChange, k + 1);
    const Matrix h = model.pre_event_states(prefix, cutoff);
    return ensemble_at(model, instance, h.col(k), k, n_samples, event_seed(seed, instance, k), masked_sampling);
}

Evaluation evaluate(const Model& model, const std::vector<const data::Instance*>& instances, int n_samples,
                    std::uint64_t seed, std::optional<double> cutoff, bool masked_sampling) {
    if (instances.empty()) throw std::invalid_argument("evaluate: no instances");
    Evaluation ev;
    for (const auto* inst : instances) {
        const Matrix h = model.pre_event_states(to_model_units(model, *inst), cutoff);
        for (Eigen::Index k = 0; k < inst->events(); ++k) {
            if (cutoff && inst->times(k) < *cutoff) continue;
            ev.ensembles.push_back(
                ensemble_at(model, *inst, h.col(k), static_cast<int>(k), n_samples,
                            event_seed(seed, *inst, static_cast<int>(k)), masked_sampling));
        }
    }
    ev.events = static_cast<long>(ev.ensembles.size());
    ev.scores = metrics::score(ev.ensembles, model.config().cs_levels);
    return ev;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const TrainResult& result, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j = result.model.to_json();
    j["schema"] = "rfn.checkpoint/1";
    j["epoch"] = result.best_epoch;
    j["valid_loss"] = result.best_valid;
    j["rng_state"] = result.rng_state;
    std::ofstream out(dir / "checkpoint.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "checkpoint.json").string());
    out << j.dump(1) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    const auto file = std::filesystem::is_directory(dir) ? dir / "checkpoint.json" : dir;
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read checkpoint " + file.string());
    nlohmann::json j;
    in >> j;
    if (j.value("schema", "") != "rfn.checkpoint/1")
        throw std::invalid_argument("checkpoint: unsupported schema in " + file.string());
    return {Model::from_json(j), j.at("epoch").get<int>(), j.at("valid_loss").get<double>()};
}

void write_loss_csv(const std::vector<LossRow>& rows, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << "epoch,train,valid\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", r.epoch, r.train, r.valid);
        out << buf;
    }
}

}  // namespace rfn::train
