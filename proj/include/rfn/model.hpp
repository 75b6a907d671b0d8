#pragma once

// End-to-end model: a recurrent marginal layer feeding a conditional joint
// layer (flow or plain Gaussian head), with training, checkpointing,
// forecasting and evaluation.

#include "rfn/cells.hpp"
#include "rfn/flow.hpp"
#include "rfn/metrics.hpp"
#include "rfn/timeseries.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace rfn::train {

enum class JointKind { Cnf, Gaussian };
JointKind parse_joint(const std::string& s);
std::string to_string(JointKind k);

struct RunConfig {
    cells::CellKind cell = cells::CellKind::GruOde;
    JointKind joint = JointKind::Cnf;
    data::SeriesKind mode = data::SeriesKind::Syn;
    int hidden = 64;
    double lr = 1e-3;
    double clip_norm = 10.0;
    int batch_size = 32;
    int epochs = 50;
    int patience = 10;  // epochs without validation improvement before stopping
    std::uint64_t seed = 0;
    std::string method = "rk4";
    int flow_steps = 20;
    double max_step = 0.05;  // physical-time micro-step bound for the cells
    // "auto": full for syn + cnf, diagonal otherwise.
    std::string covariance = "auto";
    bool mask_input = false;
    bool held_input = false;
    bool standardize = true;
    std::vector<double> split{0.7, 0.15, 0.15};
    std::vector<double> cs_levels = metrics::decile_levels();
    int n_samples = 100;

    flow::Covariance resolved_covariance() const;
    void validate() const;
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(int epoch, int batch)
        : std::runtime_error("loss diverged (NaN) at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch)),
          epoch_(epoch),
          batch_(batch) {}
    int epoch() const { return epoch_; }
    int batch() const { return batch_; }

private:
    int epoch_, batch_;
};

class Model {
public:
    Model(RunConfig config, int dim);
    Model(const Model& other);
    Model& operator=(const Model& other);
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const RunConfig& config() const { return config_; }
    int dim() const { return dim_; }
    const cells::Cell& cell() const { return *cell_; }
    const flow::JointOptions& joint() const { return joint_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // Data units <-> model units. Empty when the model works on raw values.
    std::optional<data::Standardization> standardization;

    // Negative training objective over a batch (scalar). Syn: mean over
    // instances of the per-instance mean event log-likelihood. Asyn: the same
    // with the masked likelihood and an extra 1/D.
    ad::Value loss(const Binding& p, const std::vector<const data::Instance*>& batch) const;

    // Per-event log-likelihoods (maxK*B columns, index k*B + i) and weights.
    struct EventTerms {
        ad::Value loglik;
        Matrix weights;
    };
    EventTerms event_terms(const Binding& p, const std::vector<const data::Instance*>& batch) const;

    // Hidden states h(t_k-) for every event of one instance (H x K), using only
    // observations before each event. With `cutoff`, updates stop at
    // observations at or after the cutoff time and the state only evolves.
    Matrix pre_event_states(const data::Instance& instance, std::optional<double> cutoff = std::nullopt) const;

    // Draws in model units for hidden state h; see flow::sample for the mask.
    Matrix sample_at(const Vector& h, int n, std::mt19937_64& rng, const Vector* mask = nullptr) const;

    nlohmann::json to_json() const;
    static Model from_json(const nlohmann::json& j);

private:
    RunConfig config_;
    int dim_;
    std::unique_ptr<cells::Cell> cell_;
    flow::JointOptions joint_;
    ParamSet params_;
};

struct LossRow {
    int epoch;
    double train;
    double valid;
};

struct TrainResult {
    Model model;            // parameters with the best validation loss
    std::vector<LossRow> history;
    int best_epoch = 0;
    double best_valid = 0.0;
    std::string rng_state;
};

// Splits (if unlabelled) and standardizes (if configured) a copy of the data,
// then trains. `log` receives one line per epoch when non-null.
TrainResult train(const RunConfig& config, const data::Dataset& dataset, std::ostream* log = nullptr);

// Dataset prepared exactly as train() sees it.
data::Dataset prepare(const RunConfig& config, const data::Dataset& dataset);

// Mean negative objective over a set of instances, evaluated in batches.
double mean_loss(const Model& model, const std::vector<const data::Instance*>& instances);

// Ensemble for event k (0-based) of an instance given in data units.
// `masked_sampling` draws from the masked density of the event's observation
// pattern instead of pushing every dimension through the full field.
metrics::Ensemble forecast(const Model& model, const data::Instance& instance, int k, int n_samples,
                           std::uint64_t seed, std::optional<double> cutoff = std::nullopt,
                           bool masked_sampling = false);

struct Evaluation {
    metrics::Scores scores;
    std::vector<metrics::Ensemble> ensembles;
    long events = 0;
};

// One-step-ahead forecasts at every event of every instance.
Evaluation evaluate(const Model& model, const std::vector<const data::Instance*>& instances, int n_samples,
                    std::uint64_t seed, std::optional<double> cutoff = std::nullopt, bool masked_sampling = false);

// Checkpoint directory: checkpoint.json with config, parameters, epoch,
// validation loss and rng state.
void save_checkpoint(const TrainResult& result, const std::filesystem::path& dir);
struct LoadedCheckpoint {
    Model model;
    int epoch;
    double valid_loss;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

void write_loss_csv(const std::vector<LossRow>& rows, const std::filesystem::path& file);

}  // namespace rfn::train
