// rfn: simulate GBM datasets, train, sample and evaluate recurrent flow models.

#include "CLI11.hpp"

#include "rfn/gbm.hpp"
#include "rfn/manifest.hpp"
#include "rfn/model.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace rfn;

namespace {

struct SimulateArgs {
    int instances = 1000;
    double keep = 0.5;
    std::string mode = "syn";
    std::uint64_t seed = 0;
    int grid = 101;
    double rho1 = 0.8, rho2 = 0.6;
    std::vector<double> split{0.7, 0.15, 0.15};
    std::string out = "data";
};

struct TrainArgs {
    std::string config_file, data = "data", out = "run";
    train::RunConfig cfg;
    std::string cell = "gruode", joint = "cnf", mode = "syn";
};

struct SampleArgs {
    std::string ckpt = "run/ckpt", data = "data", instance, out = "samples";
    int event = 0, n = 100;
    std::optional<std::uint64_t> seed;
    std::optional<double> cutoff;
    bool masked = false;
};

struct EvaluateArgs {
    std::vector<std::string> ckpts{"run/ckpt"};
    std::string data = "data", split = "test", out = "eval";
    int n = 100;
    std::optional<std::uint64_t> seed;
    std::optional<double> cutoff;
    bool masked = false;
};

int run_simulate(const SimulateArgs& a) {
    gbm::GbmConfig g;
    g.n_instances = a.instances;
    g.seed = a.seed;
    g.grid_points = a.grid;
    g.rho1 = a.rho1;
    g.rho2 = a.rho2;
    data::Dataset ds = gbm::simulate(g);
    if (a.mode == "syn") ds = gbm::subsample_syn(ds, a.keep, gbm::derive_seed(a.seed, 10));
    else if (a.mode == "asyn") ds = gbm::subsample_asyn(ds, a.keep, gbm::derive_seed(a.seed, 10));
    else if (a.mode != "full") throw std::invalid_argument("--mode must be syn, asyn or full");
    ds = data::split(std::move(ds), a.split, a.seed);
    const nlohmann::json config{{"instances", a.instances}, {"keep", a.keep},  {"mode", a.mode},
                                {"grid", a.grid},           {"rho1", a.rho1},  {"rho2", a.rho2},
                                {"split", a.split}};
    ds.extra["run"] = manifest::run_manifest("simulate", config, a.seed, {}, {{"data", "data.csv"}});
    data::save(ds, a.out);
    std::cout << "wrote " << ds.instances.size() << " instances to " << a.out << "\n";
    return 0;
}

int run_train(TrainArgs& a, const CLI::App& sub) {
    train::RunConfig cfg;
    if (!a.config_file.empty()) cfg = train::RunConfig::from_json(manifest::read_json(a.config_file));
    // Explicit flags override the config file.
    if (sub.count("--cell")) cfg.cell = cells::parse_cell_kind(a.cell);
    if (sub.count("--joint")) cfg.joint = train::parse_joint(a.joint);
    if (sub.count("--mode")) cfg.mode = data::parse_series_kind(a.mode);
    if (sub.count("--epochs")) cfg.epochs = a.cfg.epochs;
    if (sub.count("--seed")) cfg.seed = a.cfg.seed;
    if (sub.count("--hidden")) cfg.hidden = a.cfg.hidden;
    if (sub.count("--lr")) cfg.lr = a.cfg.lr;
    if (sub.count("--batch")) cfg.batch_size = a.cfg.batch_size;
    if (sub.count("--patience")) cfg.patience = a.cfg.patience;
    if (sub.count("--clip")) cfg.clip_norm = a.cfg.clip_norm;
    if (sub.count("--method")) cfg.method = a.cfg.method;
    if (sub.count("--flow-steps")) cfg.flow_steps = a.cfg.flow_steps;
    if (sub.count("--max-step")) cfg.max_step = a.cfg.max_step;
    if (sub.count("--covariance")) cfg.covariance = a.cfg.covariance;
    if (sub.count("--mask-input")) cfg.mask_input = true;
    if (sub.count("--held-input")) cfg.held_input = true;
    if (sub.count("--no-standardize")) cfg.standardize = false;
    cfg.validate();

    const data::Dataset ds = data::load(a.data);
    const train::TrainResult result = train::train(cfg, ds, &std::cout);
    const fs::path out(a.out);
    train::save_checkpoint(result, out / "ckpt");
    train::write_loss_csv(result.history, out / "loss.csv");
    std::vector<fs::path> inputs{a.data};
    if (!a.config_file.empty()) inputs.push_back(a.config_file);
    manifest::write_json(manifest::run_manifest("train", cfg.to_json(), cfg.seed, inputs,
                                                {{"checkpoint", "ckpt/checkpoint.json"},
                                                 {"loss", "loss.csv"},
                                                 {"best_epoch", result.best_epoch},
                                                 {"best_valid", result.best_valid}}),
                         out / "manifest.json");
    std::cout << "best epoch " << result.best_epoch << " valid " << result.best_valid << "\n";
    return 0;
}

const data::Instance& find_instance(const data::Dataset& ds, const std::string& id) {
    for (const auto& inst : ds.instances)
        if (inst.id == id) return inst;
    throw std::invalid_argument("no instance with id '" + id + "'");
}

int run_sample(const SampleArgs& a) {
    const auto ck = train::load_checkpoint(a.ckpt);
    const data::Dataset ds = data::load(a.data);
    const data::Instance& inst = a.instance.empty() ? ds.instances.at(0) : find_instance(ds, a.instance);
    const std::uint64_t seed = a.seed.value_or(ck.model.config().seed);
    const metrics::Ensemble e = train::forecast(ck.model, inst, a.event, a.n, seed, a.cutoff, a.masked);

    const fs::path out(a.out);
    fs::create_directories(out);
    std::ofstream csv(out / "samples.csv");
    for (Eigen::Index d = 0; d < e.samples.cols(); ++d) csv << (d ? "," : "") << "x_" << d + 1;
    csv << "\n";
    char buf[64];
    for (Eigen::Index r = 0; r < e.samples.rows(); ++r) {
        for (Eigen::Index d = 0; d < e.samples.cols(); ++d) {
            std::snprintf(buf, sizeof buf, "%.17g", e.samples(r, d));
            csv << (d ? "," : "") << buf;
        }
        csv << "\n";
    }
    nlohmann::json cfg{{"instance", inst.id}, {"event", a.event}, {"time", inst.times(a.event)}, {"n_samples", a.n}};
    if (a.cutoff) cfg["cutoff"] = *a.cutoff;
    cfg["masked_sampling"] = a.masked;
    manifest::write_json(manifest::run_manifest("sample", cfg, seed, {a.ckpt, a.data}, {{"samples", "samples.csv"}}),
                         out / "manifest.json");
    std::cout << "wrote " << a.n << " samples for " << inst.id << " event " << a.event << " to " << out / "samples.csv"
              << "\n";
    return 0;
}

std::string model_name(const train::RunConfig& c) {
    const std::string cell = cells::to_string(c.cell);
    return c.joint == train::JointKind::Cnf ? "rfn-" + cell : cell + "-gaussian";
}

int run_evaluate(const EvaluateArgs& a) {
    data::Dataset ds = data::load(a.data);
    std::vector<metrics::Scores> runs;
    std::vector<fs::path> inputs{a.data};
    std::string name;
    std::vector<double> levels;
    long events = 0;
    for (const auto& path : a.ckpts) {
        const auto ck = train::load_checkpoint(path);
        const auto& cfg = ck.model.config();
        if (name.empty()) {
            name = model_name(cfg);
            levels = cfg.cs_levels;
        } else if (name != model_name(cfg)) {
            throw std::invalid_argument("evaluate: checkpoints describe different models");
        }
        data::Dataset split = ds.splits.empty() ? data::split(ds, cfg.split, cfg.seed) : ds;
        const auto subset = split.subset(data::parse_split(a.split));
        if (subset.empty()) throw std::invalid_argument("evaluate: split '" + a.split + "' is empty");
        const auto ev = train::evaluate(ck.model, subset, a.n, a.seed.value_or(cfg.seed), a.cutoff, a.masked);
        runs.push_back(ev.scores);
        events = ev.events;
        inputs.push_back(path);
        std::cout << path << ": crps " << ev.scores.crps << " crps_sum " << ev.scores.crps_sum << " cs "
                  << ev.scores.cs << " (" << ev.events << " events)\n";
    }
    std::string protocol = a.cutoff ? "rollout(cutoff=" + std::to_string(*a.cutoff) + ")" : "one-step-ahead";
    if (a.masked) protocol += ", masked sampling";
    nlohmann::json report = metrics::report_json(name, runs, levels, protocol);
    report["n_samples"] = a.n;
    report["split"] = a.split;
    report["events"] = events;

    const fs::path out(a.out);
    manifest::write_json(report, out / "report.json");
    nlohmann::json cfg{{"n_samples", a.n}, {"split", a.split}, {"protocol", protocol}};
    manifest::write_json(manifest::run_manifest("evaluate", cfg, a.seed.value_or(0), inputs, {{"report", "report.json"}}),
                         out / "manifest.json");
    return 0;
}

void print_usage(const CLI::App& app, std::ostream& os) {
    const CLI::App* shown = &app;
    for (const CLI::App* sub : app.get_subcommands()) shown = sub;
    os << shown->help();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Recurrent flow networks for irregular multivariate time series"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "Simulate a correlated GBM dataset");
    s->add_option("--instances", sim.instances, "Number of sample paths")->capture_default_str();
    s->add_option("--keep", sim.keep, "Fraction of values kept when subsampling")->capture_default_str();
    s->add_option("--mode", sim.mode, "syn, asyn or full")->capture_default_str();
    s->add_option("--seed", sim.seed)->capture_default_str();
    s->add_option("--grid", sim.grid, "Simulation grid points on [0, T]")->capture_default_str();
    s->add_option("--rho1", sim.rho1)->capture_default_str();
    s->add_option("--rho2", sim.rho2)->capture_default_str();
    s->add_option("--split", sim.split, "Train/valid/test fractions")->expected(3)->capture_default_str();
    s->add_option("--out", sim.out, "Dataset directory")->capture_default_str();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a model");
    t->add_option("--config", tr.config_file, "RunConfig JSON file; flags override it");
    t->add_option("--data", tr.data, "Dataset directory or CSV")->capture_default_str();
    t->add_option("--out", tr.out, "Run directory")->capture_default_str();
    t->add_option("--cell", tr.cell, "gruode, gru-d, odernn or odelstm")->capture_default_str();
    t->add_option("--joint", tr.joint, "cnf or gaussian")->capture_default_str();
    t->add_option("--mode", tr.mode, "syn or asyn")->capture_default_str();
    t->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
    t->add_option("--seed", tr.cfg.seed)->capture_default_str();
    t->add_option("--hidden", tr.cfg.hidden)->capture_default_str();
    t->add_option("--lr", tr.cfg.lr)->capture_default_str();
    t->add_option("--batch", tr.cfg.batch_size)->capture_default_str();
    t->add_option("--patience", tr.cfg.patience)->capture_default_str();
    t->add_option("--clip", tr.cfg.clip_norm, "Gradient norm clip")->capture_default_str();
    t->add_option("--method", tr.cfg.method, "rk4 or euler")->capture_default_str();
    t->add_option("--flow-steps", tr.cfg.flow_steps)->capture_default_str();
    t->add_option("--max-step", tr.cfg.max_step, "Largest cell integration step")->capture_default_str();
    t->add_option("--covariance", tr.cfg.covariance, "auto, full or diagonal")->capture_default_str();
    t->add_flag("--mask-input", "Feed the observation mask to the cell");
    t->add_flag("--held-input", "Hold the last observation as GRU-ODE input");
    t->add_flag("--no-standardize", "Train on raw values");

    SampleArgs sa;
    auto* p = app.add_subcommand("sample", "Draw forecast samples for one event");
    p->add_option("--ckpt", sa.ckpt)->capture_default_str();
    p->add_option("--data", sa.data)->capture_default_str();
    p->add_option("--instance", sa.instance, "Instance id (default: first)");
    p->add_option("--event", sa.event, "0-based event index")->capture_default_str();
    p->add_option("-n,--n-samples", sa.n)->capture_default_str();
    p->add_option("--seed", sa.seed, "Default: the training seed");
    p->add_option("--cutoff", sa.cutoff, "Stop conditioning on observations at or after this time");
    p->add_flag("--masked-sampling", sa.masked, "Sample the masked density of the event's observation pattern");
    p->add_option("--out", sa.out)->capture_default_str();

    EvaluateArgs ev;
    auto* e = app.add_subcommand("evaluate", "Score forecasts on a split");
    e->add_option("--ckpt", ev.ckpts, "Checkpoint directory; repeat to aggregate runs")->capture_default_str();
    e->add_option("--data", ev.data)->capture_default_str();
    e->add_option("--split", ev.split)->capture_default_str();
    e->add_option("-n,--n-samples", ev.n)->capture_default_str();
    e->add_option("--seed", ev.seed, "Default: each checkpoint's training seed");
    e->add_option("--cutoff", ev.cutoff, "Rollout: stop conditioning at this time");
    e->add_flag("--masked-sampling", ev.masked, "Sample the masked density of each event's observation pattern");
    e->add_option("--out", ev.out, "Report directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        print_usage(app, std::cout);
        return 0;
    } catch (const CLI::ParseError& err) {
        std::cerr << "error: " << err.what() << "\n\n";
        print_usage(app, std::cerr);
        return err.get_exit_code() ? err.get_exit_code() : 2;
    }

    try {
        if (*s) return run_simulate(sim);
        if (*t) return run_train(tr, *t);
        if (*p) return run_sample(sa);
        if (*e) return run_evaluate(ev);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 2;
}
