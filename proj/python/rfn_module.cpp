// Python bindings for the main operations: GBM simulation, dataset IO,
// training, forecasting, evaluation and the metrics.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rfn/gbm.hpp"
#include "rfn/manifest.hpp"
#include "rfn/model.hpp"

namespace py = pybind11;
using namespace rfn;

namespace {

nlohmann::json to_json(const py::object& obj) {
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object from_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

train::RunConfig config_from(const py::dict& d) {
    nlohmann::json j = train::RunConfig{}.to_json();
    const nlohmann::json overrides = to_json(d);
    for (const auto& [k, v] : overrides.items()) j[k] = v;
    return train::RunConfig::from_json(j);
}

std::vector<const data::Instance*> split_of(const data::Dataset& ds, const std::string& split) {
    if (split == "all") {
        std::vector<const data::Instance*> out;
        for (const auto& i : ds.instances) out.push_back(&i);
        return out;
    }
    return ds.subset(data::parse_split(split));
}

py::dict scores_dict(const metrics::Scores& s) {
    py::dict d;
    d["crps"] = s.crps;
    d["crps_sum"] = s.crps_sum;
    d["cs"] = s.cs;
    return d;
}

}  // namespace

PYBIND11_MODULE(rfn, m) {
    m.doc() = "Recurrent flow networks for irregular multivariate time series";

    py::class_<data::Instance>(m, "Instance")
        .def(py::init<>())
        .def_readwrite("id", &data::Instance::id)
        .def_readwrite("times", &data::Instance::times)
        .def_readwrite("values", &data::Instance::values)
        .def_readwrite("mask", &data::Instance::mask)
        .def_property_readonly("dim", &data::Instance::dim)
        .def_property_readonly("events", &data::Instance::events)
        .def("__repr__", [](const data::Instance& i) {
            return "<Instance '" + i.id + "' D=" + std::to_string(i.dim()) + " K=" + std::to_string(i.events()) + ">";
        });

    py::class_<data::Dataset>(m, "Dataset")
        .def_readonly("dim", &data::Dataset::dim)
        .def_readonly("horizon", &data::Dataset::horizon)
        .def_readonly("instances", &data::Dataset::instances)
        .def_property_readonly("kind", [](const data::Dataset& d) { return data::to_string(d.kind()); })
        .def_property_readonly("splits",
                               [](const data::Dataset& d) {
                                   std::vector<std::string> out;
                                   for (auto s : d.splits) out.push_back(data::to_string(s));
                                   return out;
                               })
        .def("__len__", [](const data::Dataset& d) { return d.instances.size(); })
        .def("save", [](const data::Dataset& d, const std::filesystem::path& dir) { data::save(d, dir); })
        .def("split", [](const data::Dataset& d, std::vector<double> fractions,
                         std::uint64_t seed) { return data::split(d, fractions, seed); },
             py::arg("fractions") = std::vector<double>{0.7, 0.15, 0.15}, py::arg("seed") = 0);

    m.def("load_dataset", [](const std::filesystem::path& p) { return data::load(p); }, py::arg("path"));

    m.def(
        "simulate_gbm",
        [](int instances, double keep, const std::string& mode, std::uint64_t seed, int grid) {
            gbm::GbmConfig g;
            g.n_instances = instances;
            g.seed = seed;
            g.grid_points = grid;
            data::Dataset ds = gbm::simulate(g);
            if (mode == "syn") ds = gbm::subsample_syn(ds, keep, gbm::derive_seed(seed, 10));
            else if (mode == "asyn") ds = gbm::subsample_asyn(ds, keep, gbm::derive_seed(seed, 10));
            else if (mode != "full") throw std::invalid_argument("mode must be syn, asyn or full");
            return ds;
        },
        py::arg("instances") = 1000, py::arg("keep") = 0.5, py::arg("mode") = "syn", py::arg("seed") = 0,
        py::arg("grid") = 101);

    m.def("empirical_correlation", &gbm::empirical_correlation, py::arg("samples"));
    m.def("correlation_schedule", [](double t, double rho1, double rho2) { return gbm::CorrelationSchedule(rho1, rho2)(t); },
          py::arg("t"), py::arg("rho1") = 0.8, py::arg("rho2") = 0.6);

    py::class_<train::Model>(m, "Model")
        .def_property_readonly("config", [](const train::Model& md) { return from_json(md.config().to_json()); })
        .def_property_readonly("dim", &train::Model::dim)
        .def(
            "forecast",
            [](const train::Model& md, const data::Instance& inst, int k, int n, std::uint64_t seed, bool masked) {
                return train::forecast(md, inst, k, n, seed, std::nullopt, masked).samples;
            },
            py::arg("instance"), py::arg("k"), py::arg("n_samples") = 100, py::arg("seed") = 0,
            py::arg("masked_sampling") = false)
        .def(
            "evaluate",
            [](const train::Model& md, const data::Dataset& ds, const std::string& split, int n, std::uint64_t seed,
               bool masked) {
                const auto ev = train::evaluate(md, split_of(ds, split), n, seed, std::nullopt, masked);
                py::dict d = scores_dict(ev.scores);
                d["events"] = ev.events;
                return d;
            },
            py::arg("dataset"), py::arg("split") = "test", py::arg("n_samples") = 100, py::arg("seed") = 0,
            py::arg("masked_sampling") = false)
        .def("loss", [](const train::Model& md, const data::Dataset& ds,
                        const std::string& split) { return train::mean_loss(md, split_of(ds, split)); },
             py::arg("dataset"), py::arg("split") = "all");

    py::class_<train::TrainResult>(m, "TrainResult")
        .def_readonly("model", &train::TrainResult::model)
        .def_readonly("best_epoch", &train::TrainResult::best_epoch)
        .def_readonly("best_valid", &train::TrainResult::best_valid)
        .def_property_readonly("history",
                               [](const train::TrainResult& r) {
                                   std::vector<std::tuple<int, double, double>> out;
                                   for (const auto& row : r.history) out.emplace_back(row.epoch, row.train, row.valid);
                                   return out;
                               })
        .def("save", [](const train::TrainResult& r, const std::filesystem::path& dir) {
            train::save_checkpoint(r, dir / "ckpt");
            train::write_loss_csv(r.history, dir / "loss.csv");
        });

    m.def(
        "train",
        [](const py::dict& config, const data::Dataset& ds) {
            const auto cfg = config_from(config);
            cfg.validate();
            py::gil_scoped_release release;
            return train::train(cfg, ds);
        },
        py::arg("config"), py::arg("dataset"),
        "Train a model. `config` holds RunConfig fields (cell, joint, mode, hidden, lr, epochs, seed, ...).");
    m.def("default_config", [] { return from_json(train::RunConfig{}.to_json()); });
    m.def("load_checkpoint", [](const std::filesystem::path& dir) { return train::load_checkpoint(dir).model; },
          py::arg("path"));

    m.def("crps", &metrics::crps_empirical, py::arg("samples"), py::arg("x"));
    m.def(
        "crps_sum",
        [](const std::vector<Matrix>& samples, const std::vector<Vector>& obs, const std::vector<Vector>& masks) {
            std::vector<metrics::Ensemble> ens;
            for (size_t i = 0; i < samples.size(); ++i) ens.push_back({samples[i], obs.at(i), masks.at(i)});
            return metrics::crps_sum(ens);
        },
        py::arg("samples"), py::arg("observations"), py::arg("masks"));
    m.def(
        "confidence_score",
        [](const std::vector<std::vector<double>>& cdf, std::vector<double> levels) {
            return metrics::confidence_score(cdf, levels).cs;
        },
        py::arg("cdf_values"), py::arg("levels") = metrics::decile_levels());
    m.def("git_blob_sha1", [](const py::bytes& b) { return manifest::git_blob_sha1(b); }, py::arg("data"));
}
