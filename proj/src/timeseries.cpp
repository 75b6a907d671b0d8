#include "rfn/timeseries.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace rfn::data {

std::string to_string(SeriesKind k) { return k == SeriesKind::Syn ? "syn" : "asyn"; }

SeriesKind parse_series_kind(const std::string& s) {
    if (s == "syn") return SeriesKind::Syn;
    if (s == "asyn") return SeriesKind::Asyn;
    throw std::invalid_argument("unknown mode '" + s + "' (expected syn or asyn)");
}

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
        default: return "unassigned";
    }
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "valid") return Split::Valid;
    if (s == "test") return Split::Test;
    if (s == "unassigned") return Split::Unassigned;
    throw std::invalid_argument("unknown split label '" + s + "'");
}

void Instance::validate(double horizon) const {
    const auto k = times.size();
    if (values.cols() != k || mask.cols() != k || mask.rows() != values.rows())
        throw DataError("instance '" + id + "': times/values/mask shapes disagree");
    if (k == 0) throw DataError("instance '" + id + "' has no events");
    for (Eigen::Index i = 0; i < k; ++i) {
        if (!std::isfinite(times(i)) || times(i) < 0.0 || times(i) > horizon)
            throw DataError("instance '" + id + "': time " + std::to_string(times(i)) + " outside [0, T]");
        if (i > 0 && !(times(i) > times(i - 1)))
            throw DataError("instance '" + id + "': times are not strictly increasing at event " + std::to_string(i));
        bool any = false;
        for (Eigen::Index d = 0; d < mask.rows(); ++d) {
            const double m = mask(d, i);
            if (m != 0.0 && m != 1.0) throw DataError("instance '" + id + "': mask entries must be 0 or 1");
            if (m == 0.0 && values(d, i) != 0.0)
                throw DataError("instance '" + id + "': unobserved value is not zero at event " + std::to_string(i));
            if (m == 1.0 && !std::isfinite(values(d, i)))
                throw DataError("instance '" + id + "': observed value is not finite at event " + std::to_string(i));
            any = any || m == 1.0;
        }
        if (!any) throw DataError("instance '" + id + "': event " + std::to_string(i) + " has no observation");
    }
}

SeriesKind classify(const Instance& instance) {
    return (instance.mask.array() == 1.0).all() ? SeriesKind::Syn : SeriesKind::Asyn;
}

Matrix Standardization::apply(const Matrix& values, const Matrix& mask) const {
    Matrix out = values;
    for (Eigen::Index d = 0; d < values.rows(); ++d)
        for (Eigen::Index k = 0; k < values.cols(); ++k)
            out(d, k) = mask(d, k) == 1.0 ? (values(d, k) - mean(d)) / std(d) : 0.0;
    return out;
}

Matrix Standardization::invert_rows(const Matrix& samples) const {
    Matrix out = samples;
    for (Eigen::Index d = 0; d < samples.cols(); ++d) out.col(d) = samples.col(d).array() * std(d) + mean(d);
    return out;
}

void Dataset::validate() const {
    if (dim <= 0) throw DataError("dataset dimension must be positive");
    if (!splits.empty() && splits.size() != instances.size())
        throw DataError("split labels do not match instance count");
    for (const auto& inst : instances) {
        if (inst.dim() != dim) throw DataError("instance '" + inst.id + "' has a different dimension");
        inst.validate(horizon);
    }
}

std::vector<const Instance*> Dataset::subset(Split s) const {
    std::vector<const Instance*> out;
    for (size_t i = 0; i < instances.size(); ++i) {
        const Split label = splits.empty() ? Split::Unassigned : splits[i];
        if (label == s) out.push_back(&instances[i]);
    }
    return out;
}

SeriesKind Dataset::kind() const {
    for (const auto& inst : instances)
        if (classify(inst) == SeriesKind::Asyn) return SeriesKind::Asyn;
    return SeriesKind::Syn;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    char* end = nullptr;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size();
}

struct RawRow {
    long row;
    double time;
    Vector x;
    Vector m;
    std::vector<bool> present;
};

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

Dataset load_csv_text(const std::string& text, const LoadOptions& opt, LoadReport* report) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV");
    const auto header = split_fields(line);
    if (header.size() < 4 || (header.size() - 2) % 2 != 0 || trim(header[0]) != "instance_id" ||
        trim(header[1]) != "time")
        throw DataError("CSV header must be instance_id,time,x_1..x_D,m_1..m_D");
    const int dim = static_cast<int>((header.size() - 2) / 2);
    for (int d = 0; d < dim; ++d) {
        if (trim(header[2 + d]) != "x_" + std::to_string(d + 1) ||
            trim(header[2 + dim + d]) != "m_" + std::to_string(d + 1))
            throw DataError("CSV header must be instance_id,time,x_1..x_D,m_1..m_D");
    }

    LoadReport local;
    std::vector<std::string> order;
    std::map<std::string, std::vector<RawRow>> rows;
    long row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        const auto f = split_fields(line);
        if (static_cast<int>(f.size()) != 2 + 2 * dim)
            throw DataError("expected " + std::to_string(2 + 2 * dim) + " fields, got " + std::to_string(f.size()), row);
        const std::string id = trim(f[0]);
        RawRow r{row, 0.0, Vector::Zero(dim), Vector::Zero(dim), std::vector<bool>(static_cast<size_t>(dim), false)};
        if (!parse_double(f[1], r.time) || !std::isfinite(r.time)) throw DataError("unparsable time", row);
        for (int d = 0; d < dim; ++d) {
            double m = 0;
            if (!parse_double(f[2 + dim + d], m) || (m != 0.0 && m != 1.0))
                throw DataError("mask entries must be 0 or 1", row);
            r.m(d) = m;
            double x = 0;
            const bool ok = parse_double(f[2 + d], x) && std::isfinite(x);
            if (m == 1.0 && !ok) throw DataError("observed value (mask=1) is missing for x_" + std::to_string(d + 1), row);
            if (m == 0.0) {
                if (ok && x != 0.0) ++local.zeroed_values;
                x = 0.0;
            }
            r.x(d) = x;
            r.present[static_cast<size_t>(d)] = m == 1.0;
        }
        auto& list = rows[id];
        if (list.empty()) order.push_back(id);
        if (!list.empty()) {
            const double prev = list.back().time;
            if (r.time < prev) throw DataError("times are not monotone within instance '" + id + "'", row);
            if (r.time == prev) {
                if (!opt.merge_duplicates)
                    throw DataError("duplicate (instance, time) row for instance '" + id + "'", row);
                RawRow& last = list.back();
                for (int d = 0; d < dim; ++d) {
                    if (r.m(d) == 1.0) {
                        last.x(d) = r.x(d);
                        last.m(d) = 1.0;
                    }
                }
                ++local.merged_duplicates;
                continue;
            }
        }
        list.push_back(std::move(r));
    }

    Dataset ds;
    ds.dim = dim;
    double tmax = 0.0;
    for (const auto& id : order) {
        const auto& list = rows[id];
        Instance inst;
        inst.id = id;
        const auto k = static_cast<Eigen::Index>(list.size());
        inst.times.resize(k);
        inst.values.resize(dim, k);
        inst.mask.resize(dim, k);
        for (Eigen::Index i = 0; i < k; ++i) {
            const auto& r = list[static_cast<size_t>(i)];
            if (r.m.sum() == 0.0) throw DataError("event without any observation in instance '" + id + "'", r.row);
            inst.times(i) = r.time;
            inst.values.col(i) = r.x;
            inst.mask.col(i) = r.m;
            tmax = std::max(tmax, r.time);
        }
        ds.instances.push_back(std::move(inst));
    }
    ds.horizon = std::max(1.0, tmax);
    if (report) *report = local;
    return ds;
}

nlohmann::json manifest(const Dataset& dataset) {
    nlohmann::json j;
    j["schema"] = "rfn.dataset/1";
    j["dim"] = dataset.dim;
    j["horizon"] = dataset.horizon;
    j["n_instances"] = dataset.instances.size();
    j["kind"] = to_string(dataset.kind());
    if (dataset.standardization) {
        j["standardization"] = {{"mean", std::vector<double>(dataset.standardization->mean.data(),
                                                             dataset.standardization->mean.data() + dataset.dim)},
                                {"std", std::vector<double>(dataset.standardization->std.data(),
                                                            dataset.standardization->std.data() + dataset.dim)}};
    } else {
        j["standardization"] = nullptr;
    }
    nlohmann::json splits = nlohmann::json::array();
    for (auto s : dataset.splits) splits.push_back(to_string(s));
    j["split"] = splits;
    j["extra"] = dataset.extra;
    return j;
}

namespace {

void apply_manifest(Dataset& ds, const nlohmann::json& j) {
    if (j.value("schema", "") != "rfn.dataset/1") throw DataError("unsupported dataset manifest schema");
    if (j.at("dim").get<int>() != ds.dim) throw DataError("manifest dimension does not match CSV header");
    ds.horizon = j.at("horizon").get<double>();
    if (j.contains("standardization") && !j["standardization"].is_null()) {
        const auto mean = j["standardization"].at("mean").get<std::vector<double>>();
        const auto sd = j["standardization"].at("std").get<std::vector<double>>();
        Standardization s;
        s.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
        s.std = Eigen::Map<const Vector>(sd.data(), static_cast<Eigen::Index>(sd.size()));
        ds.standardization = s;
    }
    ds.splits.clear();
    if (j.contains("split")) {
        for (const auto& s : j["split"]) ds.splits.push_back(parse_split(s.get<std::string>()));
        if (!ds.splits.empty() && ds.splits.size() != ds.instances.size())
            throw DataError("manifest split labels do not match instance count");
    }
    if (j.contains("extra")) ds.extra = j["extra"];
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot open " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

Dataset load(const std::filesystem::path& path, const LoadOptions& opt, LoadReport* report) {
    std::filesystem::path csv = path, man;
    if (std::filesystem::is_directory(path)) {
        csv = path / "data.csv";
        man = path / "manifest.json";
    } else {
        man = path;
        man += ".json";
    }
    Dataset ds = load_csv_text(read_file(csv), opt, report);
    if (std::filesystem::exists(man)) apply_manifest(ds, nlohmann::json::parse(read_file(man)));
    ds.validate();
    return ds;
}

std::string to_csv_text(const Dataset& dataset) {
    std::string out = "instance_id,time";
    for (int d = 1; d <= dataset.dim; ++d) out += ",x_" + std::to_string(d);
    for (int d = 1; d <= dataset.dim; ++d) out += ",m_" + std::to_string(d);
    out += '\n';
    for (const auto& inst : dataset.instances) {
        for (Eigen::Index k = 0; k < inst.events(); ++k) {
            out += inst.id;
            out += ',';
            out += fmt17(inst.times(k));
            for (Eigen::Index d = 0; d < inst.dim(); ++d) {
                out += ',';
                out += fmt17(inst.values(d, k));
            }
            for (Eigen::Index d = 0; d < inst.dim(); ++d) out += inst.mask(d, k) == 1.0 ? ",1" : ",0";
            out += '\n';
        }
    }
    return out;
}

void save(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "data.csv", std::ios::binary);
        if (!f) throw DataError("cannot write " + (dir / "data.csv").string());
        f << to_csv_text(dataset);
    }
    std::ofstream f(dir / "manifest.json", std::ios::binary);
    if (!f) throw DataError("cannot write " + (dir / "manifest.json").string());
    f << manifest(dataset).dump(2) << '\n';
}

Dataset split(Dataset dataset, const std::vector<double>& fractions, std::uint64_t seed) {
    if (fractions.size() != 3) throw std::invalid_argument("split: expected (train, valid, test) fractions");
    double total = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw std::invalid_argument("split: fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");
    const size_t n = dataset.instances.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the permutation does not depend on
    // the standard library's shuffle implementation.
    for (size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<size_t> u(0, i - 1);
        std::swap(idx[i - 1], idx[u(rng)]);
    }
    const auto n_train = static_cast<size_t>(std::llround(fractions[0] * static_cast<double>(n)));
    const auto n_valid = std::min(n - n_train, static_cast<size_t>(std::llround(fractions[1] * static_cast<double>(n))));
    dataset.splits.assign(n, Split::Test);
    for (size_t i = 0; i < n; ++i) {
        const Split s = i < n_train ? Split::Train : (i < n_train + n_valid ? Split::Valid : Split::Test);
        dataset.splits[idx[i]] = s;
    }
    return dataset;
}

Vector observed_means(const std::vector<const Instance*>& instances, int dim) {
    Vector sum = Vector::Zero(dim), count = Vector::Zero(dim);
    for (const auto* inst : instances) {
        sum += inst->values.rowwise().sum();
        count += inst->mask.rowwise().sum();
    }
    Vector out(dim);
    for (int d = 0; d < dim; ++d) out(d) = count(d) > 0 ? sum(d) / count(d) : 0.0;
    return out;
}

Dataset standardize(Dataset dataset) {
    if (dataset.standardization) throw std::logic_error("standardize: dataset is already standardized");
    std::vector<const Instance*> ref = dataset.subset(Split::Train);
    if (ref.empty())
        for (const auto& inst : dataset.instances) ref.push_back(&inst);
    const int dim = dataset.dim;
    Standardization s;
    s.mean = observed_means(ref, dim);
    Vector sq = Vector::Zero(dim), count = Vector::Zero(dim);
    for (const auto* inst : ref) {
        for (Eigen::Index k = 0; k < inst->events(); ++k)
            for (int d = 0; d < dim; ++d)
                if (inst->mask(d, k) == 1.0) {
                    const double r = inst->values(d, k) - s.mean(d);
                    sq(d) += r * r;
                    count(d) += 1.0;
                }
    }
    s.std.resize(dim);
    for (int d = 0; d < dim; ++d) {
        const double sd = count(d) > 1 ? std::sqrt(sq(d) / (count(d) - 1.0)) : 1.0;
        s.std(d) = sd > 0 ? sd : 1.0;
    }
    for (auto& inst : dataset.instances) inst.values = s.apply(inst.values, inst.mask);
    dataset.standardization = s;
    return dataset;
}

}  // namespace rfn::data
