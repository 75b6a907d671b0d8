#pragma once

// Irregular multivariate time series: one Instance is a strictly increasing
// time vector, a D x K value matrix and a D x K binary mask.

#include "rfn/autodiff.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfn::data {

enum class SeriesKind { Syn, Asyn };
std::string to_string(SeriesKind k);
SeriesKind parse_series_kind(const std::string& s);

enum class Split : std::uint8_t { Train, Valid, Test, Unassigned };
std::string to_string(Split s);
Split parse_split(const std::string& s);

class DataError : public std::runtime_error {
public:
    DataError(const std::string& what, long row = -1)
        : std::runtime_error(row >= 0 ? what + " (row " + std::to_string(row) + ")" : what), row_(row) {}
    long row() const { return row_; }

private:
    long row_;
};

struct Instance {
    std::string id;
    Vector times;   // K, strictly increasing
    Matrix values;  // D x K, zero where unobserved
    Matrix mask;    // D x K, entries in {0, 1}

    Eigen::Index dim() const { return values.rows(); }
    Eigen::Index events() const { return times.size(); }

    // Throws DataError describing the first violated invariant.
    void validate(double horizon) const;
};

SeriesKind classify(const Instance& instance);

struct Standardization {
    Vector mean;
    Vector std;

    Matrix apply(const Matrix& values, const Matrix& mask) const;
    // Maps standardized samples (n x D) back to data units.
    Matrix invert_rows(const Matrix& samples) const;
};

struct Dataset {
    std::vector<Instance> instances;
    int dim = 0;
    double horizon = 1.0;
    std::vector<Split> splits;  // empty, or one label per instance
    std::optional<Standardization> standardization;
    nlohmann::json extra = nlohmann::json::object();

    void validate() const;
    std::vector<const Instance*> subset(Split s) const;
    // Syn only when every instance is syn.
    SeriesKind kind() const;
};

struct LoadOptions {
    // Merge rows sharing (instance, time) by OR-ing masks, later row wins on
    // values. When false such rows are rejected.
    bool merge_duplicates = false;
};

struct LoadReport {
    long zeroed_values = 0;     // value != 0 where mask == 0
    long merged_duplicates = 0;
};

// `path` is either a dataset directory (data.csv + manifest.json) or a CSV file
// with an optional `<file>.json` sidecar manifest.
Dataset load(const std::filesystem::path& path, const LoadOptions& opt = {}, LoadReport* report = nullptr);
Dataset load_csv_text(const std::string& text, const LoadOptions& opt = {}, LoadReport* report = nullptr);

// Writes `dir/data.csv` and `dir/manifest.json`.
void save(const Dataset& dataset, const std::filesystem::path& dir);
std::string to_csv_text(const Dataset& dataset);
nlohmann::json manifest(const Dataset& dataset);

// Deterministic instance-level shuffle and partition. Fractions must sum to 1.
Dataset split(Dataset dataset, const std::vector<double>& fractions, std::uint64_t seed);

// Per-variable mean/std over observed entries of the training split (or all
// instances when unsplit). Returns the transformed dataset with constants stored.
Dataset standardize(Dataset dataset);

// Empirical per-variable means over observed entries of `instances`.
Vector observed_means(const std::vector<const Instance*>& instances, int dim);

}  // namespace rfn::data
