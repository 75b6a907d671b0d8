#pragma once

// Ensemble scoring: CRPS, CRPS_sum and the quantile confidence score.

#include "rfn/autodiff.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace rfn::metrics {

// Exact CRPS of the empirical CDF of `samples` at x, via
// mean|S - x| - 0.5 mean|S - S'|. O(n log n).
double crps_empirical(const Vector& samples, double x);

// Direct quadrature of the integral of (F(z) - 1{x <= z})^2 over the sample
// range padded on both sides; exact for step CDFs up to rounding.
double crps_quadrature(const Vector& samples, double x);

// Right-continuous empirical CDF: fraction of samples <= x.
double empirical_cdf(const Vector& samples, double x);

// Forecast for one (instance, event): n x D samples plus the observation.
struct Ensemble {
    Matrix samples;  // n x D
    Vector observation;
    Vector mask;     // 1 = observed
};

// CRPS of the row sums over observed dimensions, averaged over ensembles that
// have at least one observed dimension.
double crps_sum(const std::vector<Ensemble>& ensembles);

// Mean CRPS over every observed (ensemble, dimension) pair.
double crps_mean(const std::vector<Ensemble>& ensembles);

std::vector<double> decile_levels();

struct ConfidenceResult {
    double cs = 0.0;
    std::vector<int> excluded_dims;  // dimensions without observations
};

// cdf_values[d] holds F_t^d(x_t^d) over observed t for dimension d.
ConfidenceResult confidence_score(const std::vector<std::vector<double>>& cdf_values, const std::vector<double>& levels);

// Same, computing the CDF values from ensembles.
ConfidenceResult confidence_score(const std::vector<Ensemble>& ensembles, const std::vector<double>& levels);

struct Scores {
    double crps = 0.0;
    double crps_sum = 0.0;
    double cs = 0.0;
};

Scores score(const std::vector<Ensemble>& ensembles, const std::vector<double>& levels);

// Mean and sample std (0 for one run) of each metric over repeated runs.
struct Summary {
    double mean = 0.0;
    double std = 0.0;
};
Summary summarize(const std::vector<double>& values);

// Report JSON for one model over several runs.
nlohmann::json report_json(const std::string& model, const std::vector<Scores>& runs, const std::vector<double>& levels,
                           const std::string& protocol);

}  // namespace rfn::metrics
