#pragma once

// Correlated geometric Brownian motion benchmark with a sinusoidally
// strengthening correlation, plus Syn/Asyn subsampling and correlation
// diagnostics.

#include "rfn/timeseries.hpp"

#include <cstdint>
#include <optional>

namespace rfn::gbm {

struct Range {
    double lo;
    double hi;
};

struct GbmConfig {
    // Variables 1-2 form the first block, 3-5 the second.
    static constexpr int kDim = 5;

    Range drift_block1{-0.2, -0.05};
    Range drift_block2{0.05, 0.2};
    Range vol_block1{0.15, 0.3};
    Range vol_block2{0.15, 0.3};
    double rho1 = 0.8;
    double rho2 = 0.6;
    double horizon = 1.0;
    int grid_points = 101;
    int n_instances = 1000;
    std::uint64_t seed = 0;
    Vector x0 = Vector::Ones(kDim);

    // Fixed (mu, sigma) for every instance instead of per-instance draws; used
    // by moment tests.
    std::optional<Vector> fixed_drift;
    std::optional<Vector> fixed_vol;

    void validate() const;
};

// Block matrix B with unit diagonal.
Matrix block_matrix(double rho1, double rho2);

// sin(pi t / 2) * B with ones restored on the diagonal.
class CorrelationSchedule {
public:
    CorrelationSchedule(double rho1, double rho2) : block_(block_matrix(rho1, rho2)) {}
    Matrix operator()(double t) const;

private:
    Matrix block_;
};

// Fully observed paths on a uniform grid of `grid_points` nodes over [0, T].
// Log-space Euler-Maruyama with Cholesky-correlated increments evaluated at
// step midpoints. Deterministic in config.seed; instance i draws from its own
// derived stream.
data::Dataset simulate(const GbmConfig& config);

// Keeps round(keep * K) randomly chosen time columns per instance.
data::Dataset subsample_syn(const data::Dataset& dataset, double keep_fraction, std::uint64_t seed);

// Keeps each (variable, time) entry independently with probability keep;
// columns left without observations are dropped.
data::Dataset subsample_asyn(const data::Dataset& dataset, double keep_fraction, std::uint64_t seed);

// Pearson correlation of the columns of an N x D sample matrix. Entries
// involving a zero-variance column are NaN.
Matrix empirical_correlation(const Matrix& samples);

// Independent per-stream generator derived from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace rfn::gbm
