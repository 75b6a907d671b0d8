#include "rfn/gbm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace rfn::gbm {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    // splitmix64 finaliser over the combined key.
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Matrix block_matrix(double rho1, double rho2) {
    Matrix b = Matrix::Identity(GbmConfig::kDim, GbmConfig::kDim);
    b(0, 1) = b(1, 0) = rho1;
    for (int i = 2; i < 5; ++i)
        for (int j = 2; j < 5; ++j)
            if (i != j) b(i, j) = rho2;
    return b;
}

Matrix CorrelationSchedule::operator()(double t) const {
    Matrix r = std::sin(M_PI * t / 2.0) * block_;
    r.diagonal().setOnes();
    return r;
}

namespace {

Matrix cholesky_or_throw(const Matrix& corr, double t) {
    Eigen::LLT<Matrix> llt(corr);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("correlation matrix is not positive definite at t = " + std::to_string(t));
    return llt.matrixL();
}

}  // namespace

void GbmConfig::validate() const {
    if (grid_points < 2) throw std::invalid_argument("GbmConfig: grid_points must be >= 2");
    if (n_instances < 1) throw std::invalid_argument("GbmConfig: n_instances must be >= 1");
    if (!(horizon > 0)) throw std::invalid_argument("GbmConfig: horizon must be positive");
    if (x0.size() != kDim || (x0.array() <= 0).any()) throw std::invalid_argument("GbmConfig: x0 must be 5 positive values");
    for (const Range& r : {drift_block1, drift_block2, vol_block1, vol_block2})
        if (r.hi < r.lo) throw std::invalid_argument("GbmConfig: empty parameter range");
    if (vol_block1.lo < 0 || vol_block2.lo < 0) throw std::invalid_argument("GbmConfig: volatility must be non-negative");
    if (fixed_drift && fixed_drift->size() != kDim) throw std::invalid_argument("GbmConfig: fixed drift needs 5 entries");
    if (fixed_vol && fixed_vol->size() != kDim) throw std::invalid_argument("GbmConfig: fixed vol needs 5 entries");
    // sin(pi t / 2) is monotone on [0, 1], so t = 1 is the binding case.
    cholesky_or_throw(CorrelationSchedule(rho1, rho2)(1.0), 1.0);
}

data::Dataset simulate(const GbmConfig& config) {
    config.validate();
    const int dim = GbmConfig::kDim;
    const int k = config.grid_points;
    const double dt = config.horizon / (k - 1);
    const CorrelationSchedule schedule(config.rho1, config.rho2);

    std::vector<Matrix> chol;
    chol.reserve(static_cast<size_t>(k - 1));
    for (int j = 0; j + 1 < k; ++j) {
        const double mid = (j + 0.5) * dt;
        chol.push_back(cholesky_or_throw(schedule(mid), mid));
    }

    data::Dataset ds;
    ds.dim = dim;
    ds.horizon = config.horizon;
    Vector times(k);
    for (int j = 0; j < k; ++j) times(j) = j * dt;
    times(k - 1) = config.horizon;

    nlohmann::json params = nlohmann::json::array();
    ds.instances.reserve(static_cast<size_t>(config.n_instances));
    for (int i = 0; i < config.n_instances; ++i) {
        std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        auto draw = [&](const Range& r) { return r.lo + (r.hi - r.lo) * unif(rng); };
        Vector mu(dim), sigma(dim);
        const double m1 = draw(config.drift_block1), m2 = draw(config.drift_block2);
        const double s1 = draw(config.vol_block1), s2 = draw(config.vol_block2);
        mu << m1, m1, m2, m2, m2;
        sigma << s1, s1, s2, s2, s2;
        if (config.fixed_drift) mu = *config.fixed_drift;
        if (config.fixed_vol) sigma = *config.fixed_vol;

        std::normal_distribution<double> normal(0.0, 1.0);
        data::Instance inst;
        inst.id = std::to_string(i);
        inst.times = times;
        inst.values.resize(dim, k);
        inst.mask = Matrix::Ones(dim, k);
        Vector logx = config.x0.array().log();
        inst.values.col(0) = config.x0;
        const Vector drift = ((mu.array() - 0.5 * sigma.array().square()) * dt).matrix();
        const double sqdt = std::sqrt(dt);
        Vector xi(dim);
        for (int j = 0; j + 1 < k; ++j) {
            for (int d = 0; d < dim; ++d) xi(d) = normal(rng);
            const Vector eps = chol[static_cast<size_t>(j)] * xi;
            logx += drift + (sigma.array() * eps.array()).matrix() * sqdt;
            inst.values.col(j + 1) = logx.array().exp();
        }
        params.push_back({{"id", inst.id},
                          {"mu", std::vector<double>(mu.data(), mu.data() + dim)},
                          {"sigma", std::vector<double>(sigma.data(), sigma.data() + dim)}});
        ds.instances.push_back(std::move(inst));
    }
    ds.extra = {{"generator", "correlated_gbm"},
                {"rho1", config.rho1},
                {"rho2", config.rho2},
                {"grid_points", config.grid_points},
                {"seed", config.seed},
                {"x0", std::vector<double>(config.x0.data(), config.x0.data() + dim)},
                {"parameter_draws", "per_instance"},
                {"instance_parameters", params}};
    return ds;
}

namespace {

void check_keep(double keep) {
    if (!(keep > 0.0 && keep <= 1.0)) throw std::invalid_argument("keep_fraction must lie in (0, 1]");
}

void check_full(const data::Dataset& ds) {
    for (const auto& inst : ds.instances)
        if (data::classify(inst) != data::SeriesKind::Syn)
            throw std::invalid_argument("subsampling requires a fully observed dataset");
}

data::Instance take_columns(const data::Instance& src, const std::vector<Eigen::Index>& cols) {
    data::Instance out;
    out.id = src.id;
    const auto n = static_cast<Eigen::Index>(cols.size());
    out.times.resize(n);
    out.values.resize(src.dim(), n);
    out.mask.resize(src.dim(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto c = cols[static_cast<size_t>(i)];
        out.times(i) = src.times(c);
        out.values.col(i) = src.values.col(c);
        out.mask.col(i) = src.mask.col(c);
    }
    return out;
}

}  // namespace

data::Dataset subsample_syn(const data::Dataset& dataset, double keep_fraction, std::uint64_t seed) {
    check_keep(keep_fraction);
    check_full(dataset);
    data::Dataset out = dataset;
    if (keep_fraction == 1.0) return out;
    for (size_t i = 0; i < out.instances.size(); ++i) {
        const auto& src = dataset.instances[i];
        const auto k = src.events();
        const auto keep = std::max<Eigen::Index>(1, std::llround(keep_fraction * static_cast<double>(k)));
        std::vector<Eigen::Index> idx(static_cast<size_t>(k));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        std::mt19937_64 rng(derive_seed(seed, i));
        // Partial Fisher-Yates: the first `keep` slots become a uniform subset.
        for (Eigen::Index j = 0; j < keep; ++j) {
            std::uniform_int_distribution<Eigen::Index> u(j, k - 1);
            std::swap(idx[static_cast<size_t>(j)], idx[static_cast<size_t>(u(rng))]);
        }
        idx.resize(static_cast<size_t>(keep));
        std::sort(idx.begin(), idx.end());
        out.instances[i] = take_columns(src, idx);
    }
    return out;
}

data::Dataset subsample_asyn(const data::Dataset& dataset, double keep_fraction, std::uint64_t seed) {
    check_keep(keep_fraction);
    check_full(dataset);
    data::Dataset out = dataset;
    if (keep_fraction == 1.0) return out;
    for (size_t i = 0; i < out.instances.size(); ++i) {
        data::Instance inst = dataset.instances[i];
        std::mt19937_64 rng(derive_seed(seed, i));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (Eigen::Index d = 0; d < inst.dim(); ++d)
            for (Eigen::Index k = 0; k < inst.events(); ++k)
                if (u(rng) >= keep_fraction) {
                    inst.mask(d, k) = 0.0;
                    inst.values(d, k) = 0.0;
                }
        std::vector<Eigen::Index> keep;
        for (Eigen::Index k = 0; k < inst.events(); ++k)
            if (inst.mask.col(k).sum() > 0) keep.push_back(k);
        if (keep.empty()) {
            // Every entry dropped: retain the first column's first variable so the instance stays valid.
            inst.mask(0, 0) = 1.0;
            inst.values(0, 0) = dataset.instances[i].values(0, 0);
            keep.push_back(0);
        }
        out.instances[i] = take_columns(inst, keep);
    }
    return out;
}

Matrix empirical_correlation(const Matrix& samples) {
    if (samples.rows() < 2) throw std::invalid_argument("empirical_correlation needs at least two samples");
    const Matrix centered = samples.rowwise() - samples.colwise().mean();
    const Matrix cov = centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
    const auto d = samples.cols();
    Matrix corr(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
            const double den = std::sqrt(cov(i, i) * cov(j, j));
            corr(i, j) = den > 0 ? cov(i, j) / den : std::numeric_limits<double>::quiet_NaN();
        }
    for (Eigen::Index i = 0; i < d; ++i)
        if (cov(i, i) > 0) corr(i, i) = 1.0;
    return corr;
}

}  // namespace rfn::gbm
