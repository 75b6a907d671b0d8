#include "rfn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace rfn::metrics {

double crps_empirical(const Vector& samples, double x) {
    const auto n = samples.size();
    if (n == 0) throw std::invalid_argument("crps_empirical: no samples");
    std::vector<double> s(samples.data(), samples.data() + n);
    std::sort(s.begin(), s.end());
    double abs_err = 0.0, spread = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        abs_err += std::abs(s[static_cast<size_t>(i)] - x);
        // Sum over pairs i < j of (s_j - s_i), counted from the sorted position.
        spread += s[static_cast<size_t>(i)] * static_cast<double>(2 * i - n + 1);
    }
    const double dn = static_cast<double>(n);
    return std::max(0.0, abs_err / dn - spread / (dn * dn));
}

double crps_quadrature(const Vector& samples, double x) {
    const auto n = samples.size();
    if (n == 0) throw std::invalid_argument("crps_quadrature: no samples");
    std::vector<double> pts(samples.data(), samples.data() + n);
    pts.push_back(x);
    std::sort(pts.begin(), pts.end());
    const double pad = 1.0 + (pts.back() - pts.front());
    pts.insert(pts.begin(), pts.front() - pad);
    pts.push_back(pts.back() + pad);
    double total = 0.0;
    for (size_t k = 0; k + 1 < pts.size(); ++k) {
        const double a = pts[k], b = pts[k + 1];
        if (b <= a) continue;
        const double mid = 0.5 * (a + b);
        const double diff = empirical_cdf(samples, mid) - (x <= mid ? 1.0 : 0.0);
        total += diff * diff * (b - a);
    }
    return total;
}

double empirical_cdf(const Vector& samples, double x) {
    if (samples.size() == 0) throw std::invalid_argument("empirical_cdf: no samples");
    return static_cast<double>((samples.array() <= x).count()) / static_cast<double>(samples.size());
}

namespace {

void check(const Ensemble& e) {
    if (e.samples.rows() < 1 || e.samples.cols() != e.observation.size() || e.mask.size() != e.observation.size())
        throw ShapeError("ensemble: samples, observation and mask disagree");
}

}  // namespace

double crps_sum(const std::vector<Ensemble>& ensembles) {
    double total = 0.0;
    long count = 0;
    for (const auto& e : ensembles) {
        check(e);
        if (e.mask.sum() <= 0.0) continue;
        const Vector sums = e.samples * e.mask;
        total += crps_empirical(sums, e.observation.dot(e.mask));
        ++count;
    }
    if (count == 0) throw std::invalid_argument("crps_sum: no observed time points");
    return total / static_cast<double>(count);
}

double crps_mean(const std::vector<Ensemble>& ensembles) {
    double total = 0.0;
    long count = 0;
    for (const auto& e : ensembles) {
        check(e);
        for (Eigen::Index d = 0; d < e.mask.size(); ++d) {
            if (e.mask(d) != 1.0) continue;
            total += crps_empirical(e.samples.col(d), e.observation(d));
            ++count;
        }
    }
    if (count == 0) throw std::invalid_argument("crps_mean: no observed entries");
    return total / static_cast<double>(count);
}

std::vector<double> decile_levels() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

ConfidenceResult confidence_score(const std::vector<std::vector<double>>& cdf_values,
                                  const std::vector<double>& levels) {
    if (levels.empty()) throw std::invalid_argument("confidence_score: no quantile levels");
    ConfidenceResult out;
    double total = 0.0;
    int used = 0;
    for (size_t d = 0; d < cdf_values.size(); ++d) {
        const auto& v = cdf_values[d];
        if (v.empty()) {
            std::cerr << "warning: confidence_score: dimension " << d << " has no observations, excluded\n";
            out.excluded_dims.push_back(static_cast<int>(d));
            continue;
        }
        for (double p : levels) {
            const auto hits = std::count_if(v.begin(), v.end(), [p](double f) { return f <= p; });
            const double phat = static_cast<double>(hits) / static_cast<double>(v.size());
            total += (p - phat) * (p - phat);
        }
        ++used;
    }
    if (used == 0) throw std::invalid_argument("confidence_score: no observations");
    out.cs = total / (static_cast<double>(levels.size()) * used);
    return out;
}

ConfidenceResult confidence_score(const std::vector<Ensemble>& ensembles, const std::vector<double>& levels) {
    if (ensembles.empty()) throw std::invalid_argument("confidence_score: no ensembles");
    std::vector<std::vector<double>> cdf(static_cast<size_t>(ensembles.front().observation.size()));
    for (const auto& e : ensembles) {
        check(e);
        if (static_cast<size_t>(e.observation.size()) != cdf.size()) throw ShapeError("confidence_score: mixed dimensions");
        for (Eigen::Index d = 0; d < e.mask.size(); ++d)
            if (e.mask(d) == 1.0) cdf[static_cast<size_t>(d)].push_back(empirical_cdf(e.samples.col(d), e.observation(d)));
    }
    return confidence_score(cdf, levels);
}

Scores score(const std::vector<Ensemble>& ensembles, const std::vector<double>& levels) {
    return {crps_mean(ensembles), crps_sum(ensembles), confidence_score(ensembles, levels).cs};
}

Summary summarize(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("summarize: no values");
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
}

nlohmann::json report_json(const std::string& model, const std::vector<Scores>& runs, const std::vector<double>& levels,
                           const std::string& protocol) {
    std::vector<double> c, s, q;
    for (const auto& r : runs) {
        c.push_back(r.crps);
        s.push_back(r.crps_sum);
        q.push_back(r.cs);
    }
    auto entry = [](const std::vector<double>& v) {
        const Summary sm = summarize(v);
        return nlohmann::json{{"mean", sm.mean}, {"std", sm.std}, {"runs", v}};
    };
    return {{"schema", "rfn.report/1"},
            {"model", model},
            {"protocol", protocol},
            {"cs_levels", levels},
            {"metrics", {{"crps", entry(c)}, {"crps_sum", entry(s)}, {"cs", entry(q)}}}};
}

}  // namespace rfn::metrics
