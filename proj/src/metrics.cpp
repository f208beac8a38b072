#include "sae/metrics.hpp"

#include "sae/error.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sae::oracle {

MetricReport fit_metrics(std::span<const double> estimates, std::span<const double> truth) {
    if (estimates.size() != truth.size()) throw DataError("estimates and truth differ in length");
    if (estimates.size() < 2) throw DataError("metrics need at least two areas");
    const auto n = static_cast<double>(estimates.size());
    MetricReport r;
    double sq = 0.0;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        const double e = estimates[i] - truth[i];
        sq += e * e;
        r.mae += std::abs(e);
        r.mean_error += e;
    }
    r.rmse = std::sqrt(sq / n);
    r.mae /= n;
    r.mean_error /= n;
    try {
        r.correlation = pearson_correlation(estimates, truth);
    } catch (const NumericalError&) {
    }
    return r;
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError("correlation inputs differ in length");
    if (a.size() < 2) throw DataError("correlation needs at least two values");
    const auto n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    // relative test so that rounding residue of a constant vector counts as zero
    const double scale_a = std::abs(ma) + 1.0, scale_b = std::abs(mb) + 1.0;
    if (saa <= 1e-28 * n * scale_a * scale_a || sbb <= 1e-28 * n * scale_b * scale_b)
        throw NumericalError("correlation undefined: zero variance");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double error_correlation(std::span<const double> est_a, std::span<const double> est_b,
                         std::span<const double> truth) {
    if (est_a.size() != truth.size() || est_b.size() != truth.size())
        throw DataError("estimate sets and truth differ in length");
    if (truth.size() < 3) throw DataError("error correlation needs at least three areas");
    std::vector<double> ea(truth.size()), eb(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ea[i] = est_a[i] - truth[i];
        eb[i] = est_b[i] - truth[i];
    }
    return pearson_correlation(ea, eb);
}

} // namespace sae::oracle
