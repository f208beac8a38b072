#pragma once

#include <optional>
#include <span>

namespace sae::oracle {

/// Accuracy of area estimates against known truth.
struct MetricReport {
    double rmse = 0.0;
    double mae = 0.0;
    double mean_error = 0.0;
    /// Pearson correlation of estimates with truth; unset when either has
    /// zero variance.
    std::optional<double> correlation;
};

/// Throws DataError on length mismatch or fewer than two values.
MetricReport fit_metrics(std::span<const double> estimates, std::span<const double> truth);

/// Throws NumericalError when either vector has zero variance.
double pearson_correlation(std::span<const double> a, std::span<const double> b);

/// Correlation of (est_a - truth) with (est_b - truth); needs three or more areas.
double error_correlation(std::span<const double> est_a, std::span<const double> est_b,
                         std::span<const double> truth);

} // namespace sae::oracle
