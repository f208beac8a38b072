#include "sae/diagnostics.hpp"

#include "sae/csv.hpp"
#include "sae/error.hpp"
#include "sae/parallel.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <limits>
#include <ostream>

namespace sae::diagnostics {

namespace {

// Upper-tail probability Pr(T > t) with the se -> 0 limits handled.
double upper_tail(double t, double df) {
    if (std::isnan(t)) return 1.0;
    if (t == INFINITY) return 0.0;
    if (t == -INFINITY) return 1.0;
    const boost::math::students_t dist(df);
    return boost::math::cdf(boost::math::complement(dist, t));
}

double critical_value(double df, double upper_prob) {
    const boost::math::students_t dist(df);
    return boost::math::quantile(boost::math::complement(dist, upper_prob));
}

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 0.5)) throw ConfigError("alpha must lie in (0, 0.5)");
}

void check_df(double df) {
    if (!(df > 0.0)) throw NumericalError("test has no residual degrees of freedom");
}

// t statistic (num / se) with se = 0 read as the limit se -> 0+.
double ratio(double num, double se) {
    if (se > 0.0) return num / se;
    if (num > 0.0) return INFINITY;
    if (num < 0.0) return -INFINITY;
    return std::numeric_limits<double>::quiet_NaN();
}

} // namespace

RegressionResult area_ignorability_regression(const SurveyDataset& survey, std::string_view area,
                                              const std::vector<std::string>& xp_vars,
                                              const std::vector<std::string>& xs_vars, Covariance covariance,
                                              const std::vector<glm::Interaction>& interactions) {
    std::size_t in_area = 0;
    for (const auto& a : survey.area()) in_area += a == area;
    if (in_area == 0 || in_area == survey.size())
        throw DataError("area '" + std::string(area) +
                        "': the area indicator is constant (all or no respondents in the area)");

    std::vector<std::string> vars = xp_vars;
    vars.insert(vars.end(), xs_vars.begin(), xs_vars.end());
    const auto covariates = glm::build_design(survey, vars, interactions);

    // Column order: intercept, area indicator, covariate dummies. Dependent
    // dummies are dropped after the indicator, so it is kept whenever it is
    // identifiable at all.
    const Eigen::Index n = covariates.x.rows();
    Eigen::MatrixXd x(n, covariates.x.cols() + 1);
    x.col(0) = covariates.x.col(0);
    for (Eigen::Index i = 0; i < n; ++i) x(i, 1) = survey.area()[static_cast<std::size_t>(i)] == area ? 1.0 : 0.0;
    x.rightCols(covariates.x.cols() - 1) = covariates.x.rightCols(covariates.x.cols() - 1);
    std::vector<std::string> labels{"(intercept)", "area=" + std::string(area)};
    labels.insert(labels.end(), covariates.labels.begin() + 1, covariates.labels.end());

    const Eigen::Map<const Eigen::VectorXd> y(survey.outcome().data(), n);
    const auto fit = glm::fit_ols(x, y);
    if (fit.kept.size() < 2 || fit.kept[1] != 1)
        throw NumericalError("area '" + std::string(area) + "': indicator is collinear with the covariates");

    RegressionResult r;
    r.n = static_cast<std::size_t>(n);
    for (auto d : fit.dropped) r.dropped.push_back(labels[d]);
    const auto k = static_cast<Eigen::Index>(fit.kept.size());
    r.df = static_cast<double>(n - k);
    check_df(r.df);
    r.delta_hat = fit.coefficients[1];

    if (covariance == Covariance::Classical) {
        const double sigma2 = fit.residuals.squaredNorm() / r.df;
        r.se = std::sqrt(sigma2 * fit.xtx_inverse(1, 1));
    } else {
        // HC1 sandwich: (X'X)^-1 X' diag(e^2) X (X'X)^-1 * n / (n - k), row 1 only.
        Eigen::MatrixXd xk(n, k);
        for (Eigen::Index c = 0; c < k; ++c) xk.col(c) = x.col(static_cast<Eigen::Index>(fit.kept[static_cast<std::size_t>(c)]));
        const Eigen::VectorXd a = xk * fit.xtx_inverse.col(1);
        const double meat = (a.array().square() * fit.residuals.array().square()).sum();
        r.se = std::sqrt(meat * static_cast<double>(n) / r.df);
    }
    return r;
}

TestVerdict conventional_test(double delta_hat, double se, double df, double alpha) {
    check_alpha(alpha);
    check_df(df);
    TestVerdict v;
    v.statistic = ratio(delta_hat, se);
    v.p_value = std::isnan(v.statistic) ? 1.0 : std::min(1.0, 2.0 * upper_tail(std::abs(v.statistic), df));
    v.reject = v.p_value < alpha;
    return v;
}

EquivalenceVerdict equivalence_test(double delta_hat, double se, double df, double epsilon, double alpha) {
    check_alpha(alpha);
    check_df(df);
    if (!(epsilon > 0.0)) throw ConfigError("equivalence margin epsilon must be positive");
    if (se < 0.0) throw ConfigError("standard error must be nonnegative");
    EquivalenceVerdict v;
    v.epsilon = epsilon;
    v.alpha = alpha;
    v.lower.statistic = ratio(delta_hat + epsilon, se);
    v.lower.p_value = upper_tail(v.lower.statistic, df);
    v.lower.reject = v.lower.p_value < alpha;
    v.upper.statistic = ratio(epsilon - delta_hat, se);
    v.upper.p_value = upper_tail(v.upper.statistic, df);
    v.upper.reject = v.upper.p_value < alpha;
    v.p_value = std::max(v.lower.p_value, v.upper.p_value);
    v.reject = v.lower.reject && v.upper.reject;
    const double half = critical_value(df, alpha) * se;
    v.interval = {1.0 - 2.0 * alpha, delta_hat - half, delta_hat + half};
    return v;
}

std::vector<IgnorabilityResult> ignorability_panel(const SurveyDataset& survey, const PanelOptions& options) {
    check_alpha(options.alpha);
    const auto areas = survey.observed_areas();
    if (areas.size() < 2) throw DataError("the ignorability panel needs respondents from at least two areas");

    std::vector<IgnorabilityResult> out(areas.size());
    parallel_for(areas.size(), options.threads, [&](std::size_t k) {
        auto& r = out[k];
        r.area = areas[k];
        try {
            r.regression = area_ignorability_regression(survey, r.area, options.xp_vars, options.xs_vars,
                                                        options.covariance, options.interactions);
            const auto& g = r.regression;
            r.conventional = conventional_test(g.delta_hat, g.se, g.df, options.alpha);
            const double half = critical_value(g.df, options.alpha / 2.0) * g.se;
            r.interval = {1.0 - options.alpha, g.delta_hat - half, g.delta_hat + half};
            r.flagged = r.interval.lower > 0.0 || r.interval.upper < 0.0;
            if (options.epsilon) r.equivalence = equivalence_test(g.delta_hat, g.se, g.df, *options.epsilon, options.alpha);
        } catch (const Error& e) {
            r.error = e.what();
            r.error_category = e.category();
        }
    });
    return out;
}

void write_panel_csv(std::ostream& out, const std::vector<IgnorabilityResult>& panel) {
    csv::write_row(out, {"area", "delta", "se", "ci_lower", "ci_upper", "p_conventional", "p_tost", "flag"});
    for (const auto& r : panel) {
        if (r.error) {
            csv::write_row(out, {r.area, "NA", "NA", "NA", "NA", "NA", "NA", "error"});
            continue;
        }
        csv::write_row(out, {r.area, csv::format_double(r.regression.delta_hat), csv::format_double(r.regression.se),
                             csv::format_double(r.interval.lower), csv::format_double(r.interval.upper),
                             csv::format_double(r.conventional.p_value),
                             r.equivalence ? csv::format_double(r.equivalence->p_value) : "NA",
                             r.flagged ? "1" : "0"});
    }
}

} // namespace sae::diagnostics
