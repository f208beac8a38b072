#pragma once

#include "sae/data_model.hpp"
#include "sae/error.hpp"
#include "sae/estimators.hpp"
#include "sae/glm.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sae::diagnostics {

enum class Covariance { HC1, Classical };

/// Coefficient on the area-j indicator in the linear regression of Y on
/// that indicator, the population covariates and the survey-only covariates.
struct RegressionResult {
    double delta_hat = 0.0;
    double se = 0.0;
    double df = 0.0;
    std::size_t n = 0;
    /// Labels of dummy columns dropped as linearly dependent.
    std::vector<std::string> dropped;
};

RegressionResult area_ignorability_regression(const SurveyDataset& survey, std::string_view area,
                                              const std::vector<std::string>& xp_vars,
                                              const std::vector<std::string>& xs_vars,
                                              Covariance covariance = Covariance::HC1,
                                              const std::vector<glm::Interaction>& interactions = {});

struct TestVerdict {
    double statistic = 0.0;
    double p_value = 1.0;
    bool reject = false;
};

/// Two one-sided tests of H0: |delta| >= epsilon.
struct EquivalenceVerdict {
    double epsilon = 0.0;
    double alpha = 0.05;
    TestVerdict lower;  ///< H0: delta <= -epsilon
    TestVerdict upper;  ///< H0: delta >= epsilon
    double p_value = 1.0;  ///< max of the two one-sided p-values
    bool reject = false;
    Interval interval;  ///< (1 - 2 alpha) interval for delta
};

/// Two-sided t-test of delta = 0. Not rejecting is not evidence of
/// ignorability; use the equivalence test for that.
TestVerdict conventional_test(double delta_hat, double se, double df, double alpha);

EquivalenceVerdict equivalence_test(double delta_hat, double se, double df, double epsilon, double alpha);

struct IgnorabilityResult {
    std::string area;
    RegressionResult regression;
    TestVerdict conventional;
    /// (1 - alpha) interval; flagged when it excludes zero.
    Interval interval;
    std::optional<EquivalenceVerdict> equivalence;
    bool flagged = false;
    std::optional<std::string> error;
    Error::Category error_category = Error::Category::Numerical;
};

struct PanelOptions {
    std::vector<std::string> xp_vars;
    std::vector<std::string> xs_vars;
    std::vector<glm::Interaction> interactions;
    /// Equivalence margin; no equivalence test when unset.
    std::optional<double> epsilon;
    double alpha = 0.05;
    Covariance covariance = Covariance::HC1;
    unsigned threads = 1;
};

/// One regression per observed area, in order of first appearance.
std::vector<IgnorabilityResult> ignorability_panel(const SurveyDataset& survey, const PanelOptions& options);

/// area, delta, se, ci_lower, ci_upper, p_conventional, p_tost, flag
void write_panel_csv(std::ostream& out, const std::vector<IgnorabilityResult>& panel);

} // namespace sae::diagnostics
