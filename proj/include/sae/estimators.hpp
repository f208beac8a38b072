#pragma once

#include "sae/data_model.hpp"
#include "sae/error.hpp"
#include "sae/glm.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sae {

enum class Method { Direct, Synthetic, SyntheticDecomposed };
const char* method_name(Method m);

/// How Pr(A = j | covariates, S = 1) is modelled.
enum class MembershipModel { OneVsRest, Multinomial };

struct Interval {
    double level = 0.9;
    double lower = 0.0;
    double upper = 0.0;
};

struct EstimateResult {
    std::string area;
    double estimate = 0.0;
    double se = 0.0;
    Interval interval;
    Method method = Method::Synthetic;
    /// Respondents in the area (the direct sample size).
    std::size_t n_area = 0;
    double ess = 0.0;
    /// (direct part, indirect part) of the decomposed estimator.
    std::optional<std::pair<double, double>> components;
    /// Probabilities clipped before forming the pooling odds.
    std::size_t clipped = 0;
};

/// Synthetic-area weights for one target area with the factors retained.
struct AreaWeights {
    std::string area;
    std::vector<double> zeta;
    std::vector<double> p_pop;
    std::vector<double> inv_prop;
    std::vector<double> weight;
    double ess = 0.0;
    double max_share = 0.0;
    std::size_t trimmed = 0;
    std::optional<double> trim_cap;
};

/// Variables and penalty of the two area-membership regressions.
struct ZetaSpec {
    std::vector<std::string> xp_vars;
    std::vector<std::string> xs_vars;
    std::vector<glm::Interaction> interactions;
    double lambda = glm::kDefaultLambda;
    MembershipModel membership = MembershipModel::OneVsRest;
};

/// In-sample membership probabilities for one area and their ratio.
struct ZetaResult {
    std::vector<double> zeta;
    /// Pr^(A = j | X^P, X^S, S = 1)
    std::vector<double> numerator;
    /// Pr^(A != j | X^P, X^S, S = 1), evaluated directly rather than as 1 - p.
    std::vector<double> numerator_complement;
    /// Pr^(A = j | X^P, S = 1)
    std::vector<double> denominator;
    /// log of the three probabilities above, kept to avoid underflow.
    std::vector<double> log_numerator;
    std::vector<double> log_complement;
    std::vector<double> log_denominator;
    /// True when zeta was set to 1 without fitting (area holds every
    /// respondent, or has none and the estimate falls back to X^P only).
    bool trivial = false;
};

struct EstimatorConfig {
    /// Unset means every population (resp. survey-only) covariate.
    std::optional<std::vector<std::string>> xp_vars;
    std::optional<std::vector<std::string>> xs_vars;
    std::vector<glm::Interaction> interactions;
    double lambda = glm::kDefaultLambda;
    MembershipModel membership = MembershipModel::OneVsRest;
    std::optional<double> trim_quantile;
    int bootstrap_replicates = 0;
    double interval_level = 0.90;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    bool keep_weights = false;
    bool with_direct = true;

    ZetaSpec zeta_spec(const CovariateSchema& schema) const;
};

struct SamplingPropensity {
    /// pi^_i = survey share / population share of respondent i's X^P cell.
    std::vector<double> propensity;
    /// 1 / pi^_i, the weight used downstream.
    std::vector<double> inverse;
};

/// Cell-ratio sampling propensities: pi^_i proportional to the survey
/// share of respondent i's X^P cell over that cell's population share.
SamplingPropensity estimate_sampling_propensity(const SurveyDataset& survey, const PopulationTable& table);

/// National weights when the survey carries them, otherwise the inverse of
/// estimate_sampling_propensity.
std::vector<double> inverse_propensity(const SurveyDataset& survey, const PopulationTable& table);

/// Linearization standard error of a weighted mean with fixed, normalized
/// weights: se^2 = sum_i w_i^2 (y_i - tau^)^2. Throws for fewer than two
/// observations. For uniform weights this is sqrt(p(1-p)/n), i.e. without
/// the n/(n-1) correction.
double weighted_mean_se(std::span<const double> weights, std::span<const double> y);

/// Within-area inverse-probability weighted mean.
EstimateResult direct_estimate(const SurveyDataset& survey, std::string_view area,
                               std::span<const double> inv_prop, double interval_level = 0.90);

ZetaResult estimate_zeta(const SurveyDataset& survey, std::string_view area, const ZetaSpec& spec);

/// zeta for each of `areas`, sharing fits where the membership model allows.
std::vector<ZetaResult> estimate_zeta_all(const SurveyDataset& survey, std::span<const std::string> areas,
                                          const ZetaSpec& spec, unsigned threads = 1);

AreaWeights synthetic_weights(const SurveyDataset& survey, const PopulationTable& table, std::string_view area,
                              std::span<const double> zeta, std::span<const double> inv_prop,
                              std::optional<double> trim_quantile = std::nullopt);

EstimateResult synthetic_estimate(const SurveyDataset& survey, const PopulationTable& table, std::string_view area,
                                  const EstimatorConfig& config);

/// Splits the synthetic estimate into the part carried by area-j respondents
/// and the part pooled from other areas.
EstimateResult decompose_estimate(const SurveyDataset& survey, const PopulationTable& table, std::string_view area,
                                  const EstimatorConfig& config);

/// Decomposition from precomputed pieces; `zeta` must come from the same fit.
EstimateResult decompose_from(const SurveyDataset& survey, const PopulationTable& table, std::string_view area,
                              const ZetaResult& zeta, std::span<const double> inv_prop,
                              const EstimatorConfig& config);

struct AreaEstimate {
    std::string area;
    std::optional<EstimateResult> synthetic;
    std::optional<EstimateResult> direct;
    std::optional<AreaWeights> weights;
    std::vector<std::string> warnings;
    std::optional<std::string> error;
    Error::Category error_category = Error::Category::Numerical;
};

/// Runs all three steps for every population area, in population order.
/// Per-area failures are recorded in `error` and do not stop other areas.
std::vector<AreaEstimate> estimate_all_areas(const SurveyDataset& survey, const PopulationTable& table,
                                             const EstimatorConfig& config);

/// Nonparametric bootstrap standard error of the synthetic estimate for one
/// area, refitting every step on each respondent resample.
double bootstrap_se(const SurveyDataset& survey, const PopulationTable& table, std::string_view area,
                    const EstimatorConfig& config, std::size_t area_stream);

/// Normal-approximation interval.
Interval normal_interval(double estimate, double se, double level);

} // namespace sae
