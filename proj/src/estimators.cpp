#include "sae/estimators.hpp"

#include "sae/error.hpp"
#include "sae/parallel.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace sae {

namespace {

constexpr double kClipLow = 1e-12;
constexpr double kClipHigh = 1.0 - 1e-12;

std::size_t count_in_area(const SurveyDataset& survey, std::string_view area) {
    return static_cast<std::size_t>(std::count(survey.area().begin(), survey.area().end(), area));
}

Eigen::VectorXd membership_response(const SurveyDataset& survey, std::string_view area) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(survey.size()));
    for (std::size_t i = 0; i < survey.size(); ++i) y[static_cast<Eigen::Index>(i)] = survey.area()[i] == area;
    return y;
}

struct Designs {
    glm::DesignMatrix numerator;
    glm::DesignMatrix denominator;
    bool identical = false;
};

Designs membership_designs(const SurveyDataset& survey, const ZetaSpec& spec) {
    std::set<std::string> xp(spec.xp_vars.begin(), spec.xp_vars.end());
    std::set<std::string> xs(spec.xs_vars.begin(), spec.xs_vars.end());
    for (const auto& v : spec.xp_vars) {
        auto loc = survey.schema().locate(v);
        if (!loc || loc->first != Role::Population)
            throw ConfigError("'" + v + "' is not a population covariate");
    }
    for (const auto& v : spec.xs_vars) {
        auto loc = survey.schema().locate(v);
        if (!loc || loc->first != Role::Survey) throw ConfigError("'" + v + "' is not a survey-only covariate");
    }
    std::vector<glm::Interaction> den_terms;
    for (const auto& term : spec.interactions) {
        bool all_xp = true;
        for (const auto& v : term) {
            if (!xp.count(v) && !xs.count(v))
                throw ConfigError("interaction variable '" + v + "' is not among the model's covariates");
            all_xp = all_xp && xp.count(v);
        }
        if (all_xp) den_terms.push_back(term);
    }
    std::vector<std::string> num_vars = spec.xp_vars;
    num_vars.insert(num_vars.end(), spec.xs_vars.begin(), spec.xs_vars.end());

    Designs d;
    d.denominator = glm::build_design(survey, spec.xp_vars, den_terms);
    d.identical = spec.xs_vars.empty() && den_terms.size() == spec.interactions.size();
    if (!d.identical) d.numerator = glm::build_design(survey, num_vars, spec.interactions);
    return d;
}

ZetaResult trivial_zeta(std::size_t n, bool all_in_area) {
    ZetaResult z;
    z.trivial = true;
    z.zeta.assign(n, 1.0);
    const double p = all_in_area ? 1.0 : 0.0;
    z.numerator.assign(n, p);
    z.numerator_complement.assign(n, 1.0 - p);
    z.denominator.assign(n, p);
    const double lp = all_in_area ? 0.0 : -INFINITY;
    const double lc = all_in_area ? -INFINITY : 0.0;
    z.log_numerator.assign(n, lp);
    z.log_complement.assign(n, lc);
    z.log_denominator.assign(n, lp);
    return z;
}

ZetaResult assemble(Eigen::VectorXd log_num, Eigen::VectorXd log_comp, Eigen::VectorXd log_den, bool identical) {
    const auto n = static_cast<std::size_t>(log_den.size());
    ZetaResult z;
    z.zeta.resize(n);
    z.numerator.resize(n);
    z.numerator_complement.resize(n);
    z.denominator.resize(n);
    z.log_numerator.assign(log_num.data(), log_num.data() + n);
    z.log_complement.assign(log_comp.data(), log_comp.data() + n);
    z.log_denominator.assign(log_den.data(), log_den.data() + n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        z.numerator[i] = std::exp(log_num[k]);
        z.numerator_complement[i] = std::exp(log_comp[k]);
        z.denominator[i] = std::exp(log_den[k]);
        // Same model in numerator and denominator: the ratio is one by construction.
        z.zeta[i] = identical ? 1.0 : std::exp(log_num[k] - log_den[k]);
        if (!std::isfinite(z.zeta[i]) || !(z.zeta[i] > 0.0))
            throw NumericalError("zeta is not a positive finite number for respondent " + std::to_string(i));
    }
    return z;
}

ZetaResult one_vs_rest(const SurveyDataset& survey, std::string_view area, const Designs& designs, double lambda) {
    const Eigen::VectorXd y = membership_response(survey, area);
    const auto den_fit = glm::fit_ridge_logistic(designs.denominator, y, std::nullopt, lambda);
    Eigen::VectorXd log_den = glm::predict_log_prob(den_fit, designs.denominator, 0);
    if (designs.identical) {
        Eigen::VectorXd log_comp = glm::predict_log_prob(den_fit, designs.denominator, 1);
        return assemble(log_den, std::move(log_comp), log_den, true);
    }
    const auto num_fit = glm::fit_ridge_logistic(designs.numerator, y, std::nullopt, lambda);
    return assemble(glm::predict_log_prob(num_fit, designs.numerator, 0),
                    glm::predict_log_prob(num_fit, designs.numerator, 1), std::move(log_den), false);
}

// log of sum_{k != j} exp(lp_k) for every row of a class log-probability table.
Eigen::VectorXd log_complement(const std::vector<Eigen::VectorXd>& logp, std::size_t j) {
    const Eigen::Index n = logp.front().size();
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double m = -INFINITY;
        for (std::size_t k = 0; k < logp.size(); ++k)
            if (k != j) m = std::max(m, logp[k][i]);
        double s = 0.0;
        for (std::size_t k = 0; k < logp.size(); ++k)
            if (k != j) s += std::exp(logp[k][i] - m);
        out[i] = m + std::log(s);
    }
    return out;
}

std::vector<ZetaResult> multinomial_zeta(const SurveyDataset& survey, std::span<const std::string> areas,
                                         const Designs& designs, double lambda) {
    const auto classes_labels = survey.observed_areas();
    for (const auto& a : areas)
        if (std::find(classes_labels.begin(), classes_labels.end(), a) == classes_labels.end())
            throw DataError("area '" + a +
                            "' has no respondents, so the multinomial membership model has an empty class; "
                            "use one-vs-rest logistic fits instead");
    const int K = static_cast<int>(classes_labels.size());
    std::vector<int> cls(survey.size());
    for (std::size_t i = 0; i < survey.size(); ++i)
        cls[i] = static_cast<int>(std::find(classes_labels.begin(), classes_labels.end(), survey.area()[i]) -
                                  classes_labels.begin());

    auto class_logp = [&](const glm::DesignMatrix& x) {
        const auto fit = glm::fit_ridge_multinomial(x, cls, K, std::nullopt, lambda);
        std::vector<Eigen::VectorXd> lp;
        for (int k = 0; k < K; ++k) lp.push_back(glm::predict_log_prob(fit, x, k));
        return lp;
    };
    const auto den = class_logp(designs.denominator);
    const auto num = designs.identical ? den : class_logp(designs.numerator);

    std::vector<ZetaResult> out;
    for (const auto& a : areas) {
        const auto j = static_cast<std::size_t>(std::find(classes_labels.begin(), classes_labels.end(), a) -
                                                classes_labels.begin());
        out.push_back(assemble(num[j], log_complement(num, j), den[j], designs.identical));
    }
    return out;
}

// zeta for the bootstrap and single-area paths, covering the cases where
// no fit is needed.
ZetaResult zeta_for_area(const SurveyDataset& survey, std::string_view area, const ZetaSpec& spec) {
    const auto n_area = count_in_area(survey, area);
    if (n_area == 0) return trivial_zeta(survey.size(), false);
    return estimate_zeta(survey, area, spec);
}

double quantile_type7(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace

const char* method_name(Method m) {
    switch (m) {
    case Method::Direct: return "direct";
    case Method::Synthetic: return "synthetic";
    case Method::SyntheticDecomposed: return "synthetic-decomposed";
    }
    return "unknown";
}

ZetaSpec EstimatorConfig::zeta_spec(const CovariateSchema& schema) const {
    ZetaSpec spec;
    if (xp_vars) {
        spec.xp_vars = *xp_vars;
    } else {
        for (const auto& v : schema.population_vars()) spec.xp_vars.push_back(v.name);
    }
    if (xs_vars) {
        spec.xs_vars = *xs_vars;
    } else {
        for (const auto& v : schema.survey_vars()) spec.xs_vars.push_back(v.name);
    }
    spec.interactions = interactions;
    spec.lambda = lambda;
    spec.membership = membership;
    return spec;
}

Interval normal_interval(double estimate, double se, double level) {
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("interval level must lie in (0, 1)");
    const boost::math::normal_distribution<double> normal;
    const double z = boost::math::quantile(normal, 0.5 + level / 2.0);
    return {level, estimate - z * se, estimate + z * se};
}

SamplingPropensity estimate_sampling_propensity(const SurveyDataset& survey, const PopulationTable& table) {
    const std::size_t P = table.n_profiles();
    std::vector<double> survey_count(P, 0.0);
    for (std::size_t i = 0; i < survey.size(); ++i) survey_count[survey.profile(i)] += 1.0;
    std::vector<double> pop_count(P, 0.0);
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t j = 0; j < table.n_areas(); ++j) pop_count[p] += table.count(p, j);

    const double n = static_cast<double>(survey.size());
    SamplingPropensity out;
    out.propensity.resize(survey.size());
    out.inverse.resize(survey.size());
    for (std::size_t i = 0; i < survey.size(); ++i) {
        const auto p = survey.profile(i);
        if (!(pop_count[p] > 0.0))
            throw DataError("respondent " + std::to_string(i) + " is in covariate cell " +
                            table.schema().profile_label(p) + ", which has no population mass");
        const double pop_share = pop_count[p] / table.total();
        const double survey_share = survey_count[p] / n;
        out.propensity[i] = survey_share / pop_share;
        out.inverse[i] = pop_share / survey_share;
    }
    return out;
}

std::vector<double> inverse_propensity(const SurveyDataset& survey, const PopulationTable& table) {
    if (survey.national_weight()) return *survey.national_weight();
    return estimate_sampling_propensity(survey, table).inverse;
}

double weighted_mean_se(std::span<const double> weights, std::span<const double> y) {
    if (weights.size() != y.size()) throw DataError("weights and outcomes differ in length");
    if (weights.size() < 2) throw NumericalError("standard error is undefined for a single observation");
    double total = 0.0, tau = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (weights[i] < 0.0) throw NumericalError("negative weight");
        total += weights[i];
        tau += weights[i] * y[i];
    }
    if (std::abs(total - 1.0) > 1e-9) throw NumericalError("weights must be normalized to sum to one");
    double v = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - tau;
        v += weights[i] * weights[i] * d * d;
    }
    return std::sqrt(v);
}

EstimateResult direct_estimate(const SurveyDataset& survey, std::string_view area, std::span<const double> inv_prop,
                               double interval_level) {
    if (inv_prop.size() != survey.size()) throw DataError("inverse propensities are not aligned with the survey");
    double total = 0.0;
    std::size_t n_area = 0;
    for (std::size_t i = 0; i < survey.size(); ++i) {
        if (survey.area()[i] != area) continue;
        if (!(inv_prop[i] > 0.0) || !std::isfinite(inv_prop[i]))
            throw NumericalError("inverse propensity must be positive and finite");
        total += inv_prop[i];
        ++n_area;
    }
    if (n_area == 0)
        throw DataError("area '" + std::string(area) +
                        "' has no respondents: the direct estimator is undefined there");

    std::vector<double> w(survey.size(), 0.0);
    for (std::size_t i = 0; i < survey.size(); ++i)
        if (survey.area()[i] == area) w[i] = inv_prop[i] / total;

    EstimateResult r;
    r.area = std::string(area);
    r.method = Method::Direct;
    r.n_area = n_area;
    double sumsq = 0.0;
    for (std::size_t i = 0; i < survey.size(); ++i) {
        r.estimate += w[i] * survey.outcome()[i];
        sumsq += w[i] * w[i];
    }
    r.ess = 1.0 / sumsq;
    if (n_area >= 2) {
        std::vector<double> wa, ya;
        for (std::size_t i = 0; i < survey.size(); ++i)
            if (survey.area()[i] == area) {
                wa.push_back(w[i]);
                ya.push_back(survey.outcome()[i]);
            }
        r.se = weighted_mean_se(wa, ya);
        r.interval = normal_interval(r.estimate, r.se, interval_level);
    } else {
        r.se = std::numeric_limits<double>::quiet_NaN();
        r.interval = {interval_level, r.se, r.se};
    }
    return r;
}

ZetaResult estimate_zeta(const SurveyDataset& survey, std::string_view area, const ZetaSpec& spec) {
    const auto n_area = count_in_area(survey, area);
    if (n_area == 0)
        throw DataError("area '" + std::string(area) + "' has no respondents; its membership model cannot be fitted");
    if (n_area == survey.size()) return trivial_zeta(survey.size(), true);
    const auto designs = membership_designs(survey, spec);
    if (spec.membership == MembershipModel::Multinomial) {
        const std::string label(area);
        return multinomial_zeta(survey, std::span<const std::string>(&label, 1), designs, spec.lambda).front();
    }
    return one_vs_rest(survey, area, designs, spec.lambda);
}

std::vector<ZetaResult> estimate_zeta_all(const SurveyDataset& survey, std::span<const std::string> areas,
                                          const ZetaSpec& spec, unsigned threads) {
    for (const auto& a : areas)
        if (count_in_area(survey, a) == 0)
            throw DataError("area '" + a + "' has no respondents; its membership model cannot be fitted");
    const auto observed = survey.observed_areas();
    if (observed.size() == 1) return std::vector<ZetaResult>(areas.size(), trivial_zeta(survey.size(), true));
    const auto designs = membership_designs(survey, spec);
    if (spec.membership == MembershipModel::Multinomial) return multinomial_zeta(survey, areas, designs, spec.lambda);
    std::vector<ZetaResult> out(areas.size());
    parallel_for(areas.size(), threads,
                 [&](std::size_t k) { out[k] = one_vs_rest(survey, areas[k], designs, spec.lambda); });
    return out;
}

AreaWeights synthetic_weights(const SurveyDataset& survey, const PopulationTable& table, std::string_view area,
                              std::span<const double> zeta, std::span<const double> inv_prop,
                              std::optional<double> trim_quantile) {
    const std::size_t n = survey.size();
    if (zeta.size() != n || inv_prop.size() != n) throw DataError("weight factors are not aligned with the survey");
    const auto j = table.area_index(area);
    if (!j) throw DataError("area '" + std::string(area) + "' is not in the population table");
    const auto& sp = survey.schema().population_vars();
    const auto& tp = table.schema().population_vars();
    if (sp.size() != tp.size() ||
        !std::equal(sp.begin(), sp.end(), tp.begin(),
                    [](const Variable& a, const Variable& b) { return a.name == b.name && a.levels == b.levels; }))
        throw DataError("survey and population tables declare different population covariates");
    const auto shares = population_area_shares(table);

    AreaWeights out;
    out.area = std::string(area);
    out.zeta.assign(zeta.begin(), zeta.end());
    out.inv_prop.assign(inv_prop.begin(), inv_prop.end());
    out.p_pop.resize(n);
    std::vector<double> raw(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto p = survey.profile(i);
        if (!shares.defined[p])
            throw DataError("respondent " + std::to_string(i) + " is in covariate cell " +
                            table.schema().profile_label(p) +
                            ", which has zero population mass in every area (population/survey mismatch)");
        if (!(zeta[i] > 0.0) || !std::isfinite(zeta[i])) throw NumericalError("zeta must be positive and finite");
        if (!(inv_prop[i] > 0.0) || !std::isfinite(inv_prop[i]))
            throw NumericalError("inverse propensity must be positive and finite");
        out.p_pop[i] = shares.p(p, *j);
        raw[i] = zeta[i] * out.p_pop[i] * inv_prop[i];
    }

    if (trim_quantile) {
        if (!(*trim_quantile > 0.0 && *trim_quantile <= 1.0)) throw ConfigError("trim quantile must lie in (0, 1]");
        std::vector<double> positive;
        for (double r : raw)
            if (r > 0.0) positive.push_back(r);
        if (!positive.empty()) {
            const double cap = quantile_type7(std::move(positive), *trim_quantile);
            out.trim_cap = cap;
            for (double& r : raw)
                if (r > cap) {
                    r = cap;
                    ++out.trimmed;
                }
        }
    }

    const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
    if (!(total > 0.0))
        throw NumericalError("area '" + std::string(area) +
                             "' is degenerate: no respondent has a covariate cell with population mass there");
    out.weight.resize(n);
    double sumsq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out.weight[i] = raw[i] / total;
        sumsq += out.weight[i] * out.weight[i];
        out.max_share = std::max(out.max_share, out.weight[i]);
    }
    out.ess = 1.0 / sumsq;
    return out;
}

namespace {

EstimateResult result_from_weights(const SurveyDataset& survey, const AreaWeights& w, double level) {
    EstimateResult r;
    r.area = w.area;
    r.method = Method::Synthetic;
    r.n_area = count_in_area(survey, w.area);
    for (std::size_t i = 0; i < survey.size(); ++i) r.estimate += w.weight[i] * survey.outcome()[i];
    r.ess = w.ess;
    r.se = survey.size() >= 2 ? weighted_mean_se(w.weight, survey.outcome()) : std::numeric_limits<double>::quiet_NaN();
    r.interval = normal_interval(r.estimate, r.se, level);
    return r;
}

// The decomposition re-expresses the same weights through the pooling
// odds, so it reuses the (possibly trimmed) raw weights' normalizer.
std::pair<double, double> split(const SurveyDataset& survey, const AreaWeights& w, const ZetaResult& zeta,
                                std::size_t& clipped) {
    const std::size_t n = survey.size();
    const auto& y = survey.outcome();
    double direct = 0.0, indirect = 0.0;
    if (zeta.trivial) {
        for (std::size_t i = 0; i < n; ++i) (survey.area()[i] == w.area ? direct : indirect) += w.weight[i] * y[i];
        return {direct, indirect};
    }
    double normalizer = 0.0;
    std::vector<double> raw(n);
    for (std::size_t i = 0; i < n; ++i) {
        raw[i] = w.zeta[i] * w.p_pop[i] * w.inv_prop[i];
        if (w.trim_cap) raw[i] = std::min(raw[i], *w.trim_cap);
        normalizer += raw[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (raw[i] == 0.0) continue;
        // Trimming rescales the respondent's whole contribution.
        const double trim = raw[i] / (w.zeta[i] * w.p_pop[i] * w.inv_prop[i]);
        const double base_log = std::log(w.p_pop[i] * w.inv_prop[i] * trim) - zeta.log_denominator[i];
        double p = zeta.numerator[i];
        double q = zeta.numerator_complement[i];
        if (survey.area()[i] != w.area && q == 0.0)
            throw NumericalError("respondent " + std::to_string(i) + " in covariate cell " +
                                 survey.schema().profile_label(survey.profile(i)) +
                                 " has fitted Pr(A != " + w.area +
                                 ") = 0: pooling odds overflow (overlap violation)");
        if (p < kClipLow || p > kClipHigh || q < kClipLow || q > kClipHigh) ++clipped;
        p = std::clamp(p, kClipLow, kClipHigh);
        q = std::clamp(q, kClipLow, kClipHigh);
        const double base = std::exp(base_log);
        if (survey.area()[i] == w.area)
            direct += p * base * y[i];
        else
            indirect += (p / q) * q * base * y[i];
    }
    if (!std::isfinite(direct) || !std::isfinite(indirect))
        throw NumericalError("decomposition overflowed for area '" + w.area + "'");
    return {direct / normalizer, indirect / normalizer};
}

EstimateResult estimate_one(const SurveyDataset& survey, const PopulationTable& table, std::string_view area,
                            const ZetaResult& zeta, std::span<const double> inv, const EstimatorConfig& config,
                            bool decompose, AreaWeights* keep) {
    auto weights = synthetic_weights(survey, table, area, zeta.zeta, inv, config.trim_quantile);
    auto r = result_from_weights(survey, weights, config.interval_level);
    if (decompose) {
        r.method = Method::SyntheticDecomposed;
        r.components = split(survey, weights, zeta, r.clipped);
    }
    if (keep) *keep = std::move(weights);
    return r;
}

} // namespace

EstimateResult synthetic_estimate(const SurveyDataset& survey, const PopulationTable& table, std::string_view area,
                                  const EstimatorConfig& config) {
    const auto inv = inverse_propensity(survey, table);
    const auto zeta = zeta_for_area(survey, area, config.zeta_spec(survey.schema()));
    auto r = estimate_one(survey, table, area, zeta, inv, config, false, nullptr);
    if (config.bootstrap_replicates > 0) {
        const auto j = table.area_index(area);
        r.se = bootstrap_se(survey, table, area, config, j.value_or(0));
        r.interval = normal_interval(r.estimate, r.se, config.interval_level);
    }
    return r;
}

EstimateResult decompose_from(const SurveyDataset& survey, const PopulationTable& table, std::string_view area,
                              const ZetaResult& zeta, std::span<const double> inv_prop,
                              const EstimatorConfig& config) {
    return estimate_one(survey, table, area, zeta, inv_prop, config, true, nullptr);
}

EstimateResult decompose_estimate(const SurveyDataset& survey, const PopulationTable& table, std::string_view area,
                                  const EstimatorConfig& config) {
    const auto inv = inverse_propensity(survey, table);
    const auto zeta = zeta_for_area(survey, area, config.zeta_spec(survey.schema()));
    auto r = decompose_from(survey, table, area, zeta, inv, config);
    if (config.bootstrap_replicates > 0) {
        const auto j = table.area_index(area);
        r.se = bootstrap_se(survey, table, area, config, j.value_or(0));
        r.interval = normal_interval(r.estimate, r.se, config.interval_level);
    }
    return r;
}

double bootstrap_se(const SurveyDataset& survey, const PopulationTable& table, std::string_view area,
                    const EstimatorConfig& config, std::size_t area_stream) {
    const auto spec = config.zeta_spec(survey.schema());
    const std::size_t n = survey.size();
    std::vector<double> draws;
    std::vector<std::size_t> rows(n);
    for (int b = 0; b < config.bootstrap_replicates; ++b) {
        std::mt19937_64 rng(derive_seed(config.seed, {0xB007, area_stream, static_cast<std::uint64_t>(b)}));
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (auto& r : rows) r = pick(rng);
        try {
            const auto sample = survey.select(rows);
            const auto inv = inverse_propensity(sample, table);
            const auto zeta = zeta_for_area(sample, area, spec);
            const auto w = synthetic_weights(sample, table, area, zeta.zeta, inv, config.trim_quantile);
            double est = 0.0;
            for (std::size_t i = 0; i < n; ++i) est += w.weight[i] * sample.outcome()[i];
            draws.push_back(est);
        } catch (const Error&) {
            // Degenerate resample (e.g. an empty multinomial class); skipped.
        }
    }
    if (draws.size() < 2) throw NumericalError("too few usable bootstrap replicates for area '" + std::string(area) + "'");
    const double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(draws.size());
    double ss = 0.0;
    for (double d : draws) ss += (d - mean) * (d - mean);
    return std::sqrt(ss / static_cast<double>(draws.size() - 1));
}

std::vector<AreaEstimate> estimate_all_areas(const SurveyDataset& survey, const PopulationTable& table,
                                             const EstimatorConfig& config) {
    align_areas(survey, table);
    const auto inv = inverse_propensity(survey, table);
    const auto spec = config.zeta_spec(survey.schema());
    const std::size_t J = table.n_areas();

    std::vector<AreaEstimate> out(J);
    std::vector<std::size_t> n_area(J, 0);
    for (const auto& a : survey.area()) ++n_area[*table.area_index(a)];

    // Step 2 for every area with respondents; areas without any fall back to
    // zeta = 1 (pooling on X^P alone).
    std::vector<ZetaResult> zetas(J);
    std::vector<std::string> fitted;
    for (std::size_t j = 0; j < J; ++j) {
        out[j].area = table.areas()[j];
        if (n_area[j] == 0) {
            zetas[j] = trivial_zeta(survey.size(), false);
            out[j].warnings.push_back("no survey respondents in area; zeta set to 1 (population-covariate pooling only)");
        } else {
            fitted.push_back(table.areas()[j]);
        }
    }
    try {
        auto fits = estimate_zeta_all(survey, fitted, spec, config.threads);
        for (std::size_t k = 0; k < fitted.size(); ++k) zetas[*table.area_index(fitted[k])] = std::move(fits[k]);
    } catch (const Error&) {
        if (config.membership == MembershipModel::Multinomial) throw;
        // One-vs-rest failed jointly; retry per area so one bad area does
        // not take the others down.
        for (const auto& a : fitted) {
            const auto j = *table.area_index(a);
            try {
                zetas[j] = estimate_zeta(survey, a, spec);
            } catch (const Error& inner) {
                out[j].error = inner.what();
                out[j].error_category = inner.category();
            }
        }
    }

    parallel_for(J, config.threads, [&](std::size_t j) {
        auto& slot = out[j];
        if (slot.error) return;
        try {
            AreaWeights weights;
            auto r = estimate_one(survey, table, slot.area, zetas[j], inv, config, true,
                                  config.keep_weights ? &weights : nullptr);
            if (config.bootstrap_replicates > 0) {
                r.se = bootstrap_se(survey, table, slot.area, config, j);
                r.interval = normal_interval(r.estimate, r.se, config.interval_level);
            }
            if (r.clipped > 0)
                slot.warnings.push_back(std::to_string(r.clipped) + " membership probabilities clipped");
            slot.synthetic = std::move(r);
            if (config.keep_weights) slot.weights = std::move(weights);
            if (config.with_direct && n_area[j] > 0)
                slot.direct = direct_estimate(survey, slot.area, inv, config.interval_level);
        } catch (const Error& e) {
            slot.error = e.what();
            slot.error_category = e.category();
        }
    });
    return out;
}

} // namespace sae
