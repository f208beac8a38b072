#pragma once

#include "sae/data_model.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace sae::oracle {

/// Dimensions and laws of a generated population. Every cell count, outcome
/// mean and inclusion probability is drawn uniformly from its range.
struct PopulationSpec {
    std::vector<std::size_t> xp_levels{2, 2};
    std::vector<std::size_t> xs_levels{2};
    std::size_t n_areas = 3;
    double count_low = 1.0;
    double count_high = 100.0;
    double outcome_low = 0.1;
    double outcome_high = 0.9;
    double inclusion_low = 0.05;
    double inclusion_high = 0.5;
    /// Additive outcome shift per area (empty = none). Nonzero entries make
    /// the outcome depend on the area given covariates.
    std::vector<double> gamma_shift;
    std::uint64_t seed = 1;
};

inline constexpr std::size_t kMaxCells = 1'000'000;

/// A finite population over (X^P profile, X^S profile, area) cells.
///
/// The outcome mean depends on (X^P, X^S) and, only through the explicit
/// shift, on the area; inclusion depends on (X^P, area) only. With zero
/// shift both ignorability conditions hold by construction.
class DiscretePopulation {
public:
    /// `counts` is P x S x J (area fastest), `outcome` P x S, `inclusion` P x J.
    DiscretePopulation(std::vector<std::size_t> xp_levels, std::vector<std::size_t> xs_levels, std::size_t n_areas,
                       std::vector<double> counts, std::vector<double> outcome, std::vector<double> inclusion,
                       std::vector<double> gamma_shift = {});

    std::size_t n_xp() const { return n_xp_; }
    std::size_t n_xs() const { return n_xs_; }
    std::size_t n_areas() const { return n_areas_; }
    const std::vector<std::size_t>& xp_levels() const { return xp_levels_; }
    const std::vector<std::size_t>& xs_levels() const { return xs_levels_; }

    double count(std::size_t p, std::size_t s, std::size_t a) const { return counts_[(p * n_xs_ + s) * n_areas_ + a]; }
    double base_outcome(std::size_t p, std::size_t s) const { return outcome_[p * n_xs_ + s]; }
    /// E[Y | X^P = p, X^S = s, A = a] including any area shift, clamped to [0, 1].
    double outcome(std::size_t p, std::size_t s, std::size_t a) const;
    double inclusion(std::size_t p, std::size_t a) const { return inclusion_[p * n_areas_ + a]; }
    double shift(std::size_t a) const { return gamma_shift_.empty() ? 0.0 : gamma_shift_[a]; }

    const std::vector<double>& counts() const { return counts_; }

    /// Variables p1.., s1.. with levels "0", "1", ...; areas "a1".."aJ".
    CovariateSchema schema() const;
    std::string area_label(std::size_t a) const { return "a" + std::to_string(a + 1); }
    /// Counts summed over X^S.
    PopulationTable population_table() const;

private:
    std::vector<std::size_t> xp_levels_, xs_levels_;
    std::size_t n_xp_ = 1, n_xs_ = 1, n_areas_ = 0;
    std::vector<double> counts_, outcome_, inclusion_, gamma_shift_;
};

DiscretePopulation generate_population(const PopulationSpec& spec);

/// Same population with a different area shift vector.
DiscretePopulation with_shift(const DiscretePopulation& pop, std::vector<double> gamma_shift);

/// tau_j = E[Y | A = j] by enumeration.
std::vector<double> true_area_means(const DiscretePopulation& pop);

/// Exact value of the pooled identification formula for area j:
///   E{ 1{S=1}/Pr(A=j) * Pr(A=j|X^P,X^S,S=1)/Pr(A=j|X^P,S=1) * Pr(A=j|X^P)/Pr(S=1|X^P) * Y }.
double evaluate_identification(const DiscretePopulation& pop, std::size_t area);
std::vector<double> evaluate_identification(const DiscretePopulation& pop);

/// The two expectations of the alternative formula: the area's own sampled
/// units, and the units pooled from other areas through the membership odds.
struct Decomposition {
    double direct = 0.0;
    double indirect = 0.0;
};

Decomposition evaluate_decomposition(const DiscretePopulation& pop, std::size_t area);
std::vector<Decomposition> evaluate_decomposition(const DiscretePopulation& pop);

/// Joint law of (X, Y, Z, D) on a finite grid; D is binary.
struct FiniteLaw {
    std::vector<double> x_values, y_values, z_values;
    /// Probability of (x, y, z, d), index ((x * |Y| + y) * |Z| + z) * 2 + d.
    std::vector<double> prob;

    double p(std::size_t x, std::size_t y, std::size_t z, std::size_t d) const {
        return prob[((x * y_values.size() + y) * z_values.size() + z) * 2 + d];
    }
};

/// Random law with 2-4 support points per variable and every cell positive.
FiniteLaw random_finite_law(std::uint64_t seed);

struct LemmaCheck {
    /// |E[E(X|Z) Y] - E[X E(Y|Z)]|
    double error_a = 0.0;
    /// max over x of |E[Y | X=x, D=1] - E[D Y / Pr(D=1|X) | X=x]|
    double error_b = 0.0;
    bool passed = false;
};

LemmaCheck lemma_property_check(const FiniteLaw& law, double tolerance = 1e-12);
LemmaCheck lemma_property_check(std::uint64_t seed, double tolerance = 1e-12);

struct Sample {
    SurveyDataset survey;
    /// Pr(S = 1 | X^P, A) of each respondent's cell.
    std::vector<double> inclusion;
};

/// n independent draws (with replacement) of a cell with probability
/// proportional to count * inclusion, then Y ~ Bernoulli(outcome mean).
/// The national weight stored per respondent is 1 / Pr(S = 1 | X^P).
Sample draw_sample(const DiscretePopulation& pop, std::size_t n, std::uint64_t seed);

} // namespace sae::oracle
