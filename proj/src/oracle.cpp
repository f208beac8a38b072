#include "sae/oracle.hpp"

#include "sae/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sae::oracle {

namespace {

std::size_t product(const std::vector<std::size_t>& levels, const char* what) {
    std::size_t n = 1;
    for (auto l : levels) {
        if (l == 0) throw ConfigError(std::string(what) + " variable with zero levels");
        if (n > kMaxCells / l) throw ConfigError("population has more than 1e6 cells");
        n *= l;
    }
    return n;
}

std::vector<Variable> make_vars(const std::vector<std::size_t>& levels, const char* prefix) {
    std::vector<Variable> out;
    for (std::size_t v = 0; v < levels.size(); ++v) {
        Variable var{prefix + std::to_string(v + 1), {}};
        for (std::size_t l = 0; l < levels[v]; ++l) var.levels.push_back(std::to_string(l));
        out.push_back(std::move(var));
    }
    return out;
}

// Mixed radix digits of `index`, last digit fastest.
std::vector<Level> digits(std::size_t index, const std::vector<std::size_t>& levels) {
    std::vector<Level> out(levels.size());
    for (std::size_t v = levels.size(); v-- > 0;) {
        out[v] = static_cast<Level>(index % levels[v]);
        index /= levels[v];
    }
    return out;
}

// Marginal masses of the population needed by both evaluators.
struct Margins {
    double total = 0.0;
    std::vector<double> area_mass;      // J
    std::vector<double> xp_mass;        // P
    std::vector<double> xp_area_mass;   // P x J
    std::vector<double> xp_sampled;     // P: sum_{s,a} count * inclusion
    std::vector<double> xp_area_sampled;  // P x J
    std::vector<double> cell_sampled;   // P x S: sum_a count * inclusion
};

Margins margins(const DiscretePopulation& pop) {
    const auto P = pop.n_xp(), S = pop.n_xs(), J = pop.n_areas();
    Margins m;
    m.area_mass.assign(J, 0.0);
    m.xp_mass.assign(P, 0.0);
    m.xp_area_mass.assign(P * J, 0.0);
    m.xp_sampled.assign(P, 0.0);
    m.xp_area_sampled.assign(P * J, 0.0);
    m.cell_sampled.assign(P * S, 0.0);
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < J; ++a) {
                const double c = pop.count(p, s, a);
                const double cs = c * pop.inclusion(p, a);
                m.total += c;
                m.area_mass[a] += c;
                m.xp_mass[p] += c;
                m.xp_area_mass[p * J + a] += c;
                m.xp_sampled[p] += cs;
                m.xp_area_sampled[p * J + a] += cs;
                m.cell_sampled[p * S + s] += cs;
            }
    return m;
}

void check_area(const DiscretePopulation& pop, std::size_t area, const Margins& m) {
    if (area >= pop.n_areas()) throw ConfigError("area index out of range");
    if (!(m.area_mass[area] > 0.0)) throw DataError("area '" + pop.area_label(area) + "' is empty");
}

} // namespace

DiscretePopulation::DiscretePopulation(std::vector<std::size_t> xp_levels, std::vector<std::size_t> xs_levels,
                                       std::size_t n_areas, std::vector<double> counts, std::vector<double> outcome,
                                       std::vector<double> inclusion, std::vector<double> gamma_shift)
    : xp_levels_(std::move(xp_levels)), xs_levels_(std::move(xs_levels)), n_areas_(n_areas),
      counts_(std::move(counts)), outcome_(std::move(outcome)), inclusion_(std::move(inclusion)),
      gamma_shift_(std::move(gamma_shift)) {
    if (n_areas_ == 0) throw ConfigError("population needs at least one area");
    n_xp_ = product(xp_levels_, "population");
    n_xs_ = product(xs_levels_, "survey");
    if (n_xp_ > kMaxCells / n_xs_ || n_xp_ * n_xs_ > kMaxCells / n_areas_)
        throw ConfigError("population has more than 1e6 cells");
    if (counts_.size() != n_xp_ * n_xs_ * n_areas_) throw ConfigError("count table has the wrong size");
    if (outcome_.size() != n_xp_ * n_xs_) throw ConfigError("outcome table has the wrong size");
    if (inclusion_.size() != n_xp_ * n_areas_) throw ConfigError("inclusion table has the wrong size");
    if (!gamma_shift_.empty() && gamma_shift_.size() != n_areas_)
        throw ConfigError("area shift needs one entry per area");
    double total = 0.0;
    for (double c : counts_) {
        if (!(c >= 0.0) || !std::isfinite(c)) throw ConfigError("cell counts must be finite and nonnegative");
        total += c;
    }
    if (!(total > 0.0)) throw ConfigError("population is empty");
    for (double mu : outcome_)
        if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("outcome means must lie in [0, 1]");
    for (double pi : inclusion_)
        if (!(pi > 0.0 && pi <= 1.0)) throw ConfigError("inclusion probabilities must lie in (0, 1]");
    for (double g : gamma_shift_)
        if (!std::isfinite(g)) throw ConfigError("area shift must be finite");
}

double DiscretePopulation::outcome(std::size_t p, std::size_t s, std::size_t a) const {
    return std::clamp(base_outcome(p, s) + shift(a), 0.0, 1.0);
}

CovariateSchema DiscretePopulation::schema() const {
    return CovariateSchema(make_vars(xp_levels_, "p"), make_vars(xs_levels_, "s"), "y", "area", "weight");
}

PopulationTable DiscretePopulation::population_table() const {
    std::vector<std::string> areas;
    for (std::size_t a = 0; a < n_areas_; ++a) areas.push_back(area_label(a));
    std::vector<double> counts(n_xp_ * n_areas_, 0.0);
    for (std::size_t p = 0; p < n_xp_; ++p)
        for (std::size_t s = 0; s < n_xs_; ++s)
            for (std::size_t a = 0; a < n_areas_; ++a) counts[p * n_areas_ + a] += count(p, s, a);
    return PopulationTable(schema(), std::move(areas), std::move(counts));
}

DiscretePopulation generate_population(const PopulationSpec& spec) {
    const std::size_t P = product(spec.xp_levels, "population");
    const std::size_t S = product(spec.xs_levels, "survey");
    const std::size_t J = spec.n_areas;
    if (J == 0) throw ConfigError("population needs at least one area");
    if (P > kMaxCells / S || P * S > kMaxCells / J) throw ConfigError("population has more than 1e6 cells");
    if (!(spec.count_low >= 1.0 && spec.count_high >= spec.count_low))
        throw ConfigError("count range must satisfy 1 <= low <= high");
    if (!(spec.outcome_low >= 0.0 && spec.outcome_high <= 1.0 && spec.outcome_low <= spec.outcome_high))
        throw ConfigError("outcome range must lie in [0, 1]");
    if (!(spec.inclusion_low > 0.0 && spec.inclusion_high <= 1.0 && spec.inclusion_low <= spec.inclusion_high))
        throw ConfigError("inclusion range must lie in (0, 1]");

    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<long long> count_dist(static_cast<long long>(std::ceil(spec.count_low)),
                                                        static_cast<long long>(std::floor(spec.count_high)));
    std::uniform_real_distribution<double> outcome_dist(spec.outcome_low, spec.outcome_high);
    std::uniform_real_distribution<double> inclusion_dist(spec.inclusion_low, spec.inclusion_high);

    std::vector<double> counts(P * S * J);
    for (auto& c : counts) c = static_cast<double>(count_dist(rng));
    std::vector<double> outcome(P * S);
    for (auto& mu : outcome) mu = outcome_dist(rng);
    std::vector<double> inclusion(P * J);
    for (auto& pi : inclusion) pi = inclusion_dist(rng);
    return DiscretePopulation(spec.xp_levels, spec.xs_levels, J, std::move(counts), std::move(outcome),
                              std::move(inclusion), spec.gamma_shift);
}

DiscretePopulation with_shift(const DiscretePopulation& pop, std::vector<double> gamma_shift) {
    std::vector<double> outcome(pop.n_xp() * pop.n_xs());
    for (std::size_t p = 0; p < pop.n_xp(); ++p)
        for (std::size_t s = 0; s < pop.n_xs(); ++s) outcome[p * pop.n_xs() + s] = pop.base_outcome(p, s);
    std::vector<double> inclusion(pop.n_xp() * pop.n_areas());
    for (std::size_t p = 0; p < pop.n_xp(); ++p)
        for (std::size_t a = 0; a < pop.n_areas(); ++a) inclusion[p * pop.n_areas() + a] = pop.inclusion(p, a);
    return DiscretePopulation(pop.xp_levels(), pop.xs_levels(), pop.n_areas(), pop.counts(), std::move(outcome),
                              std::move(inclusion), std::move(gamma_shift));
}

std::vector<double> true_area_means(const DiscretePopulation& pop) {
    const auto J = pop.n_areas();
    std::vector<double> num(J, 0.0), den(J, 0.0);
    for (std::size_t p = 0; p < pop.n_xp(); ++p)
        for (std::size_t s = 0; s < pop.n_xs(); ++s)
            for (std::size_t a = 0; a < J; ++a) {
                num[a] += pop.count(p, s, a) * pop.outcome(p, s, a);
                den[a] += pop.count(p, s, a);
            }
    for (std::size_t a = 0; a < J; ++a) {
        if (!(den[a] > 0.0)) throw DataError("area '" + pop.area_label(a) + "' is empty");
        num[a] /= den[a];
    }
    return num;
}

double evaluate_identification(const DiscretePopulation& pop, std::size_t area) {
    const auto m = margins(pop);
    check_area(pop, area, m);
    const auto P = pop.n_xp(), S = pop.n_xs(), J = pop.n_areas();
    const double pr_area = m.area_mass[area] / m.total;

    double value = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
        if (m.xp_mass[p] == 0.0) continue;
        const double pr_area_given_xp = m.xp_area_mass[p * J + area] / m.xp_mass[p];
        const double pr_sampled_given_xp = m.xp_sampled[p] / m.xp_mass[p];
        const double pr_area_given_xp_sampled = m.xp_area_sampled[p * J + area] / m.xp_sampled[p];
        if (pr_area_given_xp > 0.0 && pr_area_given_xp_sampled == 0.0)
            throw DataError("overlap failure: profile " + std::to_string(p) + " has population mass in area '" +
                            pop.area_label(area) + "' but no sampled mass there");
        if (pr_area_given_xp == 0.0) continue;
        for (std::size_t s = 0; s < S; ++s) {
            const double sampled = m.cell_sampled[p * S + s];
            if (sampled == 0.0) continue;
            const double pr_area_given_cell_sampled = pop.count(p, s, area) * pop.inclusion(p, area) / sampled;
            const double factor = pr_area_given_cell_sampled / pr_area_given_xp_sampled * pr_area_given_xp /
                                  pr_sampled_given_xp / pr_area;
            for (std::size_t a = 0; a < J; ++a) {
                const double mass = pop.count(p, s, a) / m.total * pop.inclusion(p, a);
                value += mass * factor * pop.outcome(p, s, a);
            }
        }
    }
    return value;
}

std::vector<double> evaluate_identification(const DiscretePopulation& pop) {
    std::vector<double> out(pop.n_areas());
    for (std::size_t a = 0; a < out.size(); ++a) out[a] = evaluate_identification(pop, a);
    return out;
}

Decomposition evaluate_decomposition(const DiscretePopulation& pop, std::size_t area) {
    const auto m = margins(pop);
    check_area(pop, area, m);
    const auto P = pop.n_xp(), S = pop.n_xs(), J = pop.n_areas();
    const double pr_area = m.area_mass[area] / m.total;

    Decomposition d;
    for (std::size_t p = 0; p < P; ++p) {
        const double pi_j = pop.inclusion(p, area);
        for (std::size_t s = 0; s < S; ++s) {
            const double sampled = m.cell_sampled[p * S + s];
            if (sampled == 0.0) continue;
            const double own = pop.count(p, s, area) * pop.inclusion(p, area);
            const double share = own / sampled;  // Pr(A = j | X, S = 1)
            // own-area term: S_j / Pr(A=j) * Y / pi_j(X) * p_j(X)
            d.direct += own / m.total / pr_area * pop.outcome(p, s, area) / pi_j * share;
            if (share >= 1.0) continue;
            // other areas: S_{-j} / Pr(A=j) * p_j / (1 - p_j) * Y / pi_j(X) * (1 - p_j)
            const double odds = share / (1.0 - share);
            for (std::size_t a = 0; a < J; ++a) {
                if (a == area) continue;
                const double mass = pop.count(p, s, a) * pop.inclusion(p, a) / m.total;
                d.indirect += mass / pr_area * odds * pop.outcome(p, s, a) / pi_j * (1.0 - share);
            }
        }
    }
    return d;
}

std::vector<Decomposition> evaluate_decomposition(const DiscretePopulation& pop) {
    std::vector<Decomposition> out(pop.n_areas());
    for (std::size_t a = 0; a < out.size(); ++a) out[a] = evaluate_decomposition(pop, a);
    return out;
}

FiniteLaw random_finite_law(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> size_dist(2, 4);
    std::uniform_real_distribution<double> value_dist(-3.0, 3.0);
    std::uniform_real_distribution<double> mass_dist(0.05, 1.0);
    FiniteLaw law;
    for (auto* values : {&law.x_values, &law.y_values, &law.z_values}) {
        values->resize(size_dist(rng));
        for (auto& v : *values) v = value_dist(rng);
    }
    law.prob.resize(law.x_values.size() * law.y_values.size() * law.z_values.size() * 2);
    for (auto& p : law.prob) p = mass_dist(rng);
    const double total = std::accumulate(law.prob.begin(), law.prob.end(), 0.0);
    for (auto& p : law.prob) p /= total;
    return law;
}

LemmaCheck lemma_property_check(const FiniteLaw& law, double tolerance) {
    const auto nx = law.x_values.size(), ny = law.y_values.size(), nz = law.z_values.size();

    // E(X | Z = z) and E(Y | Z = z)
    std::vector<double> z_mass(nz, 0.0), ex_z(nz, 0.0), ey_z(nz, 0.0);
    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t y = 0; y < ny; ++y)
            for (std::size_t z = 0; z < nz; ++z)
                for (std::size_t d = 0; d < 2; ++d) {
                    const double p = law.p(x, y, z, d);
                    z_mass[z] += p;
                    ex_z[z] += p * law.x_values[x];
                    ey_z[z] += p * law.y_values[y];
                }
    for (std::size_t z = 0; z < nz; ++z) {
        if (!(z_mass[z] > 0.0)) continue;
        ex_z[z] /= z_mass[z];
        ey_z[z] /= z_mass[z];
    }

    double lhs = 0.0, rhs = 0.0;
    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t y = 0; y < ny; ++y)
            for (std::size_t z = 0; z < nz; ++z)
                for (std::size_t d = 0; d < 2; ++d) {
                    const double p = law.p(x, y, z, d);
                    lhs += p * ex_z[z] * law.y_values[y];
                    rhs += p * law.x_values[x] * ey_z[z];
                }

    LemmaCheck out;
    out.error_a = std::abs(lhs - rhs);

    for (std::size_t x = 0; x < nx; ++x) {
        double mass = 0.0, mass_d = 0.0, y_d = 0.0;
        for (std::size_t y = 0; y < ny; ++y)
            for (std::size_t z = 0; z < nz; ++z) {
                mass += law.p(x, y, z, 0) + law.p(x, y, z, 1);
                mass_d += law.p(x, y, z, 1);
                y_d += law.p(x, y, z, 1) * law.y_values[y];
            }
        if (!(mass_d > 0.0)) continue;
        const double conditional = y_d / mass_d;
        const double pr_d = mass_d / mass;
        double weighted = 0.0;
        for (std::size_t y = 0; y < ny; ++y)
            for (std::size_t z = 0; z < nz; ++z) weighted += law.p(x, y, z, 1) * law.y_values[y] / pr_d;
        weighted /= mass;
        out.error_b = std::max(out.error_b, std::abs(conditional - weighted));
    }
    out.passed = out.error_a <= tolerance && out.error_b <= tolerance;
    return out;
}

LemmaCheck lemma_property_check(std::uint64_t seed, double tolerance) {
    return lemma_property_check(random_finite_law(seed), tolerance);
}

Sample draw_sample(const DiscretePopulation& pop, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ConfigError("sample size must be positive");
    const auto P = pop.n_xp(), S = pop.n_xs(), J = pop.n_areas();
    const auto m = margins(pop);

    std::vector<double> cdf(P * S * J);
    double running = 0.0;
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < J; ++a) {
                running += pop.count(p, s, a) * pop.inclusion(p, a);
                cdf[(p * S + s) * J + a] = running;
            }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto nvp = pop.xp_levels().size(), nvs = pop.xs_levels().size();
    std::vector<double> y(n), weight(n), inclusion(n);
    std::vector<std::string> area(n);
    std::vector<Level> xp(n * nvp), xs(n * nvs);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = unit(rng) * running;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        if (it == cdf.end()) --it;
        std::size_t cell = static_cast<std::size_t>(it - cdf.begin());
        const std::size_t a = cell % J;
        const std::size_t s = (cell / J) % S;
        const std::size_t p = cell / (J * S);
        y[i] = unit(rng) < pop.outcome(p, s, a) ? 1.0 : 0.0;
        area[i] = pop.area_label(a);
        inclusion[i] = pop.inclusion(p, a);
        weight[i] = m.xp_mass[p] / m.xp_sampled[p];
        const auto dp = digits(p, pop.xp_levels());
        const auto ds = digits(s, pop.xs_levels());
        std::copy(dp.begin(), dp.end(), xp.begin() + static_cast<std::ptrdiff_t>(i * nvp));
        std::copy(ds.begin(), ds.end(), xs.begin() + static_cast<std::ptrdiff_t>(i * nvs));
    }
    return Sample{SurveyDataset(pop.schema(), std::move(y), std::move(area), std::move(xp), std::move(xs),
                                std::move(weight)),
                  std::move(inclusion)};
}

} // namespace sae::oracle
