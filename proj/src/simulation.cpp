#include "sae/simulation.hpp"

#include "sae/error.hpp"
#include "sae/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sae::oracle {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::optional<MetricReport> metrics_where_finite(const std::vector<double>& est, const std::vector<double>& truth) {
    std::vector<double> e, t;
    for (std::size_t j = 0; j < est.size(); ++j)
        if (std::isfinite(est[j])) {
            e.push_back(est[j]);
            t.push_back(truth[j]);
        }
    if (e.size() < 2) return std::nullopt;
    return fit_metrics(e, t);
}

} // namespace

std::uint64_t replicate_seed(std::uint64_t seed, std::size_t sample_size, std::size_t replicate) {
    return derive_seed(seed, {sample_size, replicate});
}

ReplicateResult run_replicate(const DiscretePopulation& pop, const PopulationTable& table, std::size_t sample_size,
                              std::size_t replicate, const SimulationSpec& spec, const std::vector<double>& truth) {
    auto sample = draw_sample(pop, sample_size, replicate_seed(spec.seed, sample_size, replicate));
    const auto survey =
        spec.use_national_weights ? sample.survey : sample.survey.with_national_weight(std::nullopt);

    auto config = spec.estimator;
    config.threads = 1;
    config.keep_weights = false;
    config.with_direct = true;
    // bootstrap streams differ per replicate
    config.seed = derive_seed(spec.estimator.seed, {sample_size, replicate});
    const auto areas = estimate_all_areas(survey, table, config);

    const auto J = pop.n_areas();
    ReplicateResult r;
    r.sample_size = sample_size;
    r.replicate = replicate;
    r.n_area.assign(J, 0);
    r.synthetic.assign(J, kNaN);
    r.synthetic_se.assign(J, kNaN);
    r.direct.assign(J, kNaN);
    r.direct_se.assign(J, kNaN);
    for (const auto& a : survey.area()) ++r.n_area[*table.area_index(a)];
    for (std::size_t j = 0; j < J; ++j) {
        if (areas[j].synthetic) {
            r.synthetic[j] = areas[j].synthetic->estimate;
            r.synthetic_se[j] = areas[j].synthetic->se;
        }
        if (areas[j].direct) {
            r.direct[j] = areas[j].direct->estimate;
            r.direct_se[j] = areas[j].direct->se;
        }
    }
    r.synthetic_metrics = metrics_where_finite(r.synthetic, truth);
    r.direct_metrics = metrics_where_finite(r.direct, truth);
    return r;
}

SimulationResult run_simulation(const SimulationSpec& spec) {
    if (spec.sample_sizes.empty()) throw ConfigError("simulation needs at least one sample size");
    if (spec.replicates == 0) throw ConfigError("simulation needs at least one replicate");
    auto pop = generate_population(spec.population);
    const auto table = pop.population_table();
    SimulationResult out{pop, true_area_means(pop), evaluate_identification(pop), evaluate_decomposition(pop), {}};

    const std::size_t R = spec.replicates;
    out.runs.resize(spec.sample_sizes.size() * R);
    parallel_for(out.runs.size(), spec.threads, [&](std::size_t k) {
        out.runs[k] = run_replicate(pop, table, spec.sample_sizes[k / R], k % R, spec, out.truth);
    });
    return out;
}

double median(std::vector<double> values) {
    values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return !std::isfinite(v); }),
                 values.end());
    if (values.empty()) return kNaN;
    const auto mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double hi = values[mid];
    if (values.size() % 2 == 1) return hi;
    const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

} // namespace sae::oracle
