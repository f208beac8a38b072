#pragma once

#include "sae/estimators.hpp"
#include "sae/metrics.hpp"
#include "sae/oracle.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace sae::oracle {

struct SimulationSpec {
    PopulationSpec population;
    std::vector<std::size_t> sample_sizes{2000};
    std::size_t replicates = 1;
    /// Give the estimator the true national weights recorded by draw_sample;
    /// otherwise they are dropped and Step 1 is estimated from the table.
    bool use_national_weights = true;
    EstimatorConfig estimator;
    /// Sampling seed. The population has its own seed in `population`.
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

struct ReplicateResult {
    std::size_t sample_size = 0;
    std::size_t replicate = 0;
    std::vector<std::size_t> n_area;
    /// NaN where the area failed (synthetic) or has no respondents (direct).
    std::vector<double> synthetic;
    std::vector<double> synthetic_se;
    std::vector<double> direct;
    std::vector<double> direct_se;
    std::optional<MetricReport> synthetic_metrics;
    std::optional<MetricReport> direct_metrics;
};

struct SimulationResult {
    DiscretePopulation population;
    std::vector<double> truth;
    std::vector<double> identification;
    std::vector<Decomposition> decomposition;
    /// Ordered by sample size, then replicate.
    std::vector<ReplicateResult> runs;
};

/// Seed of replicate r at sample size n: derive_seed(seed, {n, r}).
std::uint64_t replicate_seed(std::uint64_t seed, std::size_t sample_size, std::size_t replicate);

ReplicateResult run_replicate(const DiscretePopulation& pop, const PopulationTable& table, std::size_t sample_size,
                              std::size_t replicate, const SimulationSpec& spec, const std::vector<double>& truth);

/// Generates the population, evaluates the exact identities, then draws and
/// estimates every (sample size, replicate) pair. Replicates run in
/// parallel; results do not depend on the thread count.
SimulationResult run_simulation(const SimulationSpec& spec);

/// Median of the finite entries; NaN when there are none.
double median(std::vector<double> values);

} // namespace sae::oracle
