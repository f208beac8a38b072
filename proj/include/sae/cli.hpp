#pragma once

#include "sae/data_model.hpp"
#include "sae/diagnostics.hpp"
#include "sae/error.hpp"
#include "sae/estimators.hpp"
#include "sae/simulation.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sae::cli {

struct VariableDecl {
    std::string name;
    std::vector<std::string> levels;
    Role role = Role::Population;
};

/// Everything a run needs. Loaded from YAML; command-line flags override
/// individual keys afterwards.
struct RunConfig {
    std::uint64_t seed = 1;
    /// 0 = every available core.
    unsigned threads = 0;

    std::optional<std::string> survey_path;
    std::optional<std::string> population_path;
    std::string out_dir = "out";

    std::vector<VariableDecl> variables;
    std::string outcome_name = "outcome";
    std::string area_name = "area";
    std::string weight_name = "weight";

    EstimatorConfig estimator;
    /// Replaces estimator.interactions with every product of the model's covariates.
    bool saturate = false;
    bool emit_weights = false;
    bool svg = false;

    std::optional<double> epsilon;
    double alpha = 0.05;
    diagnostics::Covariance covariance = diagnostics::Covariance::HC1;

    oracle::SimulationSpec simulation;

    CovariateSchema schema() const;
    /// Estimator settings with the run seed and thread count folded in.
    EstimatorConfig estimator_config() const;
};

RunConfig parse_config(const std::string& yaml_text);
RunConfig load_config(const std::string& path);

/// Flags given on the command line; unset fields leave the config alone.
struct Overrides {
    std::optional<std::string> survey;
    std::optional<std::string> population;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<double> lambda;
    std::optional<double> epsilon;
    std::optional<double> alpha;
    std::optional<int> bootstrap;
    std::optional<double> trim_quantile;
    bool emit_weights = false;
    bool svg = false;
};

void apply_overrides(RunConfig& config, const Overrides& o);

/// Checks the cross-field invariants; throws ConfigError.
void validate(const RunConfig& config);

struct AreaFailure {
    std::string area;
    Error::Category category = Error::Category::Numerical;
    std::string message;
};

struct CommandReport {
    std::vector<std::string> files;
    std::vector<std::string> warnings;
    /// Per-area failures; the other areas' results are still written.
    std::vector<AreaFailure> failures;
};

/// results.csv, optional weights/<area>.csv, estimate.log
CommandReport cmd_estimate(const RunConfig& config);
/// panel.csv
CommandReport cmd_diagnose(const RunConfig& config);
/// spec.json, population.csv, truth.csv, estimates.csv, metrics.csv,
/// summary.csv, optional scatter.svg
CommandReport cmd_simulate(const RunConfig& config);
/// metrics.csv and error_correlation.csv. The estimates file has an area
/// column and either one column per estimate set or the method/estimate
/// columns of results.csv; the truth file has area and truth columns.
CommandReport cmd_validate(const std::string& estimates_path, const std::string& truth_path, const RunConfig& config);

/// One-line JSON object describing an error, for stderr.
std::string error_json(Error::Category category, const std::string& message,
                       const std::vector<AreaFailure>& failures = {});

/// Exit code of an error category: config 2, data 3, numerical 4.
int exit_code(Error::Category category);

/// Estimate-vs-truth scatter with the identity line.
struct ScatterSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;  ///< (truth, estimate)
};
void write_svg_scatter(std::ostream& out, const std::string& title, const std::vector<ScatterSeries>& series);

} // namespace sae::cli
