#include "sae/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Flags {
    std::string config;
    sae::cli::Overrides o;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "YAML run configuration");
    cmd->add_option("--out", f.o.out, "output directory");
    cmd->add_option("--seed", f.o.seed, "run seed");
    cmd->add_option("--threads", f.o.threads, "worker threads (0 = all cores)");
}

void add_estimation(CLI::App* cmd, Flags& f) {
    cmd->add_option("--survey", f.o.survey, "survey microdata CSV");
    cmd->add_option("--lambda", f.o.lambda, "ridge penalty of the membership models");
    cmd->add_option("--trim-quantile", f.o.trim_quantile, "cap weights at this quantile");
}

int report(const sae::cli::CommandReport& r) {
    for (const auto& file : r.files) std::cout << file << "\n";
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    if (r.failures.empty()) return 0;
    const auto category = r.failures.front().category;
    std::cerr << sae::cli::error_json(category, std::to_string(r.failures.size()) + " area(s) failed", r.failures)
              << "\n";
    return sae::cli::exit_code(category);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Small-area estimation with pooled synthetic weights"};
    app.require_subcommand(1);
    Flags f;

    auto* estimate = app.add_subcommand("estimate", "estimate every area mean from a survey and a population table");
    add_common(estimate, f);
    add_estimation(estimate, f);
    estimate->add_option("--population", f.o.population, "population count CSV");
    estimate->add_option("--bootstrap", f.o.bootstrap, "bootstrap replicates for the synthetic se");
    estimate->add_flag("--emit-weights", f.o.emit_weights, "write per-area weight files");

    auto* diagnose = app.add_subcommand("diagnose", "area-ignorability regression panel");
    add_common(diagnose, f);
    add_estimation(diagnose, f);
    diagnose->add_option("--epsilon", f.o.epsilon, "equivalence margin");
    diagnose->add_option("--alpha", f.o.alpha, "test level");

    auto* simulate = app.add_subcommand("simulate", "simulation against a generated population");
    add_common(simulate, f);
    simulate->add_option("--lambda", f.o.lambda, "ridge penalty of the membership models");
    simulate->add_flag("--svg", f.o.svg, "write an estimate-vs-truth scatter");

    std::string estimates_path, truth_path;
    auto* validate = app.add_subcommand("validate", "compare estimate sets with known area means");
    add_common(validate, f);
    validate->add_option("--estimates", estimates_path, "estimates CSV (wide, or long with method/estimate)")
        ->required();
    validate->add_option("--truth", truth_path, "CSV with area and truth columns")->required();
    validate->add_flag("--svg", f.o.svg, "write an estimate-vs-truth scatter");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << sae::cli::error_json(sae::Error::Category::Config, e.what()) << "\n";
        return sae::cli::exit_code(sae::Error::Category::Config);
    }

    try {
        auto config = f.config.empty() ? sae::cli::RunConfig{} : sae::cli::load_config(f.config);
        sae::cli::apply_overrides(config, f.o);
        if (*estimate) return report(sae::cli::cmd_estimate(config));
        if (*diagnose) return report(sae::cli::cmd_diagnose(config));
        if (*simulate) return report(sae::cli::cmd_simulate(config));
        return report(sae::cli::cmd_validate(estimates_path, truth_path, config));
    } catch (const sae::Error& e) {
        std::cerr << sae::cli::error_json(e.category(), e.what()) << "\n";
        return sae::cli::exit_code(e.category());
    } catch (const std::exception& e) {
        std::cerr << sae::cli::error_json(sae::Error::Category::Numerical, e.what()) << "\n";
        return 1;
    }
}
