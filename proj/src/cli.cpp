#include "sae/cli.hpp"

#include "sae/csv.hpp"
#include "sae/metrics.hpp"
#include "sae/parallel.hpp"

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace sae::cli {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
    return std::isfinite(v) ? csv::format_double(v) : "NA";
}

void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!node.IsMap()) throw ConfigError("'" + where + "' must be a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <class T>
T get(const YAML::Node& node, const std::string& what) {
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError("config key '" + what + "' has the wrong type");
    }
}

template <class T>
std::optional<T> optional(const YAML::Node& parent, const char* key, const std::string& where) {
    const auto node = parent[key];
    if (!node || node.IsNull()) return std::nullopt;
    return get<T>(node, where + "." + key);
}

std::vector<std::string> string_list(const YAML::Node& node, const std::string& what) {
    if (!node.IsSequence()) throw ConfigError("'" + what + "' must be a list");
    std::vector<std::string> out;
    for (const auto& v : node) out.push_back(get<std::string>(v, what));
    return out;
}

std::pair<double, double> range(const YAML::Node& node, const std::string& what) {
    if (!node.IsSequence() || node.size() != 2) throw ConfigError("'" + what + "' must be a two-element list");
    return {get<double>(node[0], what), get<double>(node[1], what)};
}

void parse_estimator(const YAML::Node& e, RunConfig& c) {
    check_keys(e, "estimator", {"lambda", "membership", "xp_vars", "xs_vars", "interactions", "trim_quantile",
                                "bootstrap", "interval_level", "emit_weights"});
    auto& est = c.estimator;
    if (auto v = optional<double>(e, "lambda", "estimator")) est.lambda = *v;
    if (auto v = optional<std::string>(e, "membership", "estimator")) {
        if (*v == "one-vs-rest") est.membership = MembershipModel::OneVsRest;
        else if (*v == "multinomial") est.membership = MembershipModel::Multinomial;
        else throw ConfigError("estimator.membership must be 'one-vs-rest' or 'multinomial'");
    }
    if (e["xp_vars"]) est.xp_vars = string_list(e["xp_vars"], "estimator.xp_vars");
    if (e["xs_vars"]) est.xs_vars = string_list(e["xs_vars"], "estimator.xs_vars");
    if (const auto i = e["interactions"]) {
        if (i.IsScalar()) {
            if (i.as<std::string>() != "saturated")
                throw ConfigError("estimator.interactions must be a list of variable lists or 'saturated'");
            c.saturate = true;
        } else {
            if (!i.IsSequence()) throw ConfigError("estimator.interactions must be a list");
            for (const auto& term : i) est.interactions.push_back(string_list(term, "estimator.interactions"));
        }
    }
    est.trim_quantile = optional<double>(e, "trim_quantile", "estimator");
    if (auto v = optional<int>(e, "bootstrap", "estimator")) est.bootstrap_replicates = *v;
    if (auto v = optional<double>(e, "interval_level", "estimator")) est.interval_level = *v;
    if (auto v = optional<bool>(e, "emit_weights", "estimator")) c.emit_weights = *v;
}

void parse_simulation(const YAML::Node& s, RunConfig& c) {
    check_keys(s, "simulation", {"xp_levels", "xs_levels", "areas", "count_range", "outcome_range",
                                 "inclusion_range", "gamma_shift", "population_seed", "sample_sizes", "replicates",
                                 "national_weights"});
    auto& sim = c.simulation;
    auto& pop = sim.population;
    auto sizes = [&](const char* key) {
        std::vector<std::size_t> out;
        const auto node = s[key];
        if (!node.IsSequence()) throw ConfigError(std::string("simulation.") + key + " must be a list");
        for (const auto& v : node) {
            const auto x = get<long long>(v, std::string("simulation.") + key);
            if (x < 1) throw ConfigError(std::string("simulation.") + key + " entries must be positive");
            out.push_back(static_cast<std::size_t>(x));
        }
        return out;
    };
    if (s["xp_levels"]) pop.xp_levels = sizes("xp_levels");
    if (s["xs_levels"]) pop.xs_levels = sizes("xs_levels");
    if (auto v = optional<long long>(s, "areas", "simulation")) {
        if (*v < 1) throw ConfigError("simulation.areas must be positive");
        pop.n_areas = static_cast<std::size_t>(*v);
    }
    if (s["count_range"]) std::tie(pop.count_low, pop.count_high) = range(s["count_range"], "simulation.count_range");
    if (s["outcome_range"])
        std::tie(pop.outcome_low, pop.outcome_high) = range(s["outcome_range"], "simulation.outcome_range");
    if (s["inclusion_range"])
        std::tie(pop.inclusion_low, pop.inclusion_high) = range(s["inclusion_range"], "simulation.inclusion_range");
    if (s["gamma_shift"]) {
        pop.gamma_shift.clear();
        for (const auto& v : s["gamma_shift"]) pop.gamma_shift.push_back(get<double>(v, "simulation.gamma_shift"));
    }
    if (auto v = optional<std::uint64_t>(s, "population_seed", "simulation")) pop.seed = *v;
    if (s["sample_sizes"]) sim.sample_sizes = sizes("sample_sizes");
    if (auto v = optional<long long>(s, "replicates", "simulation")) {
        if (*v < 1) throw ConfigError("simulation.replicates must be positive");
        sim.replicates = static_cast<std::size_t>(*v);
    }
    if (auto v = optional<bool>(s, "national_weights", "simulation")) sim.use_national_weights = *v;
}

fs::path prepare_out(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
    return fs::path(dir);
}

std::ofstream open_out(const fs::path& path, CommandReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    report.files.push_back(path.string());
    return out;
}

std::string file_stem(const std::string& label) {
    std::string s;
    for (char ch : label) s += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' ? ch : '_';
    return s.empty() ? "_" : s;
}

std::vector<std::string> model_vars(const CovariateSchema& schema, const std::optional<std::vector<std::string>>& chosen,
                                    Role role) {
    if (chosen) return *chosen;
    std::vector<std::string> out;
    for (const auto& v : role == Role::Population ? schema.population_vars() : schema.survey_vars())
        out.push_back(v.name);
    return out;
}

void write_survey(std::ostream& out, const SurveyDataset& s) {
    const auto& schema = s.schema();
    std::vector<std::string> header{schema.area_name(), schema.outcome_name()};
    if (s.national_weight()) header.push_back(schema.weight_name());
    for (const auto& v : schema.population_vars()) header.push_back(v.name);
    for (const auto& v : schema.survey_vars()) header.push_back(v.name);
    csv::write_row(out, header);
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::vector<std::string> row{s.area()[i], num(s.outcome()[i])};
        if (s.national_weight()) row.push_back(num((*s.national_weight())[i]));
        for (std::size_t v = 0; v < schema.population_vars().size(); ++v)
            row.push_back(schema.population_vars()[v].levels[s.xp(i, v)]);
        for (std::size_t v = 0; v < schema.survey_vars().size(); ++v)
            row.push_back(schema.survey_vars()[v].levels[s.xs(i, v)]);
        csv::write_row(out, row);
    }
}

nlohmann::ordered_json simulation_echo(const RunConfig& c) {
    const auto& sim = c.simulation;
    const auto& p = sim.population;
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    j["population_seed"] = p.seed;
    j["sampling_seed"] = sim.seed;
    j["xp_levels"] = p.xp_levels;
    j["xs_levels"] = p.xs_levels;
    j["areas"] = p.n_areas;
    j["count_range"] = {p.count_low, p.count_high};
    j["outcome_range"] = {p.outcome_low, p.outcome_high};
    j["inclusion_range"] = {p.inclusion_low, p.inclusion_high};
    j["gamma_shift"] = p.gamma_shift;
    j["sample_sizes"] = sim.sample_sizes;
    j["replicates"] = sim.replicates;
    j["national_weights"] = sim.use_national_weights;
    j["lambda"] = sim.estimator.lambda;
    j["membership"] = sim.estimator.membership == MembershipModel::OneVsRest ? "one-vs-rest" : "multinomial";
    nlohmann::ordered_json terms = nlohmann::ordered_json::array();
    for (const auto& t : sim.estimator.interactions) terms.push_back(t);
    j["interactions"] = terms;
    return j;
}

struct Keyed {
    std::vector<std::string> keys;
    std::vector<std::string> names;
    std::vector<std::vector<double>> values;  // one vector per name, aligned with keys
};

// Reads estimate sets keyed by area, either wide (one column per set) or
// long (method and estimate columns).
Keyed read_estimates(const std::string& path, const std::string& area_name) {
    const auto t = csv::read_file(path);
    const auto area_col = t.column(area_name);
    if (area_col == csv::Table::npos) throw DataError(path + ": missing '" + area_name + "' column");
    Keyed k;
    const auto method_col = t.column("method"), estimate_col = t.column("estimate");
    if (method_col != csv::Table::npos && estimate_col != csv::Table::npos) {
        std::map<std::string, std::map<std::string, double>> by_method;
        std::vector<std::string> method_order;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const auto& row = t.rows[r];
            const auto& m = row[method_col];
            if (!by_method.count(m)) method_order.push_back(m);
            const double v = row[estimate_col] == "NA" ? kNaN : csv::to_double(row[estimate_col], "estimate");
            if (!by_method[m].emplace(row[area_col], v).second)
                throw DataError(path + ": area '" + row[area_col] + "' repeated for method '" + m + "'");
            if (std::find(k.keys.begin(), k.keys.end(), row[area_col]) == k.keys.end()) k.keys.push_back(row[area_col]);
        }
        for (const auto& m : method_order) {
            k.names.push_back(m);
            std::vector<double> v;
            for (const auto& key : k.keys) {
                auto it = by_method[m].find(key);
                v.push_back(it == by_method[m].end() ? kNaN : it->second);
            }
            k.values.push_back(std::move(v));
        }
        return k;
    }
    for (std::size_t c = 0; c < t.header.size(); ++c)
        if (c != area_col) k.names.push_back(t.header[c]);
    if (k.names.empty()) throw DataError(path + ": no estimate columns");
    k.values.resize(k.names.size());
    std::set<std::string> seen;
    for (const auto& row : t.rows) {
        if (!seen.insert(row[area_col]).second) throw DataError(path + ": area '" + row[area_col] + "' repeated");
        k.keys.push_back(row[area_col]);
        std::size_t s = 0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c == area_col) continue;
            k.values[s++].push_back(row[c] == "NA" ? kNaN : csv::to_double(row[c], t.header[c]));
        }
    }
    return k;
}

std::map<std::string, double> read_truth(const std::string& path, const std::string& area_name) {
    const auto t = csv::read_file(path);
    const auto area_col = t.column(area_name), truth_col = t.column("truth");
    if (area_col == csv::Table::npos || truth_col == csv::Table::npos)
        throw DataError(path + ": truth file needs '" + area_name + "' and 'truth' columns");
    std::map<std::string, double> out;
    for (const auto& row : t.rows)
        if (!out.emplace(row[area_col], csv::to_double(row[truth_col], "truth")).second)
            throw DataError(path + ": area '" + row[area_col] + "' repeated");
    return out;
}

} // namespace

CovariateSchema RunConfig::schema() const {
    std::vector<Variable> pop, srv;
    for (const auto& v : variables) (v.role == Role::Population ? pop : srv).push_back(Variable{v.name, v.levels});
    return CovariateSchema(std::move(pop), std::move(srv), outcome_name, area_name, weight_name);
}

EstimatorConfig RunConfig::estimator_config() const {
    auto e = estimator;
    e.seed = derive_seed(seed, {1});
    e.threads = threads;
    return e;
}

RunConfig parse_config(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config is not valid YAML: ") + e.what());
    }
    RunConfig c;
    if (!root || root.IsNull()) return c;
    check_keys(root, "config", {"seed", "threads", "paths", "schema", "estimator", "diagnostics", "simulation", "svg"});
    if (auto v = optional<std::uint64_t>(root, "seed", "config")) c.seed = *v;
    if (auto v = optional<unsigned>(root, "threads", "config")) c.threads = *v;
    if (auto v = optional<bool>(root, "svg", "config")) c.svg = *v;
    if (const auto p = root["paths"]) {
        check_keys(p, "paths", {"survey", "population", "out"});
        c.survey_path = optional<std::string>(p, "survey", "paths");
        c.population_path = optional<std::string>(p, "population", "paths");
        if (auto v = optional<std::string>(p, "out", "paths")) c.out_dir = *v;
    }
    if (const auto s = root["schema"]) {
        check_keys(s, "schema", {"outcome", "area", "weight", "variables"});
        if (auto v = optional<std::string>(s, "outcome", "schema")) c.outcome_name = *v;
        if (auto v = optional<std::string>(s, "area", "schema")) c.area_name = *v;
        if (auto v = optional<std::string>(s, "weight", "schema")) c.weight_name = *v;
        if (const auto vars = s["variables"]) {
            if (!vars.IsSequence()) throw ConfigError("schema.variables must be a list");
            for (const auto& v : vars) {
                check_keys(v, "schema.variables", {"name", "levels", "role"});
                if (!v["name"] || !v["levels"] || !v["role"])
                    throw ConfigError("every schema variable needs name, levels and role");
                VariableDecl d;
                d.name = get<std::string>(v["name"], "schema.variables.name");
                d.levels = string_list(v["levels"], "schema.variables.levels");
                const auto role = get<std::string>(v["role"], "schema.variables.role");
                if (role == "P") d.role = Role::Population;
                else if (role == "S") d.role = Role::Survey;
                else throw ConfigError("variable '" + d.name + "': role must be P or S");
                c.variables.push_back(std::move(d));
            }
        }
    }
    if (const auto e = root["estimator"]) parse_estimator(e, c);
    if (const auto d = root["diagnostics"]) {
        check_keys(d, "diagnostics", {"epsilon", "alpha", "covariance"});
        c.epsilon = optional<double>(d, "epsilon", "diagnostics");
        if (auto v = optional<double>(d, "alpha", "diagnostics")) c.alpha = *v;
        if (auto v = optional<std::string>(d, "covariance", "diagnostics")) {
            if (*v == "hc1") c.covariance = diagnostics::Covariance::HC1;
            else if (*v == "classical") c.covariance = diagnostics::Covariance::Classical;
            else throw ConfigError("diagnostics.covariance must be 'hc1' or 'classical'");
        }
    }
    if (const auto s = root["simulation"]) parse_simulation(s, c);
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

void apply_overrides(RunConfig& c, const Overrides& o) {
    if (o.survey) c.survey_path = o.survey;
    if (o.population) c.population_path = o.population;
    if (o.out) c.out_dir = *o.out;
    if (o.seed) c.seed = *o.seed;
    if (o.threads) c.threads = *o.threads;
    if (o.lambda) c.estimator.lambda = *o.lambda;
    if (o.epsilon) c.epsilon = o.epsilon;
    if (o.alpha) c.alpha = *o.alpha;
    if (o.bootstrap) c.estimator.bootstrap_replicates = *o.bootstrap;
    if (o.trim_quantile) c.estimator.trim_quantile = o.trim_quantile;
    if (o.emit_weights) c.emit_weights = true;
    if (o.svg) c.svg = true;
}

void validate(const RunConfig& c) {
    std::set<std::string> names;
    for (const auto& v : c.variables)
        if (!names.insert(v.name).second) throw ConfigError("variable '" + v.name + "' is declared more than once");
    auto check_declared = [&](const std::optional<std::vector<std::string>>& vars, Role role, const char* key) {
        if (!vars) return;
        for (const auto& name : *vars) {
            auto it = std::find_if(c.variables.begin(), c.variables.end(), [&](const auto& d) { return d.name == name; });
            if (it == c.variables.end()) throw ConfigError(std::string(key) + ": variable '" + name + "' is not declared");
            if (it->role != role)
                throw ConfigError(std::string(key) + ": variable '" + name + "' has role " +
                                  (it->role == Role::Population ? "P" : "S"));
        }
    };
    check_declared(c.estimator.xp_vars, Role::Population, "estimator.xp_vars");
    check_declared(c.estimator.xs_vars, Role::Survey, "estimator.xs_vars");
    for (const auto& term : c.estimator.interactions) {
        if (term.size() < 2) throw ConfigError("an interaction needs at least two variables");
        for (const auto& name : term)
            if (!names.count(name)) throw ConfigError("interaction variable '" + name + "' is not declared");
    }
    const auto& e = c.estimator;
    if (!(e.interval_level > 0.0 && e.interval_level < 1.0)) throw ConfigError("interval level must lie in (0, 1)");
    if (e.bootstrap_replicates < 0) throw ConfigError("bootstrap replicates must be nonnegative");
    if (!(e.lambda > 0.0) || !std::isfinite(e.lambda)) throw ConfigError("lambda must be positive");
    if (e.trim_quantile && !(*e.trim_quantile > 0.0 && *e.trim_quantile <= 1.0))
        throw ConfigError("trim quantile must lie in (0, 1]");
    if (!(c.alpha > 0.0 && c.alpha < 0.5)) throw ConfigError("alpha must lie in (0, 0.5)");
    if (c.epsilon && !(*c.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

namespace {

RunConfig checked(const RunConfig& config) {
    validate(config);
    return config;
}

EstimatorConfig resolved_estimator(const RunConfig& c, const CovariateSchema& schema) {
    auto e = c.estimator_config();
    if (c.saturate) {
        auto vars = model_vars(schema, e.xp_vars, Role::Population);
        const auto xs = model_vars(schema, e.xs_vars, Role::Survey);
        vars.insert(vars.end(), xs.begin(), xs.end());
        e.interactions = glm::saturated_interactions(vars);
    }
    return e;
}

} // namespace

CommandReport cmd_estimate(const RunConfig& raw) {
    const auto config = checked(raw);
    if (!config.survey_path) throw ConfigError("no survey file given (paths.survey or --survey)");
    if (!config.population_path) throw ConfigError("no population file given (paths.population or --population)");
    if (config.variables.empty()) throw ConfigError("schema.variables is empty");
    const auto schema = config.schema();
    const auto survey = load_survey(*config.survey_path, schema);
    const auto table = load_population(*config.population_path, schema);
    auto est = resolved_estimator(config, schema);
    est.keep_weights = config.emit_weights;
    est.with_direct = true;

    CommandReport report;
    const auto overlap = check_overlap(survey, table);
    if (overlap.sampling_overlap_concern)
        report.warnings.push_back("some population cells have no respondents in an area (sampling overlap)");
    if (overlap.area_overlap_concern)
        report.warnings.push_back("some covariate profiles are observed in fewer than all areas (area overlap)");

    const auto results = estimate_all_areas(survey, table, est);
    const auto dir = prepare_out(config.out_dir);
    {
        auto out = open_out(dir / "results.csv", report);
        csv::write_row(out, {"area", "n_area", "method", "estimate", "se", "ci_lower", "ci_upper", "ess",
                             "direct_part", "indirect_part"});
        for (const auto& a : results) {
            for (const auto& w : a.warnings) report.warnings.push_back("area '" + a.area + "': " + w);
            if (a.error) {
                report.failures.push_back({a.area, a.error_category, *a.error});
                csv::write_row(out, {a.area, "NA", "synthetic", "NA", "NA", "NA", "NA", "NA", "NA", "NA"});
                continue;
            }
            const auto& s = *a.synthetic;
            csv::write_row(out, {a.area, std::to_string(s.n_area), method_name(Method::Synthetic), num(s.estimate),
                                 num(s.se), num(s.interval.lower), num(s.interval.upper), num(s.ess),
                                 s.components ? num(s.components->first) : "NA",
                                 s.components ? num(s.components->second) : "NA"});
            if (a.direct) {
                const auto& d = *a.direct;
                csv::write_row(out, {a.area, std::to_string(d.n_area), method_name(Method::Direct), num(d.estimate),
                                     num(d.se), num(d.interval.lower), num(d.interval.upper), num(d.ess), "NA",
                                     "NA"});
            }
        }
    }
    if (config.emit_weights) {
        const auto wdir = dir / "weights";
        fs::create_directories(wdir);
        std::set<std::string> used;
        for (const auto& a : results) {
            if (!a.weights) continue;
            auto stem = file_stem(a.area);
            while (!used.insert(stem).second) stem += "_";
            auto out = open_out(wdir / (stem + ".csv"), report);
            csv::write_row(out, {"respondent_id", "zeta", "p_pop", "inv_prop", "weight"});
            for (std::size_t i = 0; i < a.weights->weight.size(); ++i)
                csv::write_row(out, {std::to_string(i + 1), num(a.weights->zeta[i]), num(a.weights->p_pop[i]),
                                     num(a.weights->inv_prop[i]), num(a.weights->weight[i])});
        }
    }
    {
        auto log = open_out(dir / "estimate.log", report);
        log << "respondents " << survey.size() << "\n";
        log << "areas " << table.n_areas() << "\n";
        log << "step1 " << (survey.national_weight() ? "national weights" : "cell-ratio propensity") << "\n";
        log << "membership " << (est.membership == MembershipModel::OneVsRest ? "one-vs-rest" : "multinomial")
            << " lambda " << num(est.lambda) << " interactions " << est.interactions.size() << "\n";
        for (const auto& w : report.warnings) log << "warning " << w << "\n";
        for (const auto& f : report.failures) log << "error " << f.area << " " << f.message << "\n";
    }
    return report;
}

CommandReport cmd_diagnose(const RunConfig& raw) {
    const auto config = checked(raw);
    if (!config.survey_path) throw ConfigError("no survey file given (paths.survey or --survey)");
    if (config.variables.empty()) throw ConfigError("schema.variables is empty");
    const auto schema = config.schema();
    const auto survey = load_survey(*config.survey_path, schema);
    const auto est = resolved_estimator(config, schema);

    diagnostics::PanelOptions opt;
    opt.xp_vars = model_vars(schema, est.xp_vars, Role::Population);
    opt.xs_vars = model_vars(schema, est.xs_vars, Role::Survey);
    opt.interactions = est.interactions;
    opt.epsilon = config.epsilon;
    opt.alpha = config.alpha;
    opt.covariance = config.covariance;
    opt.threads = config.threads;
    const auto panel = diagnostics::ignorability_panel(survey, opt);

    CommandReport report;
    if (!config.epsilon)
        report.warnings.push_back("no equivalence margin (epsilon) set: only the conventional test is reported, "
                                  "and not rejecting it is not evidence of area ignorability");
    const auto dir = prepare_out(config.out_dir);
    auto out = open_out(dir / "panel.csv", report);
    diagnostics::write_panel_csv(out, panel);
    for (const auto& r : panel) {
        if (r.error) report.failures.push_back({r.area, r.error_category, *r.error});
        for (const auto& d : r.regression.dropped)
            report.warnings.push_back("area '" + r.area + "': dropped dependent column " + d);
    }
    return report;
}

CommandReport cmd_simulate(const RunConfig& raw) {
    const auto config = checked(raw);
    auto spec = config.simulation;
    spec.seed = derive_seed(config.seed, {2});
    spec.threads = config.threads;
    const auto schema = generate_population(spec.population).schema();
    spec.estimator = resolved_estimator(config, schema);
    spec.estimator.xp_vars.reset();
    spec.estimator.xs_vars.reset();
    if (config.saturate) {
        std::vector<std::string> vars;
        for (const auto& v : schema.population_vars()) vars.push_back(v.name);
        for (const auto& v : schema.survey_vars()) vars.push_back(v.name);
        spec.estimator.interactions = glm::saturated_interactions(vars);
    }
    const auto result = oracle::run_simulation(spec);

    CommandReport report;
    const auto dir = prepare_out(config.out_dir);
    {
        auto out = open_out(dir / "spec.json", report);
        auto echo = simulation_echo(config);
        echo["sampling_seed"] = spec.seed;
        nlohmann::ordered_json terms = nlohmann::ordered_json::array();
        for (const auto& t : spec.estimator.interactions) terms.push_back(t);
        echo["interactions"] = terms;
        out << echo.dump(2) << "\n";
    }
    {
        auto out = open_out(dir / "population.csv", report);
        result.population.population_table().write(out);
    }
    {
        auto out = open_out(dir / "truth.csv", report);
        csv::write_row(out, {"area", "truth", "identification", "identification_residual", "direct_term",
                             "indirect_term", "decomposition_residual"});
        for (std::size_t j = 0; j < result.truth.size(); ++j) {
            const auto& d = result.decomposition[j];
            csv::write_row(out, {result.population.area_label(j), num(result.truth[j]), num(result.identification[j]),
                                 num(result.identification[j] - result.truth[j]), num(d.direct), num(d.indirect),
                                 num(d.direct + d.indirect - result.identification[j])});
        }
    }
    {
        auto out = open_out(dir / "estimates.csv", report);
        csv::write_row(out, {"sample_size", "replicate", "area", "n_area", "synthetic", "synthetic_se", "direct",
                             "direct_se"});
        for (const auto& r : result.runs)
            for (std::size_t j = 0; j < r.synthetic.size(); ++j)
                csv::write_row(out, {std::to_string(r.sample_size), std::to_string(r.replicate),
                                     result.population.area_label(j), std::to_string(r.n_area[j]), num(r.synthetic[j]),
                                     num(r.synthetic_se[j]), num(r.direct[j]), num(r.direct_se[j])});
    }
    auto metric_row = [](const std::optional<oracle::MetricReport>& m) -> std::vector<std::string> {
        if (!m) return {"NA", "NA", "NA", "NA"};
        return {num(m->rmse), num(m->mae), num(m->mean_error), m->correlation ? num(*m->correlation) : "NA"};
    };
    {
        auto out = open_out(dir / "metrics.csv", report);
        csv::write_row(out, {"sample_size", "replicate", "method", "rmse", "mae", "mean_error", "correlation"});
        for (const auto& r : result.runs)
            for (const auto& [name, m] : {std::pair{"synthetic", r.synthetic_metrics}, std::pair{"direct", r.direct_metrics}}) {
                std::vector<std::string> row{std::to_string(r.sample_size), std::to_string(r.replicate), name};
                const auto cells = metric_row(m);
                row.insert(row.end(), cells.begin(), cells.end());
                csv::write_row(out, row);
            }
    }
    {
        auto out = open_out(dir / "summary.csv", report);
        csv::write_row(out, {"sample_size", "method", "median_rmse", "median_mae", "median_mean_error"});
        for (auto n : spec.sample_sizes)
            for (const char* name : {"synthetic", "direct"}) {
                std::vector<double> rmse, mae, me;
                for (const auto& r : result.runs) {
                    if (r.sample_size != n) continue;
                    const auto& m = std::string(name) == "synthetic" ? r.synthetic_metrics : r.direct_metrics;
                    if (!m) continue;
                    rmse.push_back(m->rmse);
                    mae.push_back(m->mae);
                    me.push_back(m->mean_error);
                }
                csv::write_row(out, {std::to_string(n), name, num(oracle::median(rmse)), num(oracle::median(mae)),
                                     num(oracle::median(me))});
            }
    }
    {
        // first replicate at the first sample size, loadable by `estimate`
        const auto sample = oracle::draw_sample(result.population, spec.sample_sizes.front(),
                                                oracle::replicate_seed(spec.seed, spec.sample_sizes.front(), 0));
        auto out = open_out(dir / "sample.csv", report);
        write_survey(out, spec.use_national_weights ? sample.survey : sample.survey.with_national_weight(std::nullopt));
    }
    for (std::size_t j = 0; j < result.truth.size(); ++j)
        if (std::abs(result.identification[j] - result.truth[j]) > 1e-10)
            report.warnings.push_back("area '" + result.population.area_label(j) +
                                      "': identification residual exceeds 1e-10 (area shift present?)");
    if (config.svg) {
        const auto& last = result.runs[(spec.sample_sizes.size() - 1) * spec.replicates];
        std::vector<ScatterSeries> series{{"synthetic", {}}, {"direct", {}}};
        for (std::size_t j = 0; j < result.truth.size(); ++j) {
            if (std::isfinite(last.synthetic[j])) series[0].points.emplace_back(result.truth[j], last.synthetic[j]);
            if (std::isfinite(last.direct[j])) series[1].points.emplace_back(result.truth[j], last.direct[j]);
        }
        auto out = open_out(dir / "scatter.svg", report);
        write_svg_scatter(out, "n = " + std::to_string(last.sample_size) + ", replicate 0", series);
    }
    return report;
}

CommandReport cmd_validate(const std::string& estimates_path, const std::string& truth_path, const RunConfig& raw) {
    const auto config = checked(raw);
    const auto est = read_estimates(estimates_path, config.area_name);
    const auto truth = read_truth(truth_path, config.area_name);
    for (const auto& k : est.keys)
        if (!truth.count(k)) throw DataError("area '" + k + "' has an estimate but no truth value");
    for (const auto& [k, v] : truth)
        if (std::find(est.keys.begin(), est.keys.end(), k) == est.keys.end())
            throw DataError("area '" + k + "' has a truth value but no estimate");

    std::vector<double> t;
    for (const auto& k : est.keys) t.push_back(truth.at(k));

    CommandReport report;
    const auto dir = prepare_out(config.out_dir);
    {
        auto out = open_out(dir / "metrics.csv", report);
        csv::write_row(out, {"set", "n_areas", "rmse", "mae", "mean_error", "correlation"});
        for (std::size_t s = 0; s < est.names.size(); ++s) {
            std::vector<double> e, tt;
            for (std::size_t i = 0; i < t.size(); ++i)
                if (std::isfinite(est.values[s][i])) {
                    e.push_back(est.values[s][i]);
                    tt.push_back(t[i]);
                }
            if (e.size() < t.size())
                report.warnings.push_back("set '" + est.names[s] + "': " + std::to_string(t.size() - e.size()) +
                                          " areas without an estimate skipped");
            const auto m = oracle::fit_metrics(e, tt);
            csv::write_row(out, {est.names[s], std::to_string(e.size()), num(m.rmse), num(m.mae), num(m.mean_error),
                                 m.correlation ? num(*m.correlation) : "NA"});
        }
    }
    {
        auto out = open_out(dir / "error_correlation.csv", report);
        std::vector<std::string> header{"set"};
        header.insert(header.end(), est.names.begin(), est.names.end());
        csv::write_row(out, header);
        for (std::size_t a = 0; a < est.names.size(); ++a) {
            std::vector<std::string> row{est.names[a]};
            for (std::size_t b = 0; b < est.names.size(); ++b) {
                std::vector<double> ea, eb, tt;
                for (std::size_t i = 0; i < t.size(); ++i)
                    if (std::isfinite(est.values[a][i]) && std::isfinite(est.values[b][i])) {
                        ea.push_back(est.values[a][i]);
                        eb.push_back(est.values[b][i]);
                        tt.push_back(t[i]);
                    }
                try {
                    row.push_back(num(oracle::error_correlation(ea, eb, tt)));
                } catch (const Error& e) {
                    row.push_back("NA");
                    if (a < b)
                        report.warnings.push_back("error correlation of '" + est.names[a] + "' and '" + est.names[b] +
                                                  "' undefined: " + e.what());
                }
            }
            csv::write_row(out, row);
        }
    }
    if (config.svg) {
        std::vector<ScatterSeries> series;
        for (std::size_t s = 0; s < est.names.size(); ++s) {
            ScatterSeries ss{est.names[s], {}};
            for (std::size_t i = 0; i < t.size(); ++i)
                if (std::isfinite(est.values[s][i])) ss.points.emplace_back(t[i], est.values[s][i]);
            series.push_back(std::move(ss));
        }
        auto out = open_out(dir / "scatter.svg", report);
        write_svg_scatter(out, "estimate vs truth", series);
    }
    return report;
}

std::string error_json(Error::Category category, const std::string& message, const std::vector<AreaFailure>& failures) {
    nlohmann::ordered_json j;
    j["error"]["category"] = category_name(category);
    j["error"]["message"] = message;
    if (!failures.empty()) {
        auto& areas = j["error"]["areas"];
        areas = nlohmann::ordered_json::array();
        for (const auto& f : failures)
            areas.push_back({{"area", f.area}, {"category", category_name(f.category)}, {"message", f.message}});
    }
    return j.dump();
}

int exit_code(Error::Category category) {
    switch (category) {
    case Error::Category::Config: return 2;
    case Error::Category::Data: return 3;
    case Error::Category::Numerical: return 4;
    }
    return 1;
}

void write_svg_scatter(std::ostream& out, const std::string& title, const std::vector<ScatterSeries>& series) {
    const double size = 480, pad = 50, plot = size - 2 * pad;
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            lo = std::min({lo, x, y});
            hi = std::max({hi, x, y});
        }
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-9) lo -= 0.5, hi += 0.5;
    const double margin = 0.05 * (hi - lo);
    lo -= margin;
    hi += margin;
    auto px = [&](double v) { return pad + (v - lo) / (hi - lo) * plot; };
    auto py = [&](double v) { return size - pad - (v - lo) / (hi - lo) * plot; };
    auto escape = [](const std::string& s) {
        std::string o;
        for (char c : s) {
            if (c == '<') o += "&lt;";
            else if (c == '>') o += "&gt;";
            else if (c == '&') o += "&amp;";
            else o += c;
        }
        return o;
    };
    const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::ostringstream s;
    s << std::fixed << std::setprecision(2);
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << size / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
    s << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << plot << "\" height=\"" << plot
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
    s << "<line x1=\"" << px(lo) << "\" y1=\"" << py(lo) << "\" x2=\"" << px(hi) << "\" y2=\"" << py(hi)
      << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    s << "<text x=\"" << size / 2 << "\" y=\"" << size - 12 << "\" text-anchor=\"middle\" font-size=\"12\">truth</text>\n";
    s << "<text x=\"14\" y=\"" << size / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
      << size / 2 << ")\">estimate</text>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        s << "<text x=\"" << px(v) << "\" y=\"" << size - pad + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
          << std::setprecision(3) << v << std::setprecision(2) << "</text>\n";
        s << "<text x=\"" << pad - 6 << "\" y=\"" << py(v) + 3 << "\" text-anchor=\"end\" font-size=\"10\">"
          << std::setprecision(3) << v << std::setprecision(2) << "</text>\n";
    }
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* c = colours[k % 5];
        for (const auto& [x, y] : series[k].points)
            s << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << c
              << "\" fill-opacity=\"0.7\"/>\n";
        s << "<text x=\"" << pad + 8 << "\" y=\"" << pad + 16 + 14 * static_cast<double>(k) << "\" font-size=\"11\" fill=\""
          << c << "\">" << escape(series[k].name) << "</text>\n";
    }
    s << "</svg>\n";
    out << s.str();
}

} // namespace sae::cli
