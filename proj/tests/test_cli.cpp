#include "sae/cli.hpp"
#include "sae/csv.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace sae;
using namespace sae::cli;

namespace {

const fs::path kData = SAE_TEST_DATA_DIR;

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("sae_cli_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

const char* kSchemaYaml = R"(
schema:
  outcome: y
  variables:
    - {name: g, levels: [a, b], role: P}
    - {name: s, levels: ["0", "1"], role: S}
)";

// one area, no national weights
RunConfig single_area_run(const fs::path& dir) {
    spit(dir / "survey.csv", "area,y,g,s\n"
                             "x,1,a,0\nx,0,a,1\nx,1,a,1\nx,1,b,0\nx,0,b,0\nx,0,b,1\nx,1,a,0\n");
    spit(dir / "pop.csv", "area,count,g\nx,30,a\nx,10,b\n");
    auto c = parse_config(kSchemaYaml);
    c.survey_path = (dir / "survey.csv").string();
    c.population_path = (dir / "pop.csv").string();
    c.out_dir = (dir / "out").string();
    return c;
}

RunConfig simulate_config(const fs::path& out) {
    auto c = load_config((kData / "simulate.yaml").string());
    c.out_dir = out.string();
    return c;
}

} // namespace

TEST_CASE("config: full document parses into the run settings") {
    const auto c = parse_config(R"(
seed: 42
threads: 2
paths: {survey: s.csv, population: p.csv, out: o}
schema:
  outcome: y
  area: region
  weight: w
  variables:
    - {name: g, levels: [a, b], role: P}
    - {name: s, levels: ["0", "1"], role: S}
estimator:
  lambda: 0.5
  membership: multinomial
  interactions: [[g, s]]
  trim_quantile: 0.99
  bootstrap: 50
  interval_level: 0.95
diagnostics: {epsilon: 0.05, alpha: 0.1, covariance: classical}
simulation:
  xp_levels: [3]
  xs_levels: [2, 2]
  areas: 6
  gamma_shift: [0, 0.1, 0, 0, 0, 0]
  population_seed: 9
  sample_sizes: [100, 200]
  replicates: 4
  national_weights: false
)");
    CHECK(c.seed == 42);
    CHECK(c.threads == 2);
    CHECK(*c.survey_path == "s.csv");
    CHECK(c.out_dir == "o");
    CHECK(c.area_name == "region");
    REQUIRE(c.variables.size() == 2);
    CHECK(c.variables[1].role == Role::Survey);
    CHECK(c.estimator.lambda == 0.5);
    CHECK(c.estimator.membership == MembershipModel::Multinomial);
    CHECK(c.estimator.interactions == std::vector<glm::Interaction>{{"g", "s"}});
    CHECK(*c.estimator.trim_quantile == 0.99);
    CHECK(c.estimator.bootstrap_replicates == 50);
    CHECK(*c.epsilon == 0.05);
    CHECK(c.covariance == diagnostics::Covariance::Classical);
    CHECK(c.simulation.population.n_areas == 6);
    CHECK(c.simulation.population.xs_levels == std::vector<std::size_t>{2, 2});
    CHECK(c.simulation.population.seed == 9);
    CHECK(c.simulation.replicates == 4);
    CHECK_FALSE(c.simulation.use_national_weights);
    CHECK_NOTHROW(validate(c));
    const auto schema = c.schema();
    CHECK(schema.area_name() == "region");
    CHECK(schema.population_vars().size() == 1);
}

TEST_CASE("config: mistakes are config errors") {
    CHECK_THROWS_AS(parse_config("sede: 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("estimator: {lamda: 1}\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("seed: [1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("seed: abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("schema: {variables: [{name: g, levels: [a], role: Q}]}\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("estimator: {interactions: all}\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("diagnostics: {covariance: hc3}\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/run.yaml"), ConfigError);

    auto c = parse_config(kSchemaYaml);
    c.estimator.xp_vars = std::vector<std::string>{"s"};
    CHECK_THROWS_AS(validate(c), ConfigError);  // wrong role
    c.estimator.xp_vars = std::vector<std::string>{"h"};
    CHECK_THROWS_AS(validate(c), ConfigError);
    c.estimator.xp_vars.reset();
    c.estimator.interactions = {{"g", "h"}};
    CHECK_THROWS_AS(validate(c), ConfigError);
    c.estimator.interactions.clear();
    c.alpha = 0.6;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c.alpha = 0.05;
    c.estimator.interval_level = 1.0;
    CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("config: command-line overrides win over file values") {
    auto c = parse_config("seed: 1\nestimator: {lambda: 0.3}\n");
    Overrides o;
    o.seed = 5;
    o.lambda = 2.0;
    o.emit_weights = true;
    apply_overrides(c, o);
    CHECK(c.seed == 5);
    CHECK(c.estimator.lambda == 2.0);
    CHECK(c.emit_weights);
    CHECK(c.estimator_config().seed != c.seed);  // derived stream
}

TEST_CASE("estimate: single area reproduces the weighted survey mean") {
    const auto dir = scratch("single");
    auto c = single_area_run(dir);
    c.emit_weights = true;
    const auto report = cmd_estimate(c);
    CHECK(report.failures.empty());

    const auto t = csv::read_file((dir / "out" / "results.csv").string());
    REQUIRE(t.rows.size() == 2);
    const auto est = t.column("estimate");
    double synthetic = NAN, direct = NAN;
    for (const auto& r : t.rows) (r[t.column("method")] == "direct" ? direct : synthetic) = csv::to_double(r[est], "");
    // cell-ratio propensity: a has 4/7 of the sample and 3/4 of the population
    const double wa = 0.75 / (4.0 / 7.0), wb = 0.25 / (3.0 / 7.0);
    const double expected = (wa * 3 + wb * 1) / (4 * wa + 3 * wb);
    CHECK(synthetic == doctest::Approx(expected).epsilon(1e-12));
    CHECK(direct == doctest::Approx(expected).epsilon(1e-12));

    const auto w = csv::read_file((dir / "out" / "weights" / "x.csv").string());
    REQUIRE(w.rows.size() == 7);
    double total = 0.0;
    for (const auto& r : w.rows) {
        CHECK(csv::to_double(r[w.column("zeta")], "") == 1.0);
        total += csv::to_double(r[w.column("weight")], "");
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("estimate: reruns and thread counts give byte-identical files") {
    const auto sim = scratch("rerun_sim");
    cmd_simulate(simulate_config(sim));

    auto run = [&](const std::string& name, unsigned threads) {
        auto c = parse_config(R"(
schema:
  outcome: y
  variables:
    - {name: p1, levels: ["0","1"], role: P}
    - {name: p2, levels: ["0","1"], role: P}
    - {name: s1, levels: ["0","1"], role: S}
estimator: {bootstrap: 10, interactions: saturated}
)");
        c.survey_path = (sim / "sample.csv").string();
        c.population_path = (sim / "population.csv").string();
        c.out_dir = scratch(name).string();
        c.threads = threads;
        c.emit_weights = true;
        cmd_estimate(c);
        return c;
    };
    const auto a = run("rerun_a", 1);
    const auto b = run("rerun_b", 1);
    const auto c = run("rerun_c", 3);
    for (const char* f : {"results.csv", "weights/a1.csv", "weights/a3.csv"}) {
        const auto ref = slurp(fs::path(a.out_dir) / f);
        CHECK_FALSE(ref.empty());
        CHECK(slurp(fs::path(b.out_dir) / f) == ref);
        CHECK(slurp(fs::path(c.out_dir) / f) == ref);
    }

    SUBCASE("results.csv carries exactly the library's numbers") {
        const auto schema = a.schema();
        const auto survey = load_survey(*a.survey_path, schema);
        const auto table = load_population(*a.population_path, schema);
        auto cfg = a.estimator_config();
        cfg.interactions = glm::saturated_interactions(std::vector<std::string>{"p1", "p2", "s1"});
        const auto lib = estimate_all_areas(survey, table, cfg);
        const auto t = csv::read_file((fs::path(a.out_dir) / "results.csv").string());
        std::size_t matched = 0;
        for (const auto& r : t.rows) {
            const auto& area = r[t.column("area")];
            const bool direct = r[t.column("method")] == "direct";
            for (const auto& e : lib) {
                if (e.area != area) continue;
                const auto& res = direct ? *e.direct : *e.synthetic;
                CHECK(csv::to_double(r[t.column("estimate")], "") == res.estimate);
                CHECK(csv::to_double(r[t.column("se")], "") == res.se);
                ++matched;
            }
        }
        CHECK(matched == 2 * lib.size());
    }
}

TEST_CASE("simulate: the run seed moves the samples but not the population") {
    const auto a = scratch("sim_a"), b = scratch("sim_b"), c = scratch("sim_c");
    cmd_simulate(simulate_config(a));
    cmd_simulate(simulate_config(b));
    auto other = simulate_config(c);
    other.seed += 1;
    cmd_simulate(other);
    for (const char* f : {"spec.json", "population.csv", "truth.csv", "estimates.csv", "summary.csv"})
        CHECK(slurp(a / f) == slurp(b / f));
    CHECK(slurp(a / "population.csv") == slurp(c / "population.csv"));
    CHECK(slurp(a / "truth.csv") == slurp(c / "truth.csv"));
    CHECK(slurp(a / "estimates.csv") != slurp(c / "estimates.csv"));

    const auto spec = nlohmann::json::parse(slurp(a / "spec.json"));
    CHECK(spec["seed"] == 11);
    CHECK(spec["interactions"].size() == 4);

    const auto truth = csv::read_file((a / "truth.csv").string());
    CHECK(truth.rows.size() == 3);
    for (const auto& r : truth.rows) {
        CHECK(std::abs(csv::to_double(r[truth.column("identification_residual")], "")) < 1e-10);
        CHECK(std::abs(csv::to_double(r[truth.column("decomposition_residual")], "")) < 1e-10);
    }
}

TEST_CASE("validate: hand-computed metrics for the fixture sets") {
    const std::vector<double> ex{0.1, 0.0, -0.2}, ey{-0.1, 0.1, 0.0};
    auto corr = [](const std::vector<double>& a, const std::vector<double>& b) {
        double ma = 0, mb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / 3, mb += b[i] / 3;
        double sab = 0, saa = 0, sbb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            sab += (a[i] - ma) * (b[i] - mb);
            saa += (a[i] - ma) * (a[i] - ma);
            sbb += (b[i] - mb) * (b[i] - mb);
        }
        return sab / std::sqrt(saa * sbb);
    };

    for (const char* file : {"estimates_wide.csv", "estimates_long.csv"}) {
        CAPTURE(file);
        const auto out = scratch(std::string("validate_") + file);
        RunConfig c;
        c.out_dir = out.string();
        cmd_validate((kData / file).string(), (kData / "truth.csv").string(), c);

        const auto m = csv::read_file((out / "metrics.csv").string());
        REQUIRE(m.rows.size() == 2);
        CHECK(m.rows[0][0] == "x");
        CHECK(csv::to_double(m.rows[0][m.column("rmse")], "") == doctest::Approx(std::sqrt(0.05 / 3)).epsilon(1e-12));
        CHECK(csv::to_double(m.rows[0][m.column("mae")], "") == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(csv::to_double(m.rows[0][m.column("mean_error")], "") == doctest::Approx(-0.1 / 3).epsilon(1e-12));
        CHECK(csv::to_double(m.rows[1][m.column("rmse")], "") == doctest::Approx(std::sqrt(0.02 / 3)).epsilon(1e-12));

        const auto e = csv::read_file((out / "error_correlation.csv").string());
        REQUIRE(e.rows.size() == 2);
        CHECK(csv::to_double(e.rows[0][1], "") == doctest::Approx(1.0));
        CHECK(csv::to_double(e.rows[0][2], "") == doctest::Approx(corr(ex, ey)).epsilon(1e-12));
        CHECK(csv::to_double(e.rows[1][1], "") == doctest::Approx(-0.32732683535398854).epsilon(1e-9));
    }

    RunConfig c;
    c.out_dir = scratch("validate_bad").string();
    CHECK_THROWS_AS(cmd_validate((kData / "estimates_wide.csv").string(), (kData / "truth_mismatch.csv").string(), c),
                    DataError);
}

TEST_CASE("errors: JSON payload and exit codes") {
    CHECK(exit_code(Error::Category::Config) == 2);
    CHECK(exit_code(Error::Category::Data) == 3);
    CHECK(exit_code(Error::Category::Numerical) == 4);
    const auto j = nlohmann::json::parse(
        error_json(Error::Category::Numerical, "2 areas failed", {{"a1", Error::Category::Numerical, "did not converge"}}));
    CHECK(j["error"]["category"] == "numerical");
    CHECK(j["error"]["areas"][0]["area"] == "a1");

    const auto dir = scratch("errors");
    auto c = single_area_run(dir);
    c.survey_path = (dir / "missing.csv").string();
    CHECK_THROWS_AS(cmd_estimate(c), DataError);
    c.survey_path.reset();
    CHECK_THROWS_AS(cmd_estimate(c), ConfigError);
}

TEST_CASE("svg: well-formed scatter with one circle per point") {
    std::ostringstream s;
    write_svg_scatter(s, "t <1>", {{"a", {{0.1, 0.2}, {0.3, 0.3}}}, {"b", {{0.5, 0.4}}}});
    const auto svg = s.str();
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("t &lt;1&gt;") != std::string::npos);
    std::size_t circles = 0;
    for (auto p = svg.find("<circle"); p != std::string::npos; p = svg.find("<circle", p + 1)) ++circles;
    CHECK(circles == 3);
}
