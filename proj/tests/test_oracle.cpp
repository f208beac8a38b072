#include "sae/error.hpp"
#include "sae/estimators.hpp"
#include "sae/metrics.hpp"
#include "sae/oracle.hpp"
#include "sae/simulation.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace sae;
using namespace sae::oracle;

namespace {

PopulationSpec spec_for(std::uint64_t seed, std::size_t areas = 3) {
    PopulationSpec s;
    s.xp_levels = {2, 2};
    s.xs_levels = {2};
    s.n_areas = areas;
    s.seed = seed;
    return s;
}

// Second enumerator: walks the flat count vector and decodes indices.
std::vector<double> enumerate_means(const DiscretePopulation& pop) {
    const auto J = pop.n_areas(), S = pop.n_xs();
    std::vector<double> num(J, 0.0), den(J, 0.0);
    const auto& c = pop.counts();
    for (std::size_t k = 0; k < c.size(); ++k) {
        const std::size_t a = k % J, s = (k / J) % S, p = k / (J * S);
        num[a] += c[k] * pop.outcome(p, s, a);
        den[a] += c[k];
    }
    for (std::size_t a = 0; a < J; ++a) num[a] /= den[a];
    return num;
}

} // namespace

TEST_CASE("population generation") {
    const auto a = generate_population(spec_for(4));
    const auto b = generate_population(spec_for(4));
    CHECK(a.counts() == b.counts());
    for (std::size_t p = 0; p < a.n_xp(); ++p)
        for (std::size_t s = 0; s < a.n_xs(); ++s) {
            CHECK(a.base_outcome(p, s) == b.base_outcome(p, s));
            CHECK(a.outcome(p, s, 0) == a.outcome(p, s, 2));
        }
    CHECK(generate_population(spec_for(5)).counts() != a.counts());
    CHECK(a.n_xp() == 4);
    CHECK(a.schema().population_vars().size() == 2);
    CHECK(a.population_table().total() == doctest::Approx(std::accumulate(a.counts().begin(), a.counts().end(), 0.0)));

    PopulationSpec big;
    big.xp_levels = {100, 100};
    big.xs_levels = {10};
    big.n_areas = 11;
    CHECK_THROWS_AS(generate_population(big), ConfigError);
    auto bad = spec_for(1);
    bad.gamma_shift = {0.1};
    CHECK_THROWS_AS(generate_population(bad), ConfigError);
}

TEST_CASE("true area means") {
    // one area, two cells with counts (1, 3) and means (0, 1)
    const DiscretePopulation pop({2}, {1}, 1, {1, 3}, {0, 1}, {1, 1});
    CHECK(true_area_means(pop)[0] == 0.75);
    const DiscretePopulation flat({2}, {2}, 2, {1, 2, 3, 4, 5, 6, 7, 8}, {0.4, 0.4, 0.4, 0.4}, {0.5, 0.5, 0.5, 0.5});
    for (double t : true_area_means(flat)) CHECK(t == doctest::Approx(0.4).epsilon(1e-15));
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto p = generate_population(spec_for(seed, 4));
        const auto x = true_area_means(p), y = enumerate_means(p);
        for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(x[j] - y[j]) <= 1e-14);
    }
    const DiscretePopulation empty({1}, {1}, 2, {1, 0}, {0.5}, {1, 1});
    CHECK_THROWS_AS(true_area_means(empty), DataError);
}

TEST_CASE("identification formula equals the area means") {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        auto spec = spec_for(seed, seed % 2 ? 2 : 5);
        spec.xp_levels = {2, 3};
        spec.xs_levels = {2, 2};
        const auto pop = generate_population(spec);
        const auto truth = true_area_means(pop);
        const auto id = evaluate_identification(pop);
        for (std::size_t j = 0; j < truth.size(); ++j) CHECK(std::abs(id[j] - truth[j]) <= 1e-10);
    }
}

TEST_CASE("identification with one area and uniform sampling") {
    auto spec = spec_for(3, 1);
    spec.inclusion_low = spec.inclusion_high = 0.2;
    const auto pop = generate_population(spec);
    double num = 0, den = 0;
    for (std::size_t p = 0; p < pop.n_xp(); ++p)
        for (std::size_t s = 0; s < pop.n_xs(); ++s) {
            num += pop.count(p, s, 0) * pop.base_outcome(p, s);
            den += pop.count(p, s, 0);
        }
    CHECK(evaluate_identification(pop, 0) == doctest::Approx(num / den).epsilon(1e-14));
}

TEST_CASE("identification discrepancy grows with the area shift") {
    const auto base = generate_population(spec_for(8, 3));
    double previous = 0.0;
    for (double g : {0.0, 0.02, 0.05, 0.1, 0.2}) {
        const auto pop = with_shift(base, {g, 0.0, 0.0});
        const double gap = std::abs(evaluate_identification(pop, 0) - true_area_means(pop)[0]);
        if (g == 0.0) CHECK(gap <= 1e-10);
        else CHECK(gap > previous);
        previous = gap;
    }
}

TEST_CASE("decomposition sums to the identification value") {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        const auto pop = generate_population(spec_for(seed, 2 + seed % 4));
        const auto id = evaluate_identification(pop);
        const auto dec = evaluate_decomposition(pop);
        for (std::size_t j = 0; j < id.size(); ++j) {
            CHECK(std::abs(dec[j].direct + dec[j].indirect - id[j]) <= 1e-10);
            CHECK(dec[j].direct > 0.0);
            CHECK(dec[j].indirect > 0.0);
        }
    }
}

TEST_CASE("decomposition trivial and symmetric cases") {
    SUBCASE("single area") {
        const auto pop = generate_population(spec_for(2, 1));
        const auto d = evaluate_decomposition(pop, 0);
        CHECK(d.indirect == 0.0);
        CHECK(d.direct == doctest::Approx(true_area_means(pop)[0]).epsilon(1e-12));
    }
    SUBCASE("all mass in the area") {
        // area 2 is empty, so every sampled unit is in area 1
        const DiscretePopulation pop({2}, {2}, 2, {5, 0, 3, 0, 2, 0, 7, 0}, {0.2, 0.4, 0.6, 0.8}, {0.3, 0.3, 0.6, 0.6});
        const auto d = evaluate_decomposition(pop, 0);
        CHECK(d.indirect == 0.0);
        const double mean = (5 * 0.2 + 3 * 0.4 + 2 * 0.6 + 7 * 0.8) / 17.0;
        CHECK(d.direct == doctest::Approx(mean).epsilon(1e-12));
        CHECK_THROWS_AS(evaluate_decomposition(pop, 1), DataError);
    }
    SUBCASE("mirrored areas") {
        // area 2 is area 1 with the survey-only covariate flipped, and the
        // outcome law is symmetric in that covariate
        const std::vector<double> c1{4, 9, 2, 6};  // (p, s) counts in area 1
        std::vector<double> counts(8);
        for (std::size_t p = 0; p < 2; ++p)
            for (std::size_t s = 0; s < 2; ++s) {
                counts[(p * 2 + s) * 2 + 0] = c1[p * 2 + s];
                counts[(p * 2 + s) * 2 + 1] = c1[p * 2 + (1 - s)];
            }
        const DiscretePopulation pop({2}, {2}, 2, counts, {0.3, 0.3, 0.7, 0.7}, {0.2, 0.2, 0.5, 0.5});
        const auto d = evaluate_decomposition(pop);
        CHECK(d[0].indirect == doctest::Approx(d[1].indirect).epsilon(1e-14));
        CHECK(d[0].direct == doctest::Approx(d[1].direct).epsilon(1e-14));
    }
}

TEST_CASE("lemma identities") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto r = lemma_property_check(seed);
        CHECK(r.passed);
        CHECK(r.error_a <= 1e-12);
        CHECK(r.error_b <= 1e-12);
    }
    SUBCASE("independent variables") {
        FiniteLaw law{{1, 2}, {0, 5}, {-1, 1}, {}};
        const double px[2]{0.3, 0.7}, py[2]{0.4, 0.6}, pz[2]{0.5, 0.5}, pd[2]{0.2, 0.8};
        for (int x = 0; x < 2; ++x)
            for (int y = 0; y < 2; ++y)
                for (int z = 0; z < 2; ++z)
                    for (int d = 0; d < 2; ++d) law.prob.push_back(px[x] * py[y] * pz[z] * pd[d]);
        CHECK(lemma_property_check(law).passed);
    }
    SUBCASE("D always one") {
        auto law = random_finite_law(7);
        for (std::size_t k = 0; k < law.prob.size(); k += 2) {
            law.prob[k + 1] += law.prob[k];
            law.prob[k] = 0.0;
        }
        CHECK(lemma_property_check(law).passed);
    }
}

TEST_CASE("draw_sample") {
    const auto pop = generate_population(spec_for(6, 3));
    const auto a = draw_sample(pop, 500, 1);
    const auto b = draw_sample(pop, 500, 1);
    CHECK(std::vector<double>(a.survey.outcome().begin(), a.survey.outcome().end()) ==
          std::vector<double>(b.survey.outcome().begin(), b.survey.outcome().end()));
    CHECK(a.survey.area() == b.survey.area());
    REQUIRE(a.survey.national_weight());
    // weight = 1 / Pr(S = 1 | X^P)
    for (std::size_t i = 0; i < 20; ++i) {
        const auto p = a.survey.profile(i);
        double mass = 0, sampled = 0;
        for (std::size_t s = 0; s < pop.n_xs(); ++s)
            for (std::size_t j = 0; j < pop.n_areas(); ++j) {
                mass += pop.count(p, s, j);
                sampled += pop.count(p, s, j) * pop.inclusion(p, j);
            }
        CHECK((*a.survey.national_weight())[i] == doctest::Approx(mass / sampled).epsilon(1e-14));
    }
    const double total = std::accumulate(pop.counts().begin(), pop.counts().end(), 0.0);
    CHECK(draw_sample(pop, static_cast<std::size_t>(total) * 2, 3).survey.size() == static_cast<std::size_t>(total) * 2);
    CHECK_THROWS_AS(draw_sample(pop, 0, 1), ConfigError);
}

TEST_CASE("uniform sampling reproduces population cell shares") {
    auto spec = spec_for(9, 2);
    spec.inclusion_low = spec.inclusion_high = 0.1;
    const auto pop = generate_population(spec);
    const std::size_t n = 50000;
    const auto sample = draw_sample(pop, n, 17);
    const auto J = pop.n_areas(), S = pop.n_xs();
    std::vector<double> observed(pop.counts().size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t a = sample.survey.area()[i] == "a1" ? 0 : 1;
        observed[(sample.survey.profile(i) * S + sample.survey.xs(i, 0)) * J + a] += 1;
    }
    const double total = std::accumulate(pop.counts().begin(), pop.counts().end(), 0.0);
    double chi2 = 0.0;
    for (std::size_t k = 0; k < observed.size(); ++k) {
        const double expected = n * pop.counts()[k] / total;
        chi2 += (observed[k] - expected) * (observed[k] - expected) / expected;
    }
    // 15 degrees of freedom; the 0.999 quantile is 37.7
    CHECK(chi2 < 37.7);
}

TEST_CASE("synthetic estimate is within Monte Carlo error of the truth at n = 20000") {
    const auto pop = generate_population(spec_for(10, 3));
    const auto table = pop.population_table();
    const auto sample = draw_sample(pop, 20000, 33);
    const auto truth = true_area_means(pop);
    // saturated membership models, so both are correctly specified
    EstimatorConfig config;
    config.interactions = {{"p1", "p2"}, {"p1", "s1"}, {"p2", "s1"}, {"p1", "p2", "s1"}};
    const auto out = estimate_all_areas(sample.survey, table, config);
    for (std::size_t j = 0; j < 3; ++j) {
        REQUIRE(out[j].synthetic);
        CHECK(std::abs(out[j].synthetic->estimate - truth[j]) < 3 * out[j].synthetic->se);
    }
}

TEST_CASE("fit metrics") {
    const std::vector<double> t{0.5, 0.5}, e{0.6, 0.4};
    const auto r = fit_metrics(e, t);
    CHECK(r.rmse == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(r.mae == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(std::abs(r.mean_error) < 1e-16);
    CHECK(!r.correlation);

    const std::vector<double> truth{0.2, 0.5, 0.7, 0.4};
    std::vector<double> shifted;
    for (double v : truth) shifted.push_back(v + 0.05);
    const auto s = fit_metrics(shifted, truth);
    CHECK(s.rmse == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(s.mae == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(s.mean_error == doctest::Approx(0.05).epsilon(1e-12));
    REQUIRE(s.correlation);
    CHECK(*s.correlation == doctest::Approx(1.0).epsilon(1e-12));

    const auto same = fit_metrics(truth, truth);
    CHECK(same.rmse == 0.0);
    CHECK(same.mae == 0.0);
    CHECK(same.mean_error == 0.0);
    CHECK(*same.correlation == doctest::Approx(1.0).epsilon(1e-12));

    // hand values: errors (0.1, -0.1, 0.2, 0)
    const std::vector<double> est{0.3, 0.4, 0.9, 0.4};
    const auto h = fit_metrics(est, truth);
    CHECK(h.rmse == doctest::Approx(std::sqrt(0.06 / 4)).epsilon(1e-12));
    CHECK(h.mae == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(h.mean_error == doctest::Approx(0.05).epsilon(1e-12));
    // est mean 0.5, truth mean 0.45: sxy = 0.15, sxx = 0.22, syy = 0.13
    CHECK(*h.correlation == doctest::Approx(0.15 / std::sqrt(0.22 * 0.13)).epsilon(1e-12));

    CHECK_THROWS_AS(fit_metrics(std::vector<double>{1.0}, std::vector<double>{1.0}), DataError);
    CHECK_THROWS_AS(pearson_correlation(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), NumericalError);
}

TEST_CASE("rmse bounds the mean error") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.1, 0.3);
    for (int k = 0; k < 100; ++k) {
        std::vector<double> e(10), t(10);
        for (int i = 0; i < 10; ++i) {
            t[i] = n(rng);
            e[i] = n(rng);
        }
        const auto r = fit_metrics(e, t);
        CHECK(r.rmse >= std::abs(r.mean_error));
    }
}

TEST_CASE("error correlation") {
    const std::vector<double> truth{0.1, 0.4, 0.3, 0.8}, a{0.2, 0.35, 0.5, 0.7};
    CHECK(error_correlation(a, a, truth) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> mirror;
    for (std::size_t i = 0; i < 4; ++i) mirror.push_back(truth[i] + (truth[i] - a[i]));
    CHECK(error_correlation(a, mirror, truth) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK_THROWS_AS(error_correlation(std::vector<double>{1, 2}, std::vector<double>{1, 2}, std::vector<double>{0, 0}),
                    DataError);
    CHECK_THROWS_AS(error_correlation(truth, a, truth), NumericalError);

    std::mt19937_64 rng(12);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::vector<double> t(1000), x(1000), y(1000);
    for (int i = 0; i < 1000; ++i) {
        t[i] = 0.5 + noise(rng);
        x[i] = t[i] + noise(rng);
        y[i] = t[i] + noise(rng);
    }
    CHECK(std::abs(error_correlation(x, y, t)) < 0.1);
}

TEST_CASE("simulation harness is deterministic and independent of threads") {
    SimulationSpec spec;
    spec.population = spec_for(11, 3);
    spec.sample_sizes = {300, 900};
    spec.replicates = 3;
    spec.seed = 5;
    const auto a = run_simulation(spec);
    spec.threads = 3;
    const auto b = run_simulation(spec);
    REQUIRE(a.runs.size() == 6);
    for (std::size_t k = 0; k < 6; ++k) {
        CHECK(a.runs[k].synthetic == b.runs[k].synthetic);
        CHECK(a.runs[k].sample_size == spec.sample_sizes[k / 3]);
    }
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(a.identification[j] - a.truth[j]) <= 1e-10);
    spec.seed = 6;
    const auto c = run_simulation(spec);
    CHECK(c.truth == a.truth);
    CHECK(c.runs[0].synthetic != a.runs[0].synthetic);
    CHECK(median({3.0, 1.0, 2.0, NAN}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}
