#include "fixtures.hpp"

#include "sae/csv.hpp"
#include "sae/data_model.hpp"
#include "sae/error.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

using namespace sae;

TEST_CASE("csv parses quotes, CRLF and a byte order mark") {
    const auto t = csv::parse("\xEF\xBB\xBF" "a,b\r\n\"x,1\",\"say \"\"hi\"\"\"\r\n\r\n2,3\n");
    REQUIRE(t.header == std::vector<std::string>{"a", "b"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][0] == "x,1");
    CHECK(t.rows[0][1] == "say \"hi\"");
    CHECK(t.lines[1] == 4);
    CHECK(t.column("b") == 1);
    CHECK(t.column("c") == csv::Table::npos);
}

TEST_CASE("csv rejects ragged rows and unterminated quotes") {
    CHECK_THROWS_AS(csv::parse("a,b\n1\n"), DataError);
    CHECK_THROWS_AS(csv::parse("a\n\"open\n"), DataError);
}

TEST_CASE("csv numbers round trip exactly") {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.678, -2.5}) CHECK(csv::to_double(csv::format_double(v), "v") == v);
    CHECK_THROWS_AS(csv::to_double("abc", "v"), DataError);
    CHECK_THROWS_AS(csv::to_double("inf", "v"), DataError);
    std::ostringstream out;
    csv::write_row(out, {"plain", "a,b", "q\"q"});
    CHECK(out.str() == "plain,\"a,b\",\"q\"\"q\"\n");
}

TEST_CASE("schema invariants") {
    using fixtures::var;
    CHECK_THROWS_AS(CovariateSchema({var("x", {"a"})}, {var("x", {"b"})}), ConfigError);
    CHECK_THROWS_AS(CovariateSchema({var("x", {"a", "a"})}, {}), ConfigError);
    CHECK_THROWS_AS(CovariateSchema({var("x", {})}, {}), ConfigError);
    const auto s = fixtures::small_schema();
    CHECK(s.n_profiles() == 4);
    const std::vector<Level> lv{1, 0};
    CHECK(s.profile_index(lv) == 2);
    CHECK(s.profile_levels(3) == std::vector<Level>{1, 1});
    CHECK(s.profile_label(1) == "sex=m;pid=r");
}

TEST_CASE("load_survey reads a four row file") {
    const auto t = csv::parse("area,outcome,sex,pid,interest\nA,1,m,d,lo\nA,0,f,r,hi\nB,1,f,d,hi\nB,0,m,r,lo\n");
    const auto s = survey_from_csv(t, fixtures::small_schema());
    CHECK(s.size() == 4);
    CHECK(!s.national_weight());
    CHECK(s.area()[2] == "B");
    CHECK(s.level(1, "pid") == 1);
    CHECK(s.xs(1, 0) == 1);
    CHECK(s.observed_areas() == std::vector<std::string>{"A", "B"});
}

TEST_CASE("load_survey reports an unknown level with row and column") {
    const auto t = csv::parse("area,outcome,sex,pid,interest\nA,1,m,d,lo\nA,0,x,r,hi\n");
    try {
        survey_from_csv(t, fixtures::small_schema(), "s.csv");
        FAIL("expected an error");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("sex") != std::string::npos);
        CHECK(msg.find("3") != std::string::npos);
    }
}

TEST_CASE("load_survey weights") {
    const auto schema = fixtures::small_schema();
    const auto ok = survey_from_csv(
        csv::parse("area,outcome,weight,sex,pid,interest\nA,1,1.0,m,d,lo\nB,0,1.0,f,r,hi\n"), schema);
    REQUIRE(ok.national_weight());
    CHECK((*ok.national_weight())[0] == 1.0);
    CHECK((*ok.national_weight())[1] == 1.0);
    CHECK_THROWS_AS(survey_from_csv(csv::parse("area,outcome,weight,sex,pid,interest\nA,1,0,m,d,lo\n"), schema),
                    DataError);
    CHECK_THROWS_AS(survey_from_csv(csv::parse("area,outcome,weight,sex,pid,interest\nA,1,-2,m,d,lo\n"), schema),
                    DataError);
}

TEST_CASE("load_survey rejects missing columns and values") {
    const auto schema = fixtures::small_schema();
    CHECK_THROWS_AS(survey_from_csv(csv::parse("outcome,sex,pid,interest\n1,m,d,lo\n"), schema), DataError);
    CHECK_THROWS_AS(survey_from_csv(csv::parse("area,sex,pid,interest\nA,m,d,lo\n"), schema), DataError);
    CHECK_THROWS_AS(survey_from_csv(csv::parse("area,outcome,sex,pid,interest\nA,1,m,d,\n"), schema), DataError);
    CHECK_THROWS_AS(survey_from_csv(csv::parse("area,outcome,sex,pid,interest\n,1,m,d,lo\n"), schema), DataError);
}

TEST_CASE("load_population sums duplicate cells") {
    const auto schema = fixtures::small_schema();
    const auto t = population_from_csv(
        csv::parse("area,count,sex,pid\nA,10,m,d\nA,5,m,d\nB,3,f,r\n"), schema);
    CHECK(t.count(0, 0) == 15.0);
    CHECK(t.count(3, 1) == 3.0);
    CHECK(t.count(1, 0) == 0.0);
    CHECK(t.total() == 18.0);
    CHECK_THROWS_AS(population_from_csv(csv::parse("area,count,sex,pid\nA,-1,m,d\n"), schema), DataError);
    CHECK_THROWS_AS(population_from_csv(csv::parse("count,sex,pid\n1,m,d\n"), schema), DataError);
    CHECK_THROWS_AS(population_from_csv(csv::parse("area,count,sex,pid\n"), schema), DataError);
    CHECK_THROWS_AS(population_from_csv(csv::parse(""), schema), DataError);
}

TEST_CASE("population round trip through write") {
    const auto schema = fixtures::small_schema();
    const PopulationTable t(schema, {"A", "B"}, {0.1, 2.5, 1e6 / 3.0, 0.0, 7.0, 8.0, 1.0, 1.0 / 7.0});
    std::ostringstream out;
    t.write(out);
    const auto back = population_from_csv(csv::parse(out.str()), schema);
    REQUIRE(back.areas() == t.areas());
    for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t a = 0; a < 2; ++a) CHECK(back.count(p, a) == t.count(p, a));
}

TEST_CASE("population area shares") {
    const CovariateSchema schema({fixtures::var("g", {"p1", "p2"})}, {});
    SUBCASE("30/10 split") {
        const auto s = population_area_shares(PopulationTable(schema, {"A", "B"}, {30, 10, 1, 1}));
        CHECK(s.p(0, 0) == doctest::Approx(0.75).epsilon(1e-15));
        CHECK(s.p(0, 1) == doctest::Approx(0.25).epsilon(1e-15));
    }
    SUBCASE("single area") {
        const auto s = population_area_shares(PopulationTable(schema, {"A"}, {3, 9}));
        CHECK(s.p(0, 0) == 1.0);
        CHECK(s.p(1, 0) == 1.0);
        CHECK(s.marginal[0] == 1.0);
    }
    SUBCASE("ten unit table") {
        const auto s = population_area_shares(PopulationTable(schema, {"A", "B"}, {2, 2, 6, 0}));
        CHECK(s.marginal[0] == doctest::Approx(0.8).epsilon(1e-15));
        CHECK(s.marginal[1] == doctest::Approx(0.2).epsilon(1e-15));
        CHECK(s.p(1, 1) == 0.0);
    }
    SUBCASE("zero profile flagged") {
        const auto s = population_area_shares(PopulationTable(schema, {"A", "B"}, {2, 2, 0, 0}));
        CHECK(s.zero_profiles == std::vector<std::size_t>{1});
        CHECK(!s.defined[1]);
    }
    CHECK_THROWS_AS(PopulationTable(schema, {"A", "B"}, {1, 0, 1, 0}), DataError);
}

TEST_CASE("area shares sum to one on random tables") {
    const auto schema = fixtures::small_schema();
    std::uint64_t state = 7;
    auto next = [&] {
        state = state * 6364136223846793005ULL + 1442695040888963407ULL;
        return static_cast<double>(state >> 40) / 16777216.0;
    };
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> counts(4 * 3);
        for (auto& c : counts) c = next() < 0.2 ? 0.0 : next() * 1000.0;
        for (std::size_t a = 0; a < 3; ++a) counts[a] += 1.0;
        const auto s = population_area_shares(PopulationTable(schema, {"x", "y", "z"}, counts));
        CHECK(std::abs(std::accumulate(s.marginal.begin(), s.marginal.end(), 0.0) - 1.0) <= 1e-12);
        for (std::size_t p = 0; p < 4; ++p) {
            if (!s.defined[p]) continue;
            CHECK(std::abs(s.p(p, 0) + s.p(p, 1) + s.p(p, 2) - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("overlap report") {
    const CovariateSchema schema({fixtures::var("g", {"p1", "p2"})}, {});
    const PopulationTable table(schema, {"A", "B"}, {5, 5, 5, 5});
    using fixtures::Row;
    SUBCASE("full coverage") {
        const auto s = fixtures::survey(schema, {{"A", 1, {0}, {}}, {"A", 0, {1}, {}}, {"B", 1, {0}, {}}, {"B", 0, {1}, {}}});
        CHECK(check_overlap(s, table).empty());
    }
    SUBCASE("profile absent everywhere") {
        const auto s = fixtures::survey(schema, {{"A", 1, {0}, {}}, {"B", 0, {0}, {}}});
        const auto r = check_overlap(s, table);
        CHECK(r.sampling_overlap_concern);
        CHECK(r.area_overlap_concern);
        CHECK(r.missing_by_area[0] == std::vector<std::size_t>{1});
        CHECK(r.missing_by_area[1] == std::vector<std::size_t>{1});
        REQUIRE(r.profile_gaps.size() == 1);
        CHECK(r.profile_gaps[0].profile == 1);
    }
    SUBCASE("profile only in one area") {
        const auto s = fixtures::survey(schema, {{"A", 1, {0}, {}}, {"A", 0, {1}, {}}, {"B", 0, {1}, {}}});
        const auto r = check_overlap(s, table);
        CHECK(r.area_overlap_concern);
        REQUIRE(r.profile_gaps.size() == 1);
        CHECK(r.profile_gaps[0].profile == 0);
        CHECK(r.profile_gaps[0].missing_areas == std::vector<std::size_t>{1});
    }
}

TEST_CASE("align_areas names the unknown label") {
    const CovariateSchema schema({fixtures::var("g", {"p1", "p2"})}, {});
    const PopulationTable table(schema, {"A", "B"}, {5, 5, 5, 5});
    const auto s = fixtures::survey(schema, {{"A", 1, {0}, {}}, {"Q", 0, {1}, {}}});
    try {
        align_areas(s, table);
        FAIL("expected an error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("Q") != std::string::npos);
    }
}

TEST_CASE("select and with_outcome") {
    const auto schema = fixtures::tiny_schema();
    const auto s = fixtures::survey(schema, {{"A", 1, {0}, {1}}, {"B", 0, {1}, {0}}}, std::vector<double>{2, 3});
    const std::vector<std::size_t> rows{1, 1, 0};
    const auto t = s.select(rows);
    CHECK(t.size() == 3);
    CHECK(t.area()[0] == "B");
    CHECK((*t.national_weight())[2] == 2.0);
    CHECK(t.xs(2, 0) == 1);
    CHECK_THROWS_AS(s.with_outcome({1.0}), DataError);
}
