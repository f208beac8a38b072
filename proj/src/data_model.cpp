#include "sae/data_model.hpp"

#include "sae/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

namespace sae {

namespace {

constexpr std::size_t kMaxProfiles = 10'000'000;

void validate_variable(const Variable& v) {
    if (v.name.empty()) throw ConfigError("covariate with empty name");
    if (v.levels.empty()) throw ConfigError("covariate '" + v.name + "' has no levels");
    std::set<std::string> seen;
    for (const auto& l : v.levels)
        if (!seen.insert(l).second)
            throw ConfigError("covariate '" + v.name + "' declares level '" + l + "' twice");
}

std::string row_ref(std::string_view source, std::size_t line) {
    return std::string(source) + ":" + std::to_string(line);
}

} // namespace

std::optional<Level> Variable::find_level(std::string_view level) const {
    for (std::size_t i = 0; i < levels.size(); ++i)
        if (levels[i] == level) return static_cast<Level>(i);
    return std::nullopt;
}

CovariateSchema::CovariateSchema(std::vector<Variable> population_vars, std::vector<Variable> survey_vars,
                                 std::string outcome_name, std::string area_name, std::string weight_name)
    : population_vars_(std::move(population_vars)),
      survey_vars_(std::move(survey_vars)),
      outcome_name_(std::move(outcome_name)),
      area_name_(std::move(area_name)),
      weight_name_(std::move(weight_name)) {
    std::set<std::string> names{outcome_name_, area_name_, weight_name_};
    if (names.size() != 3) throw ConfigError("outcome, area and weight column names must differ");
    for (const auto* vars : {&population_vars_, &survey_vars_}) {
        for (const auto& v : *vars) {
            validate_variable(v);
            if (!names.insert(v.name).second)
                throw ConfigError("variable '" + v.name + "' declared more than once or clashes with a reserved column");
        }
    }
    for (const auto& v : population_vars_) {
        n_profiles_ *= v.levels.size();
        if (n_profiles_ > kMaxProfiles)
            throw ConfigError("population covariates define more than 10^7 profiles");
    }
}

std::optional<std::pair<Role, std::size_t>> CovariateSchema::locate(std::string_view name) const {
    for (std::size_t i = 0; i < population_vars_.size(); ++i)
        if (population_vars_[i].name == name) return std::pair{Role::Population, i};
    for (std::size_t i = 0; i < survey_vars_.size(); ++i)
        if (survey_vars_[i].name == name) return std::pair{Role::Survey, i};
    return std::nullopt;
}

const Variable& CovariateSchema::variable(std::string_view name) const {
    auto loc = locate(name);
    if (!loc) throw ConfigError("unknown variable '" + std::string(name) + "'");
    return loc->first == Role::Population ? population_vars_[loc->second] : survey_vars_[loc->second];
}

std::size_t CovariateSchema::profile_index(std::span<const Level> levels) const {
    std::size_t index = 0;
    for (std::size_t v = 0; v < population_vars_.size(); ++v)
        index = index * population_vars_[v].levels.size() + levels[v];
    return index;
}

std::vector<Level> CovariateSchema::profile_levels(std::size_t profile) const {
    std::vector<Level> levels(population_vars_.size());
    for (std::size_t v = population_vars_.size(); v-- > 0;) {
        const auto k = population_vars_[v].levels.size();
        levels[v] = static_cast<Level>(profile % k);
        profile /= k;
    }
    return levels;
}

std::string CovariateSchema::profile_label(std::size_t profile) const {
    const auto levels = profile_levels(profile);
    std::string out;
    for (std::size_t v = 0; v < levels.size(); ++v) {
        if (v) out += ';';
        out += population_vars_[v].name + '=' + population_vars_[v].levels[levels[v]];
    }
    return out.empty() ? "(all)" : out;
}

SurveyDataset::SurveyDataset(CovariateSchema schema, std::vector<double> outcome, std::vector<std::string> area,
                             std::vector<Level> xp, std::vector<Level> xs,
                             std::optional<std::vector<double>> national_weight)
    : schema_(std::move(schema)),
      outcome_(std::move(outcome)),
      area_(std::move(area)),
      xp_(std::move(xp)),
      xs_(std::move(xs)),
      national_weight_(std::move(national_weight)) {
    const std::size_t n = outcome_.size();
    const std::size_t np = schema_.population_vars().size();
    const std::size_t ns = schema_.survey_vars().size();
    if (n == 0) throw DataError("survey has no respondents");
    if (area_.size() != n || xp_.size() != n * np || xs_.size() != n * ns)
        throw DataError("survey columns have inconsistent lengths");
    if (national_weight_ && national_weight_->size() != n)
        throw DataError("national weight column length differs from respondent count");
    profile_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(outcome_[i])) throw DataError("respondent " + std::to_string(i) + ": non-finite outcome");
        if (area_[i].empty()) throw DataError("respondent " + std::to_string(i) + ": missing area");
        for (std::size_t v = 0; v < np; ++v)
            if (xp_[i * np + v] >= schema_.population_vars()[v].levels.size())
                throw DataError("respondent " + std::to_string(i) + ": level out of range for '" +
                                schema_.population_vars()[v].name + "'");
        for (std::size_t v = 0; v < ns; ++v)
            if (xs_[i * ns + v] >= schema_.survey_vars()[v].levels.size())
                throw DataError("respondent " + std::to_string(i) + ": level out of range for '" +
                                schema_.survey_vars()[v].name + "'");
        if (national_weight_) {
            const double w = (*national_weight_)[i];
            if (!(w > 0.0) || !std::isfinite(w))
                throw DataError("respondent " + std::to_string(i) + ": national weight must be positive and finite");
        }
        profile_[i] = schema_.profile_index(std::span<const Level>(xp_.data() + i * np, np));
    }
}

Level SurveyDataset::level(std::size_t row, std::string_view name) const {
    auto loc = schema_.locate(name);
    if (!loc) throw ConfigError("unknown variable '" + std::string(name) + "'");
    return loc->first == Role::Population ? xp(row, loc->second) : xs(row, loc->second);
}

std::vector<std::string> SurveyDataset::observed_areas() const {
    std::vector<std::string> out;
    std::set<std::string_view> seen;
    for (const auto& a : area_)
        if (seen.insert(a).second) out.push_back(a);
    return out;
}

SurveyDataset SurveyDataset::select(std::span<const std::size_t> rows) const {
    const std::size_t np = schema_.population_vars().size();
    const std::size_t ns = schema_.survey_vars().size();
    std::vector<double> y;
    std::vector<std::string> a;
    std::vector<Level> p, s;
    std::optional<std::vector<double>> w;
    if (national_weight_) w.emplace();
    y.reserve(rows.size());
    a.reserve(rows.size());
    p.reserve(rows.size() * np);
    s.reserve(rows.size() * ns);
    for (auto r : rows) {
        if (r >= size()) throw DataError("row selection out of range");
        y.push_back(outcome_[r]);
        a.push_back(area_[r]);
        p.insert(p.end(), xp_.begin() + r * np, xp_.begin() + (r + 1) * np);
        s.insert(s.end(), xs_.begin() + r * ns, xs_.begin() + (r + 1) * ns);
        if (w) w->push_back((*national_weight_)[r]);
    }
    return SurveyDataset(schema_, std::move(y), std::move(a), std::move(p), std::move(s), std::move(w));
}

SurveyDataset SurveyDataset::with_outcome(std::vector<double> outcome) const {
    return SurveyDataset(schema_, std::move(outcome), area_, xp_, xs_, national_weight_);
}

SurveyDataset SurveyDataset::with_national_weight(std::optional<std::vector<double>> weight) const {
    return SurveyDataset(schema_, outcome_, area_, xp_, xs_, std::move(weight));
}

PopulationTable::PopulationTable(CovariateSchema schema, std::vector<std::string> areas, std::vector<double> counts)
    : schema_(std::move(schema)), areas_(std::move(areas)), counts_(std::move(counts)) {
    if (areas_.empty()) throw DataError("population table has no areas");
    std::set<std::string> seen;
    for (const auto& a : areas_)
        if (a.empty() || !seen.insert(a).second) throw DataError("population area labels must be unique and non-empty");
    if (counts_.size() != schema_.n_profiles() * areas_.size())
        throw DataError("population count array has the wrong size");
    area_totals_.assign(areas_.size(), 0.0);
    for (std::size_t p = 0; p < schema_.n_profiles(); ++p) {
        for (std::size_t j = 0; j < areas_.size(); ++j) {
            const double c = counts_[p * areas_.size() + j];
            if (!(c >= 0.0) || !std::isfinite(c))
                throw DataError("population count for " + schema_.profile_label(p) + " in area '" + areas_[j] +
                                "' must be finite and nonnegative");
            area_totals_[j] += c;
        }
    }
    for (std::size_t j = 0; j < areas_.size(); ++j) {
        if (!(area_totals_[j] > 0.0)) throw DataError("population area '" + areas_[j] + "' has zero total count");
        total_ += area_totals_[j];
    }
}

std::optional<std::size_t> PopulationTable::area_index(std::string_view label) const {
    for (std::size_t j = 0; j < areas_.size(); ++j)
        if (areas_[j] == label) return j;
    return std::nullopt;
}

void PopulationTable::write(std::ostream& out) const {
    std::vector<std::string> header{schema_.area_name(), "count"};
    for (const auto& v : schema_.population_vars()) header.push_back(v.name);
    csv::write_row(out, header);
    for (std::size_t p = 0; p < n_profiles(); ++p) {
        const auto levels = schema_.profile_levels(p);
        for (std::size_t j = 0; j < areas_.size(); ++j) {
            const double c = count(p, j);
            if (c == 0.0) continue;
            std::vector<std::string> row{areas_[j], csv::format_double(c)};
            for (std::size_t v = 0; v < levels.size(); ++v)
                row.push_back(schema_.population_vars()[v].levels[levels[v]]);
            csv::write_row(out, row);
        }
    }
}

AreaShares population_area_shares(const PopulationTable& table) {
    AreaShares shares;
    const std::size_t J = table.n_areas();
    shares.n_areas = J;
    shares.marginal.resize(J);
    for (std::size_t j = 0; j < J; ++j) shares.marginal[j] = table.area_total(j) / table.total();
    shares.conditional.assign(table.n_profiles() * J, 0.0);
    shares.defined.assign(table.n_profiles(), false);
    for (std::size_t p = 0; p < table.n_profiles(); ++p) {
        double row_total = 0.0;
        for (std::size_t j = 0; j < J; ++j) row_total += table.count(p, j);
        if (!(row_total > 0.0)) {
            shares.zero_profiles.push_back(p);
            continue;
        }
        shares.defined[p] = true;
        for (std::size_t j = 0; j < J; ++j) shares.conditional[p * J + j] = table.count(p, j) / row_total;
    }
    return shares;
}

std::vector<std::size_t> align_areas(const SurveyDataset& survey, const PopulationTable& table) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t j = 0; j < table.n_areas(); ++j) index.emplace(table.areas()[j], j);
    std::vector<std::size_t> out(survey.size());
    for (std::size_t i = 0; i < survey.size(); ++i) {
        auto it = index.find(survey.area()[i]);
        if (it == index.end())
            throw DataError("respondent " + std::to_string(i) + ": area '" + survey.area()[i] +
                            "' is not in the population table");
        out[i] = it->second;
    }
    return out;
}

OverlapReport check_overlap(const SurveyDataset& survey, const PopulationTable& table) {
    const auto areas = align_areas(survey, table);
    const std::size_t J = table.n_areas();
    const std::size_t P = table.n_profiles();
    std::vector<std::size_t> seen(P * J, 0);
    for (std::size_t i = 0; i < survey.size(); ++i) ++seen[survey.profile(i) * J + areas[i]];

    OverlapReport report;
    report.missing_by_area.resize(J);
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t p = 0; p < P; ++p)
            if (table.count(p, j) > 0.0 && seen[p * J + j] == 0) report.missing_by_area[j].push_back(p);

    for (std::size_t p = 0; p < P; ++p) {
        double mass = 0.0;
        for (std::size_t j = 0; j < J; ++j) mass += table.count(p, j);
        if (mass == 0.0) continue;
        ProfileGap gap{p, {}};
        for (std::size_t j = 0; j < J; ++j)
            if (seen[p * J + j] == 0) gap.missing_areas.push_back(j);
        if (!gap.missing_areas.empty()) report.profile_gaps.push_back(std::move(gap));
    }
    report.sampling_overlap_concern =
        std::any_of(report.missing_by_area.begin(), report.missing_by_area.end(),
                    [](const auto& v) { return !v.empty(); });
    report.area_overlap_concern = !report.profile_gaps.empty();
    return report;
}

SurveyDataset survey_from_csv(const csv::Table& table, const CovariateSchema& schema, std::string_view source) {
    const auto area_col = table.column(schema.area_name());
    const auto outcome_col = table.column(schema.outcome_name());
    const auto weight_col = table.column(schema.weight_name());
    if (area_col == csv::Table::npos)
        throw DataError(std::string(source) + ": missing area column '" + schema.area_name() + "'");
    if (outcome_col == csv::Table::npos)
        throw DataError(std::string(source) + ": missing outcome column '" + schema.outcome_name() + "'");

    std::vector<std::size_t> pcols, scols;
    for (const auto& v : schema.population_vars()) {
        auto c = table.column(v.name);
        if (c == csv::Table::npos) throw DataError(std::string(source) + ": missing covariate column '" + v.name + "'");
        pcols.push_back(c);
    }
    for (const auto& v : schema.survey_vars()) {
        auto c = table.column(v.name);
        if (c == csv::Table::npos) throw DataError(std::string(source) + ": missing covariate column '" + v.name + "'");
        scols.push_back(c);
    }
    const std::size_t expected = 2 + (weight_col != csv::Table::npos) + pcols.size() + scols.size();
    if (table.header.size() != expected) {
        for (const auto& h : table.header)
            if (h != schema.area_name() && h != schema.outcome_name() && h != schema.weight_name() &&
                !schema.locate(h))
                throw DataError(std::string(source) + ": unexpected column '" + h + "'");
        throw DataError(std::string(source) + ": duplicate header columns");
    }

    const std::size_t n = table.rows.size();
    std::vector<double> y(n);
    std::vector<std::string> area(n);
    std::vector<Level> xp, xs;
    xp.reserve(n * pcols.size());
    xs.reserve(n * scols.size());
    std::optional<std::vector<double>> weight;
    if (weight_col != csv::Table::npos) weight.emplace(n);

    auto read_level = [&](const Variable& v, const std::string& field, std::size_t r) {
        if (field.empty())
            throw DataError(row_ref(source, table.lines[r]) + ": missing value for '" + v.name + "'");
        auto level = v.find_level(field);
        if (!level)
            throw DataError(row_ref(source, table.lines[r]) + ": unknown level '" + field + "' for column '" +
                            v.name + "'");
        return *level;
    };

    for (std::size_t r = 0; r < n; ++r) {
        const auto& row = table.rows[r];
        const auto where = row_ref(source, table.lines[r]);
        if (row[area_col].empty()) throw DataError(where + ": missing area");
        if (row[outcome_col].empty()) throw DataError(where + ": missing outcome");
        area[r] = row[area_col];
        y[r] = csv::to_double(row[outcome_col], where + " outcome");
        if (weight) {
            const double w = csv::to_double(row[weight_col], where + " weight");
            if (!(w > 0.0)) throw DataError(where + ": weight must be strictly positive");
            (*weight)[r] = w;
        }
        for (std::size_t v = 0; v < pcols.size(); ++v)
            xp.push_back(read_level(schema.population_vars()[v], row[pcols[v]], r));
        for (std::size_t v = 0; v < scols.size(); ++v)
            xs.push_back(read_level(schema.survey_vars()[v], row[scols[v]], r));
    }
    return SurveyDataset(schema, std::move(y), std::move(area), std::move(xp), std::move(xs), std::move(weight));
}

SurveyDataset load_survey(const std::string& path, const CovariateSchema& schema) {
    return survey_from_csv(csv::read_file(path), schema, path);
}

PopulationTable population_from_csv(const csv::Table& table, const CovariateSchema& schema, std::string_view source) {
    if (table.header.empty()) throw DataError(std::string(source) + ": empty population file (total count 0)");
    const auto area_col = table.column(schema.area_name());
    const auto count_col = table.column("count");
    if (area_col == csv::Table::npos)
        throw DataError(std::string(source) + ": missing area column '" + schema.area_name() + "'");
    if (count_col == csv::Table::npos) throw DataError(std::string(source) + ": missing 'count' column");
    std::vector<std::size_t> pcols;
    for (const auto& v : schema.population_vars()) {
        auto c = table.column(v.name);
        if (c == csv::Table::npos) throw DataError(std::string(source) + ": missing covariate column '" + v.name + "'");
        pcols.push_back(c);
    }
    if (table.header.size() != 2 + pcols.size()) {
        for (const auto& h : table.header)
            if (h != schema.area_name() && h != "count" && !schema.locate(h))
                throw DataError(std::string(source) + ": unexpected column '" + h + "'");
        throw DataError(std::string(source) + ": population file may only carry population covariates");
    }

    std::vector<std::string> areas;
    std::map<std::string, std::size_t> area_index;
    std::vector<std::pair<std::size_t, std::size_t>> keys;
    std::vector<double> values;
    std::vector<Level> levels(pcols.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto where = row_ref(source, table.lines[r]);
        if (row[area_col].empty()) throw DataError(where + ": missing area");
        const double c = csv::to_double(row[count_col], where + " count");
        if (c < 0.0) throw DataError(where + ": negative count");
        for (std::size_t v = 0; v < pcols.size(); ++v) {
            const auto& var = schema.population_vars()[v];
            auto level = var.find_level(row[pcols[v]]);
            if (!level)
                throw DataError(where + ": unknown level '" + row[pcols[v]] + "' for column '" + var.name + "'");
            levels[v] = *level;
        }
        auto [it, inserted] = area_index.emplace(row[area_col], areas.size());
        if (inserted) areas.push_back(row[area_col]);
        keys.emplace_back(schema.profile_index(levels), it->second);
        values.push_back(c);
    }
    if (areas.empty()) throw DataError(std::string(source) + ": population table is empty (total count 0)");

    std::vector<double> counts(schema.n_profiles() * areas.size(), 0.0);
    for (std::size_t k = 0; k < keys.size(); ++k) counts[keys[k].first * areas.size() + keys[k].second] += values[k];
    return PopulationTable(schema, std::move(areas), std::move(counts));
}

PopulationTable load_population(const std::string& path, const CovariateSchema& schema) {
    return population_from_csv(csv::read_file(path), schema, path);
}

} // namespace sae
