#pragma once

#include "sae/csv.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sae {

using Level = std::uint32_t;

/// A categorical covariate with its enumerated levels. The first level is
/// the reference level in every design matrix.
struct Variable {
    std::string name;
    std::vector<std::string> levels;

    /// Index of `level`, or nullopt when it is not a declared level.
    std::optional<Level> find_level(std::string_view level) const;
};

enum class Role { Population, Survey };

/// Declares the population covariates (known for every population cell and
/// every respondent) and the survey-only covariates (respondents only).
class CovariateSchema {
public:
    CovariateSchema() = default;
    CovariateSchema(std::vector<Variable> population_vars, std::vector<Variable> survey_vars,
                    std::string outcome_name = "outcome", std::string area_name = "area",
                    std::string weight_name = "weight");

    const std::vector<Variable>& population_vars() const { return population_vars_; }
    const std::vector<Variable>& survey_vars() const { return survey_vars_; }
    const std::string& outcome_name() const { return outcome_name_; }
    const std::string& area_name() const { return area_name_; }
    const std::string& weight_name() const { return weight_name_; }

    /// Role and position of a variable, or nullopt for an unknown name.
    std::optional<std::pair<Role, std::size_t>> locate(std::string_view name) const;
    const Variable& variable(std::string_view name) const;

    /// Population-covariate profiles are numbered in mixed radix over
    /// population_vars, the last variable varying fastest.
    std::size_t n_profiles() const { return n_profiles_; }
    std::size_t profile_index(std::span<const Level> levels) const;
    std::vector<Level> profile_levels(std::size_t profile) const;
    /// Human-readable "var=level;var=level" form of a profile.
    std::string profile_label(std::size_t profile) const;

private:
    std::vector<Variable> population_vars_;
    std::vector<Variable> survey_vars_;
    std::string outcome_name_;
    std::string area_name_;
    std::string weight_name_;
    std::size_t n_profiles_ = 1;
};

/// Respondent-level survey microdata. Immutable once constructed.
class SurveyDataset {
public:
    /// `xp` and `xs` are row-major level indices (n x |population_vars| and
    /// n x |survey_vars|). Validates every invariant; throws DataError.
    SurveyDataset(CovariateSchema schema, std::vector<double> outcome, std::vector<std::string> area,
                  std::vector<Level> xp, std::vector<Level> xs,
                  std::optional<std::vector<double>> national_weight = std::nullopt);

    const CovariateSchema& schema() const { return schema_; }
    std::size_t size() const { return outcome_.size(); }

    std::span<const double> outcome() const { return outcome_; }
    const std::vector<std::string>& area() const { return area_; }
    const std::optional<std::vector<double>>& national_weight() const { return national_weight_; }

    Level xp(std::size_t row, std::size_t var) const {
        return xp_[row * schema_.population_vars().size() + var];
    }
    Level xs(std::size_t row, std::size_t var) const {
        return xs_[row * schema_.survey_vars().size() + var];
    }
    /// Level of any schema variable by name.
    Level level(std::size_t row, std::string_view name) const;
    std::size_t profile(std::size_t row) const { return profile_[row]; }

    /// Distinct area labels in order of first appearance.
    std::vector<std::string> observed_areas() const;

    /// New dataset made of the given rows (repeats allowed), in that order.
    SurveyDataset select(std::span<const std::size_t> rows) const;
    SurveyDataset with_outcome(std::vector<double> outcome) const;
    SurveyDataset with_national_weight(std::optional<std::vector<double>> weight) const;

private:
    CovariateSchema schema_;
    std::vector<double> outcome_;
    std::vector<std::string> area_;
    std::vector<Level> xp_;
    std::vector<Level> xs_;
    std::optional<std::vector<double>> national_weight_;
    std::vector<std::size_t> profile_;
};

/// Population counts by (population-covariate profile, area), stored dense.
class PopulationTable {
public:
    /// `counts` is n_profiles x |areas|, row-major by profile.
    PopulationTable(CovariateSchema schema, std::vector<std::string> areas, std::vector<double> counts);

    const CovariateSchema& schema() const { return schema_; }
    const std::vector<std::string>& areas() const { return areas_; }
    std::size_t n_areas() const { return areas_.size(); }
    std::size_t n_profiles() const { return schema_.n_profiles(); }

    double count(std::size_t profile, std::size_t area) const {
        return counts_[profile * areas_.size() + area];
    }
    double area_total(std::size_t area) const { return area_totals_[area]; }
    double total() const { return total_; }
    std::optional<std::size_t> area_index(std::string_view label) const;

    /// Writes the long-format CSV accepted by load_population, one row per
    /// nonzero cell.
    void write(std::ostream& out) const;

private:
    CovariateSchema schema_;
    std::vector<std::string> areas_;
    std::vector<double> counts_;
    std::vector<double> area_totals_;
    double total_ = 0.0;
};

/// Pr(A = j | X^P) per profile and the marginal Pr(A = j).
struct AreaShares {
    std::size_t n_areas = 0;
    std::vector<double> marginal;
    /// n_profiles x n_areas; rows of zero-mass profiles are all zero.
    std::vector<double> conditional;
    std::vector<bool> defined;
    /// Profiles with zero population mass.
    std::vector<std::size_t> zero_profiles;

    double p(std::size_t profile, std::size_t area) const { return conditional[profile * n_areas + area]; }
};

AreaShares population_area_shares(const PopulationTable& table);

struct ProfileGap {
    std::size_t profile;
    std::vector<std::size_t> missing_areas;
};

/// Survey coverage of the population's covariate cells.
struct OverlapReport {
    /// Per population area: profiles with population mass but no respondents there.
    std::vector<std::vector<std::size_t>> missing_by_area;
    /// Profiles observed in the survey in fewer than all areas (including never).
    std::vector<ProfileGap> profile_gaps;
    bool sampling_overlap_concern = false;
    bool area_overlap_concern = false;

    bool empty() const { return !sampling_overlap_concern && !area_overlap_concern; }
};

OverlapReport check_overlap(const SurveyDataset& survey, const PopulationTable& table);

/// Maps each respondent to the index of its area in `table`. Throws
/// DataError naming the first label the population does not know.
std::vector<std::size_t> align_areas(const SurveyDataset& survey, const PopulationTable& table);

SurveyDataset survey_from_csv(const csv::Table& table, const CovariateSchema& schema,
                              std::string_view source = "<survey>");
SurveyDataset load_survey(const std::string& path, const CovariateSchema& schema);

PopulationTable population_from_csv(const csv::Table& table, const CovariateSchema& schema,
                                    std::string_view source = "<population>");
PopulationTable load_population(const std::string& path, const CovariateSchema& schema);

} // namespace sae
