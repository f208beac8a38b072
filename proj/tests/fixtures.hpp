#pragma once

#include "sae/data_model.hpp"

#include <string>
#include <vector>

namespace fixtures {

inline sae::Variable var(std::string name, std::vector<std::string> levels) {
    return sae::Variable{std::move(name), std::move(levels)};
}

// sex{m,f}, pid{d,r} as population covariates, interest{lo,hi} survey-only.
inline sae::CovariateSchema small_schema() {
    return sae::CovariateSchema({var("sex", {"m", "f"}), var("pid", {"d", "r"})}, {var("interest", {"lo", "hi"})});
}

// One population covariate g{a,b}, one survey-only covariate s{0,1}.
inline sae::CovariateSchema tiny_schema(bool with_survey_var = true) {
    if (!with_survey_var) return sae::CovariateSchema({var("g", {"a", "b"})}, {});
    return sae::CovariateSchema({var("g", {"a", "b"})}, {var("s", {"0", "1"})});
}

struct Row {
    std::string area;
    double y;
    std::vector<sae::Level> xp;
    std::vector<sae::Level> xs;
};

inline sae::SurveyDataset survey(const sae::CovariateSchema& schema, const std::vector<Row>& rows,
                                 std::optional<std::vector<double>> weight = std::nullopt) {
    std::vector<double> y;
    std::vector<std::string> area;
    std::vector<sae::Level> xp, xs;
    for (const auto& r : rows) {
        y.push_back(r.y);
        area.push_back(r.area);
        xp.insert(xp.end(), r.xp.begin(), r.xp.end());
        xs.insert(xs.end(), r.xs.begin(), r.xs.end());
    }
    return sae::SurveyDataset(schema, y, area, xp, xs, std::move(weight));
}

} // namespace fixtures
