#include "sae/glm.hpp"

#include "sae/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <set>
#include <string_view>
#include <unordered_map>

namespace sae::glm {

namespace {

struct VarRef {
    Role role;
    std::size_t index;
    std::size_t n_levels;
    std::string name;
    const std::vector<std::string>* levels;
};

VarRef resolve(const CovariateSchema& schema, const std::string& name) {
    auto loc = schema.locate(name);
    if (!loc) throw ConfigError("design references unknown variable '" + name + "'");
    const auto& v = loc->first == Role::Population ? schema.population_vars()[loc->second]
                                                   : schema.survey_vars()[loc->second];
    return {loc->first, loc->second, v.levels.size(), v.name, &v.levels};
}

void check_terms(std::span<const std::string> vars, std::span<const Interaction> interactions) {
    std::set<std::string> seen;
    for (const auto& v : vars)
        if (!seen.insert(v).second) throw ConfigError("variable '" + v + "' listed twice in a design");
    std::set<std::vector<std::string>> terms;
    for (const auto& term : interactions) {
        if (term.size() < 2) throw ConfigError("an interaction needs at least two variables");
        std::vector<std::string> sorted(term);
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ConfigError("interaction repeats a variable");
        if (!terms.insert(sorted).second) throw ConfigError("interaction listed twice in a design");
    }
}

double log1pexp(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

// Rows with identical covariates and response are merged by adding weights.
struct Pooled {
    Eigen::MatrixXd x;
    Eigen::VectorXd weights;
    std::vector<int> response;
};

Pooled pool_rows(const Eigen::MatrixXd& x, std::span<const int> response, const Eigen::VectorXd& weights) {
    const auto n = x.rows();
    const auto p = x.cols();
    std::unordered_map<std::string, Eigen::Index> index;
    std::vector<Eigen::Index> first_row;
    std::vector<double> sums;
    std::vector<int> resp;
    std::string key(static_cast<std::size_t>(p) * sizeof(double) + sizeof(int), '\0');
    for (Eigen::Index i = 0; i < n; ++i) {
        if (weights[i] == 0.0) continue;
        for (Eigen::Index k = 0; k < p; ++k) {
            const double v = x(i, k);
            std::memcpy(key.data() + k * sizeof(double), &v, sizeof(double));
        }
        std::memcpy(key.data() + p * sizeof(double), &response[i], sizeof(int));
        auto [it, inserted] = index.emplace(key, static_cast<Eigen::Index>(sums.size()));
        if (inserted) {
            first_row.push_back(i);
            sums.push_back(weights[i]);
            resp.push_back(response[i]);
        } else {
            sums[it->second] += weights[i];
        }
    }
    Pooled out;
    out.x.resize(static_cast<Eigen::Index>(first_row.size()), p);
    out.weights.resize(static_cast<Eigen::Index>(sums.size()));
    for (std::size_t r = 0; r < first_row.size(); ++r) {
        out.x.row(static_cast<Eigen::Index>(r)) = x.row(first_row[r]);
        out.weights[static_cast<Eigen::Index>(r)] = sums[r];
    }
    out.response = std::move(resp);
    return out;
}

Eigen::VectorXd checked_weights(const std::optional<Eigen::VectorXd>& case_weights, Eigen::Index n) {
    if (!case_weights) return Eigen::VectorXd::Ones(n);
    const auto& w = *case_weights;
    if (w.size() != n) throw DataError("case weight vector length does not match the design");
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(w[i]) || w[i] < 0.0) throw DataError("case weights must be finite and nonnegative");
        total += w[i];
    }
    if (!(total > 0.0)) throw DataError("case weights are all zero");
    return w;
}

void check_finite(const Eigen::MatrixXd& x) {
    if (!x.allFinite()) throw DataError("design matrix has non-finite entries");
}

// Objective, gradient and Hessian of the penalized multinomial negative
// log-likelihood, parameters stacked class-major (class k occupies rows
// k*p .. k*p+p-1). The binary logistic model is the K = 2 case.
struct Evaluation {
    double value;
    Eigen::VectorXd gradient;
};

class Objective {
public:
    Objective(const Eigen::MatrixXd& z, std::span<const int> classes, const Eigen::VectorXd& weights, int n_classes,
              double lambda)
        : z_(z), classes_(classes), w_(weights), k_(n_classes - 1), lambda_(lambda) {}

    Eigen::Index dim() const { return z_.cols() * k_; }

    double value(const Eigen::VectorXd& theta) const {
        const Eigen::MatrixXd eta = z_ * as_matrix(theta);
        double f = 0.0;
        for (Eigen::Index i = 0; i < z_.rows(); ++i) {
            const double lse = log_sum_exp(eta, i);
            const int c = classes_[static_cast<std::size_t>(i)];
            f += w_[i] * (lse - (c < k_ ? eta(i, c) : 0.0));
        }
        return f + 0.5 * lambda_ * penalty_norm(theta);
    }

    Evaluation evaluate(const Eigen::VectorXd& theta, Eigen::MatrixXd* hessian) const {
        const Eigen::Index p = z_.cols();
        const Eigen::Index n = z_.rows();
        const Eigen::MatrixXd eta = z_ * as_matrix(theta);
        Eigen::MatrixXd prob(n, k_);
        double f = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double lse = log_sum_exp(eta, i);
            const int c = classes_[static_cast<std::size_t>(i)];
            f += w_[i] * (lse - (c < k_ ? eta(i, c) : 0.0));
            for (Eigen::Index k = 0; k < k_; ++k) prob(i, k) = std::exp(eta(i, k) - lse);
        }
        Eigen::MatrixXd resid = prob;
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = classes_[static_cast<std::size_t>(i)];
            if (c < k_) resid(i, c) -= 1.0;
            resid.row(i) *= w_[i];
        }
        Eigen::VectorXd grad(dim());
        for (Eigen::Index k = 0; k < k_; ++k) grad.segment(k * p, p) = z_.transpose() * resid.col(k);
        add_penalty(theta, grad);

        if (hessian) {
            hessian->setZero(dim(), dim());
            for (Eigen::Index a = 0; a < k_; ++a) {
                for (Eigen::Index b = a; b < k_; ++b) {
                    Eigen::VectorXd d(n);
                    for (Eigen::Index i = 0; i < n; ++i)
                        d[i] = w_[i] * prob(i, a) * ((a == b ? 1.0 : 0.0) - prob(i, b));
                    Eigen::MatrixXd block = z_.transpose() * d.asDiagonal() * z_;
                    hessian->block(a * p, b * p, p, p) = block;
                    if (a != b) hessian->block(b * p, a * p, p, p) = block.transpose();
                }
                for (Eigen::Index j = 1; j < p; ++j) (*hessian)(a * p + j, a * p + j) += lambda_;
            }
        }
        return {f + 0.5 * lambda_ * penalty_norm(theta), std::move(grad)};
    }

    Eigen::MatrixXd as_matrix(const Eigen::VectorXd& theta) const {
        return Eigen::Map<const Eigen::MatrixXd>(theta.data(), z_.cols(), k_);
    }

private:
    double log_sum_exp(const Eigen::MatrixXd& eta, Eigen::Index i) const {
        if (k_ == 1) return log1pexp(eta(i, 0));
        double m = 0.0;  // reference class
        for (Eigen::Index k = 0; k < k_; ++k) m = std::max(m, eta(i, k));
        double s = std::exp(-m);
        for (Eigen::Index k = 0; k < k_; ++k) s += std::exp(eta(i, k) - m);
        return m + std::log(s);
    }

    double penalty_norm(const Eigen::VectorXd& theta) const {
        const Eigen::Index p = z_.cols();
        double s = 0.0;
        for (Eigen::Index k = 0; k < k_; ++k) s += theta.segment(k * p + 1, p - 1).squaredNorm();
        return s;
    }

    void add_penalty(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
        const Eigen::Index p = z_.cols();
        for (Eigen::Index k = 0; k < k_; ++k)
            grad.segment(k * p + 1, p - 1) += lambda_ * theta.segment(k * p + 1, p - 1);
    }

    const Eigen::MatrixXd& z_;
    std::span<const int> classes_;
    const Eigen::VectorXd& w_;
    Eigen::Index k_;
    double lambda_;
};

GlmFit newton_fit(const DesignMatrix& design, std::span<const int> response, int n_classes,
                  const std::optional<Eigen::VectorXd>& case_weights, double lambda, const SolverOptions& options) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("ridge strength lambda must be positive");
    check_finite(design.x);
    if (design.x.cols() == 0) throw DataError("design has no columns");
    const Eigen::VectorXd w = checked_weights(case_weights, design.x.rows());

    const Pooled pooled = pool_rows(design.x, response, w);
    const Standardization standardization = Standardization::fit(pooled.x, pooled.weights);
    const Eigen::MatrixXd z = standardization.apply(pooled.x);

    Objective objective(z, pooled.response, pooled.weights, n_classes, lambda);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(objective.dim());
    Eigen::MatrixXd hessian;
    Evaluation current = objective.evaluate(theta, &hessian);

    GlmFit fit;
    fit.n_classes = n_classes;
    fit.family = n_classes == 2 ? Family::Logistic : Family::Multinomial;
    fit.lambda = lambda;
    fit.labels = design.labels;
    fit.case_weights = case_weights;
    fit.standardization = standardization;

    fit.objective_trace.push_back(current.value);
    int iter = 0;
    while (current.gradient.lpNorm<Eigen::Infinity>() >= options.tolerance && iter < options.max_iterations) {
        ++iter;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(hessian);
        Eigen::VectorXd step = ldlt.solve(current.gradient);
        if (ldlt.info() != Eigen::Success || !step.allFinite()) {
            const double ridge = 1e-10 * std::max(1.0, hessian.diagonal().cwiseAbs().maxCoeff());
            hessian.diagonal().array() += ridge;
            step = hessian.ldlt().solve(current.gradient);
        }
        double t = 1.0;
        bool accepted = false;
        for (int h = 0; h <= options.max_halvings; ++h, t *= 0.5) {
            Eigen::VectorXd candidate = theta - t * step;
            const double f = objective.value(candidate);
            // Slack of a few ulps so that rounding noise near the optimum
            // does not stall an otherwise converged iteration.
            if (std::isfinite(f) && f <= current.value + 1e-14 * std::abs(current.value)) {
                theta = std::move(candidate);
                accepted = true;
                break;
            }
        }
        if (!accepted) break;  // no descent possible at working precision
        current = objective.evaluate(theta, &hessian);
        fit.objective_trace.push_back(current.value);
    }

    fit.iterations = iter;
    fit.gradient_norm = current.gradient.lpNorm<Eigen::Infinity>();
    fit.objective = current.value;
    fit.converged = fit.gradient_norm < options.tolerance;
    if (!theta.allFinite()) throw NumericalError("ridge fit produced non-finite coefficients");

    fit.standardized_coefficients = objective.as_matrix(theta);
    fit.coefficients = fit.standardized_coefficients;
    const auto& m = standardization.mean;
    const auto& s = standardization.scale;
    for (Eigen::Index k = 0; k < fit.coefficients.cols(); ++k) {
        double shift = 0.0;
        for (Eigen::Index j = 1; j < fit.coefficients.rows(); ++j) {
            fit.coefficients(j, k) = fit.standardized_coefficients(j, k) / s[j];
            shift += fit.coefficients(j, k) * m[j];
        }
        fit.coefficients(0, k) = fit.standardized_coefficients(0, k) - shift;
    }
    return fit;
}

void check_columns(const GlmFit& fit, const DesignMatrix& x) {
    if (x.labels != fit.labels || x.x.cols() != static_cast<Eigen::Index>(fit.labels.size()))
        throw DataError("design columns do not match the fitted model's columns");
}

} // namespace

std::size_t design_width(const CovariateSchema& schema, std::span<const std::string> vars,
                         std::span<const Interaction> interactions) {
    check_terms(vars, interactions);
    std::size_t width = 1;
    for (const auto& v : vars) width += resolve(schema, v).n_levels - 1;
    for (const auto& term : interactions) {
        std::size_t w = 1;
        for (const auto& v : term) w *= resolve(schema, v).n_levels - 1;
        width += w;
    }
    return width;
}

DesignMatrix build_design(const SurveyDataset& data, std::span<const std::string> vars,
                          std::span<const Interaction> interactions) {
    const auto& schema = data.schema();
    const std::size_t width = design_width(schema, vars, interactions);
    const auto n = static_cast<Eigen::Index>(data.size());

    auto level_of = [&](const VarRef& ref, std::size_t row) {
        return ref.role == Role::Population ? data.xp(row, ref.index) : data.xs(row, ref.index);
    };

    DesignMatrix design;
    design.x = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(width));
    design.x.col(0).setOnes();
    design.labels.push_back("(intercept)");
    Eigen::Index col = 1;

    for (const auto& name : vars) {
        const auto ref = resolve(schema, name);
        for (std::size_t l = 1; l < ref.n_levels; ++l) design.labels.push_back(name + "=" + (*ref.levels)[l]);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto level = level_of(ref, static_cast<std::size_t>(i));
            if (level > 0) design.x(i, col + level - 1) = 1.0;
        }
        col += static_cast<Eigen::Index>(ref.n_levels - 1);
    }

    for (const auto& term : interactions) {
        std::vector<VarRef> refs;
        for (const auto& v : term) refs.push_back(resolve(schema, v));
        // Enumerate non-reference level combinations, first variable slowest.
        std::vector<std::size_t> combo(refs.size(), 1);
        std::size_t n_combos = 1;
        for (const auto& r : refs) n_combos *= r.n_levels - 1;
        for (std::size_t c = 0; c < n_combos; ++c) {
            std::size_t rem = c;
            for (std::size_t k = refs.size(); k-- > 0;) {
                combo[k] = 1 + rem % (refs[k].n_levels - 1);
                rem /= refs[k].n_levels - 1;
            }
            std::string label;
            for (std::size_t k = 0; k < refs.size(); ++k) {
                if (k) label += ':';
                label += refs[k].name + "=" + (*refs[k].levels)[combo[k]];
            }
            design.labels.push_back(std::move(label));
            for (Eigen::Index i = 0; i < n; ++i) {
                bool on = true;
                for (std::size_t k = 0; k < refs.size() && on; ++k)
                    on = level_of(refs[k], static_cast<std::size_t>(i)) == combo[k];
                if (on) design.x(i, col) = 1.0;
            }
            ++col;
        }
    }
    return design;
}

std::vector<Interaction> saturated_interactions(std::span<const std::string> vars) {
    if (vars.size() > 20) throw ConfigError("too many variables to saturate");
    std::vector<Interaction> out;
    const std::size_t subsets = std::size_t{1} << vars.size();
    for (std::size_t size = 2; size <= vars.size(); ++size)
        for (std::size_t mask = 0; mask < subsets; ++mask) {
            if (static_cast<std::size_t>(std::popcount(mask)) != size) continue;
            Interaction term;
            for (std::size_t v = 0; v < vars.size(); ++v)
                if (mask >> v & 1) term.push_back(vars[v]);
            out.push_back(std::move(term));
        }
    return out;
}

Standardization Standardization::fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& weights) {
    const Eigen::Index p = x.cols();
    const Eigen::Index n = x.rows();
    Standardization s;
    s.mean = Eigen::VectorXd::Zero(p);
    s.scale = Eigen::VectorXd::Ones(p);
    const bool unit = weights.size() == 0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total += unit ? 1.0 : weights[i];
    for (Eigen::Index k = 1; k < p; ++k) {
        bool constant = true;
        double first = 0.0;
        bool have_first = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!unit && weights[i] == 0.0) continue;
            if (!have_first) {
                first = x(i, k);
                have_first = true;
            } else if (x(i, k) != first) {
                constant = false;
                break;
            }
        }
        if (constant) {
            s.mean[k] = first;
            continue;
        }
        double mean = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) mean += (unit ? 1.0 : weights[i]) * x(i, k);
        mean /= total;
        double var = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = x(i, k) - mean;
            var += (unit ? 1.0 : weights[i]) * d * d;
        }
        var /= total;
        s.mean[k] = mean;
        s.scale[k] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return s;
}

Eigen::MatrixXd Standardization::apply(const Eigen::MatrixXd& x) const {
    if (x.cols() != mean.size()) throw DataError("standardization width mismatch");
    Eigen::MatrixXd z(x.rows(), x.cols());
    z.col(0) = x.col(0);
    for (Eigen::Index k = 1; k < x.cols(); ++k) z.col(k) = (x.col(k).array() - mean[k]) / scale[k];
    return z;
}

GlmFit fit_ridge_logistic(const DesignMatrix& x, const Eigen::VectorXd& y,
                          const std::optional<Eigen::VectorXd>& case_weights, double lambda,
                          const SolverOptions& options) {
    if (y.size() != x.x.rows()) throw DataError("response length does not match the design");
    std::vector<int> classes(static_cast<std::size_t>(y.size()));
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y[i] == 1.0)
            classes[static_cast<std::size_t>(i)] = 0;
        else if (y[i] == 0.0)
            classes[static_cast<std::size_t>(i)] = 1;
        else
            throw DataError("logistic response must be 0/1");
    }
    return newton_fit(x, classes, 2, case_weights, lambda, options);
}

GlmFit fit_ridge_multinomial(const DesignMatrix& x, std::span<const int> classes, int n_classes,
                             const std::optional<Eigen::VectorXd>& case_weights, double lambda,
                             const SolverOptions& options) {
    if (n_classes < 2) throw ConfigError("multinomial fit needs at least two classes");
    if (classes.size() != static_cast<std::size_t>(x.x.rows()))
        throw DataError("response length does not match the design");
    const Eigen::VectorXd w = checked_weights(case_weights, x.x.rows());
    std::vector<double> mass(static_cast<std::size_t>(n_classes), 0.0);
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i] < 0 || classes[i] >= n_classes) throw DataError("class label out of range");
        mass[static_cast<std::size_t>(classes[i])] += w[static_cast<Eigen::Index>(i)];
    }
    for (int k = 0; k < n_classes; ++k)
        if (!(mass[static_cast<std::size_t>(k)] > 0.0))
            throw DataError("class " + std::to_string(k) +
                            " has no observations; use one-vs-rest logistic fits instead of the multinomial model");
    return newton_fit(x, classes, n_classes, case_weights, lambda, options);
}

Eigen::MatrixXd linear_predictor(const GlmFit& fit, const DesignMatrix& x) {
    check_columns(fit, x);
    return fit.standardization.apply(x.x) * fit.standardized_coefficients;
}

Eigen::VectorXd predict_log_prob(const GlmFit& fit, const DesignMatrix& x, int k) {
    if (k < 0 || k >= fit.n_classes) throw DataError("class index out of range");
    const Eigen::MatrixXd eta = linear_predictor(fit, x);
    const Eigen::Index K1 = eta.cols();
    Eigen::VectorXd out(eta.rows());
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
        double m = 0.0;
        for (Eigen::Index c = 0; c < K1; ++c) m = std::max(m, eta(i, c));
        double s = std::exp(-m);
        for (Eigen::Index c = 0; c < K1; ++c) s += std::exp(eta(i, c) - m);
        const double lse = K1 == 1 ? log1pexp(eta(i, 0)) : m + std::log(s);
        out[i] = (k < K1 ? eta(i, k) : 0.0) - lse;
    }
    return out;
}

Eigen::VectorXd predict_prob(const GlmFit& fit, const DesignMatrix& x) {
    if (fit.family != Family::Logistic) throw DataError("predict_prob expects a logistic fit");
    const Eigen::MatrixXd eta = linear_predictor(fit, x);
    Eigen::VectorXd p(eta.rows());
    for (Eigen::Index i = 0; i < eta.rows(); ++i) p[i] = sigmoid(eta(i, 0));
    return p;
}

Eigen::MatrixXd predict_class_prob(const GlmFit& fit, const DesignMatrix& x) {
    const Eigen::MatrixXd eta = linear_predictor(fit, x);
    const Eigen::Index K1 = eta.cols();
    Eigen::MatrixXd out(eta.rows(), K1 + 1);
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
        double m = 0.0;
        for (Eigen::Index c = 0; c < K1; ++c) m = std::max(m, eta(i, c));
        double s = std::exp(-m);
        for (Eigen::Index c = 0; c < K1; ++c) {
            out(i, c) = std::exp(eta(i, c) - m);
            s += out(i, c);
        }
        out(i, K1) = std::exp(-m);
        out.row(i) /= s;
    }
    return out;
}

double penalized_objective(const Eigen::VectorXd& beta, const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& weights, double lambda) {
    if (beta.size() != z.cols() || y.size() != z.rows() || weights.size() != z.rows())
        throw DataError("penalized_objective: shape mismatch");
    std::vector<int> classes(static_cast<std::size_t>(y.size()));
    for (Eigen::Index i = 0; i < y.size(); ++i) classes[static_cast<std::size_t>(i)] = y[i] == 1.0 ? 0 : 1;
    return Objective(z, classes, weights, 2, lambda).value(beta);
}

Eigen::VectorXd penalized_gradient(const Eigen::VectorXd& beta, const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& weights, double lambda) {
    if (beta.size() != z.cols() || y.size() != z.rows() || weights.size() != z.rows())
        throw DataError("penalized_gradient: shape mismatch");
    std::vector<int> classes(static_cast<std::size_t>(y.size()));
    for (Eigen::Index i = 0; i < y.size(); ++i) classes[static_cast<std::size_t>(i)] = y[i] == 1.0 ? 0 : 1;
    return Objective(z, classes, weights, 2, lambda).evaluate(beta, nullptr).gradient;
}

double penalized_objective(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& z, std::span<const int> classes,
                           const Eigen::VectorXd& weights, double lambda) {
    if (beta.rows() != z.cols() || classes.size() != static_cast<std::size_t>(z.rows()) || weights.size() != z.rows())
        throw DataError("penalized_objective: shape mismatch");
    const Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(beta.data(), beta.size());
    return Objective(z, classes, weights, static_cast<int>(beta.cols()) + 1, lambda).value(theta);
}

Eigen::MatrixXd penalized_gradient(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& z,
                                   std::span<const int> classes, const Eigen::VectorXd& weights, double lambda) {
    if (beta.rows() != z.cols() || classes.size() != static_cast<std::size_t>(z.rows()) || weights.size() != z.rows())
        throw DataError("penalized_gradient: shape mismatch");
    const Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(beta.data(), beta.size());
    const Objective objective(z, classes, weights, static_cast<int>(beta.cols()) + 1, lambda);
    return objective.as_matrix(objective.evaluate(theta, nullptr).gradient);
}

LinearFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (y.size() != x.rows()) throw DataError("response length does not match the design");
    check_finite(x);
    if (!y.allFinite()) throw DataError("response has non-finite entries");

    LinearFit fit;
    // Modified Gram-Schmidt with reorthogonalization decides which columns
    // add rank; the fit itself uses a Householder QR of the kept columns.
    Eigen::MatrixXd basis(x.rows(), 0);
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        Eigen::VectorXd v = x.col(k);
        const double norm = v.norm();
        if (norm > 0.0) {
            for (int pass = 0; pass < 2; ++pass) v -= basis * (basis.transpose() * v);
        }
        if (norm > 0.0 && v.norm() > 1e-9 * norm) {
            basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
            basis.col(basis.cols() - 1) = v / v.norm();
            fit.kept.push_back(static_cast<std::size_t>(k));
        } else {
            fit.dropped.push_back(static_cast<std::size_t>(k));
        }
    }
    Eigen::MatrixXd xk(x.rows(), static_cast<Eigen::Index>(fit.kept.size()));
    for (std::size_t c = 0; c < fit.kept.size(); ++c)
        xk.col(static_cast<Eigen::Index>(c)) = x.col(static_cast<Eigen::Index>(fit.kept[c]));
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(xk);
    fit.coefficients = qr.solve(y);
    fit.residuals = y - xk * fit.coefficients;
    const Eigen::Index r = xk.cols();
    const Eigen::MatrixXd R = qr.matrixQR().topLeftCorner(r, r).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd Rinv = R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(r, r));
    fit.xtx_inverse = Rinv * Rinv.transpose();
    return fit;
}

} // namespace sae::glm
