#pragma once

#include "sae/data_model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sae::glm {

/// Interaction term: two or more variable names whose non-reference dummies
/// are multiplied together.
using Interaction = std::vector<std::string>;

/// Intercept, one-hot main effects (first level dropped) in declared order,
/// then interaction products in declared order.
struct DesignMatrix {
    Eigen::MatrixXd x;
    std::vector<std::string> labels;
};

DesignMatrix build_design(const SurveyDataset& data, std::span<const std::string> vars,
                          std::span<const Interaction> interactions = {});

/// Number of columns build_design would produce, without building it.
std::size_t design_width(const CovariateSchema& schema, std::span<const std::string> vars,
                         std::span<const Interaction> interactions = {});

/// Every product of two or more of `vars`, smallest terms first. Together
/// with the main effects this saturates the design.
std::vector<Interaction> saturated_interactions(std::span<const std::string> vars);

enum class Family { Logistic, Multinomial };

/// Per-column centring and scaling applied before penalization. Column 0 is
/// the intercept (mean 0, scale 1). Constant columns get scale 1 and centre
/// equal to their value, so they standardize to exactly zero.
struct Standardization {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    /// Weighted moments; `weights` may be empty for unit weights.
    static Standardization fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& weights);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

struct GlmFit {
    Family family = Family::Logistic;
    /// Number of response classes: 2 for logistic, K for multinomial.
    int n_classes = 2;
    /// p x (K-1) on the original column scale; class K is pinned at zero.
    Eigen::MatrixXd coefficients;
    /// Same coefficients on the standardized scale (the penalized ones).
    Eigen::MatrixXd standardized_coefficients;
    Standardization standardization;
    double lambda = 0.0;
    std::vector<std::string> labels;
    std::optional<Eigen::VectorXd> case_weights;

    int iterations = 0;
    double gradient_norm = 0.0;
    double objective = 0.0;
    bool converged = false;
    /// Objective value at the start and after every accepted step.
    std::vector<double> objective_trace;
};

struct SolverOptions {
    double tolerance = 1e-8;
    int max_iterations = 100;
    int max_halvings = 60;
};

/// Default ridge strength: a Gaussian prior with scale 2.5 on standardized
/// coefficients.
inline constexpr double kDefaultLambda = 1.0 / (2.5 * 2.5);

/// Minimizes  -sum_i w_i [y_i eta_i - log(1 + e^eta_i)] + lambda/2 |beta_{1..}|^2
/// over standardized columns by damped Newton with step halving. Identical
/// design rows are pooled before iterating.
GlmFit fit_ridge_logistic(const DesignMatrix& x, const Eigen::VectorXd& y,
                          const std::optional<Eigen::VectorXd>& case_weights, double lambda,
                          const SolverOptions& options = {});

/// Multinomial logit over classes 0..K-1 with the last class as reference.
/// Throws DataError if some class has no (positively weighted) observation.
GlmFit fit_ridge_multinomial(const DesignMatrix& x, std::span<const int> classes, int n_classes,
                             const std::optional<Eigen::VectorXd>& case_weights, double lambda,
                             const SolverOptions& options = {});

/// Linear predictor(s) on the original scale: n x (K-1).
Eigen::MatrixXd linear_predictor(const GlmFit& fit, const DesignMatrix& x);

/// Logistic fits: Pr(y = 1) per row.
Eigen::VectorXd predict_prob(const GlmFit& fit, const DesignMatrix& x);

/// Class probabilities, n x K (for logistic, columns are y=1 then y=0).
Eigen::MatrixXd predict_class_prob(const GlmFit& fit, const DesignMatrix& x);

/// log Pr(class = k | x) for every row, computed without under/overflow.
Eigen::VectorXd predict_log_prob(const GlmFit& fit, const DesignMatrix& x, int k);

// Objective and gradient on an already standardized design `z` (column 0 is
// the intercept, which is never penalized). Exposed for gradient checks.

double penalized_objective(const Eigen::VectorXd& beta, const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& weights, double lambda);
Eigen::VectorXd penalized_gradient(const Eigen::VectorXd& beta, const Eigen::MatrixXd& z,
                                   const Eigen::VectorXd& y, const Eigen::VectorXd& weights, double lambda);

/// `beta` is p x (K-1).
double penalized_objective(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& z, std::span<const int> classes,
                           const Eigen::VectorXd& weights, double lambda);
Eigen::MatrixXd penalized_gradient(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& z,
                                   std::span<const int> classes, const Eigen::VectorXd& weights, double lambda);

/// Ordinary least squares with greedy removal of linearly dependent columns
/// (a column is kept only if it raises the rank of the columns kept so far).
struct LinearFit {
    std::vector<std::size_t> kept;   ///< indices of retained columns, ascending
    std::vector<std::size_t> dropped;
    Eigen::VectorXd coefficients;    ///< over kept columns
    Eigen::VectorXd residuals;
    Eigen::MatrixXd xtx_inverse;     ///< (X'X)^{-1} over kept columns
};

LinearFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

} // namespace sae::glm
