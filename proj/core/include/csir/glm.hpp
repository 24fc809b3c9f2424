#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "csir/data_model.hpp"
#include "csir/results.hpp"

namespace csir {

enum class GlmFamily { poisson, binomial };

struct GlmOptions {
    double tol = 1e-10;            // relative deviance change declaring convergence
    int max_iter = 100;
    double divergence_bound = 1e4; // on standardized coefficients
};

/// Maximum-likelihood fit of a canonical-link GLM.  Coefficients and the
/// covariance (inverse observed information) are reported on the raw
/// predictor scale even though the solver works on standardized columns.
struct GlmFit {
    GlmFamily family = GlmFamily::poisson;
    Eigen::VectorXd coefficients;
    Eigen::MatrixXd covariance;
    double deviance = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// IRLS solver.  `offset` enters the linear predictor with coefficient 1
/// (pass a zero vector when there is none).  Throws ValidationError on a
/// rank-deficient design and NumericError when the iteration diverges or,
/// for the binomial family, when separation is suspected.
GlmFit fit_glm(GlmFamily family, const Eigen::VectorXd& y,
               const Eigen::MatrixXd& X, const Eigen::VectorXd& offset,
               const GlmOptions& opts = {});

GlmFit fit_poisson(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                   const Eigen::VectorXd& offset, const GlmOptions& opts = {});

GlmFit fit_logistic(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                    const GlmOptions& opts = {});

/// 95% Wald interval for one coefficient.
std::pair<double, double> wald_interval(const GlmFit& fit, int coefficient);

/// Poisson log-likelihood up to the log(y!) constant, shared by the
/// frequentist fitter, the MCMC targets, and finite-difference checks.
double poisson_log_likelihood(const Eigen::VectorXd& beta,
                              const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& y,
                              const Eigen::VectorXd& offset);

/// Design matrix for the unit-level outcome model: an intercept column,
/// optionally the exposure indicator, then the confounders, with log
/// population as the offset.  Units with zero population are skipped (the
/// count is recorded); a missing outcome or missing exposure is an error.
struct OutcomeDesign {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    Eigen::VectorXd offset;              // log population
    std::vector<std::size_t> unit_rows;  // dataset indices behind each row
    std::vector<std::string> column_names;
    int n_skipped_zero_pop = 0;
};

OutcomeDesign build_outcome_design(const Dataset& data,
                                   const std::vector<std::size_t>& which,
                                   bool include_exposure);

/// Poisson-regression comparator: fits
///   log E[Y] = a0 + a1*C + a2'X + log P
/// over every unit with positive population, where C indicates membership
/// in the investigated community, and reports exp(a1) with its Wald 95%
/// interval.
SirResult pr_sir_estimate(const Dataset& data,
                          const std::vector<std::string>& community_ids,
                          const GlmOptions& opts = {});

}  // namespace csir
