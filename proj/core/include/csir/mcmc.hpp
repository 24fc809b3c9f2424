#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csir/data_model.hpp"
#include "csir/matching.hpp"
#include "csir/table.hpp"

namespace csir {

/// Chain length and tuning knobs for the random-walk Metropolis sampler.
/// Any *reported summary* requires (n_iter - burn_in)/thin >= 100 kept
/// draws; summarize_csir enforces that.
struct ChainConfig {
    int n_iter = 50000;
    int burn_in = 10000;
    int thin = 10;
    std::uint64_t seed = 0;
    double target_accept = 0.234;
    int adapt_window = 50;
};

struct PosteriorSamples {
    Eigen::MatrixXd draws;  // kept x dim
    double acceptance_rate = 0.0;
    double proposal_scale_final = 0.0;  // geometric mean across coordinates
    std::uint64_t seed = 0;
    Eigen::VectorXd final_scales;       // per-coordinate, frozen at burn-in end
};

using LogDensity = std::function<double(const Eigen::VectorXd&)>;

/// Target that depends on which outcome vector is plugged in; the sampler
/// cycles outcome index 0..n_outcomes-1 after burn-in (burn-in always uses
/// index 0).
using RotatingLogDensity =
    std::function<double(const Eigen::VectorXd&, std::size_t)>;

/// Coordinate-sweep Gaussian random-walk Metropolis.  Per-coordinate
/// proposal scales adapt every adapt_window sweeps during burn-in
/// (Robbins-Monro on the log scale toward target_accept) and are frozen
/// afterwards.  Deterministic given cfg.seed.
PosteriorSamples metropolis(const LogDensity& log_post,
                            const Eigen::VectorXd& init,
                            const ChainConfig& cfg);

PosteriorSamples metropolis_rotating(const RotatingLogDensity& log_post,
                                     std::size_t n_outcomes,
                                     const Eigen::VectorXd& init,
                                     const ChainConfig& cfg,
                                     const Eigen::VectorXd* init_scales = nullptr);

/// Posterior sampler for the log-linear outcome model
///   log E[Y] = X beta + offset,   beta ~ N(0, prior_sd^2) independently
/// on the standardized-covariate scale.  `outcomes` holds one response
/// vector per imputation; a single entry reproduces the fully observed fit,
/// and multiple entries rotate per sweep exactly as csir_two_stage
/// requires.  Draws are returned on the raw predictor scale.
PosteriorSamples sample_loglinear(const Eigen::MatrixXd& X,
                                  const std::vector<Eigen::VectorXd>& outcomes,
                                  const Eigen::VectorXd& offset,
                                  const ChainConfig& cfg,
                                  double prior_sd = 10.0);

/// Bayesian fit of log E[Y] = a0 + a1*T + a2'X + log P over the exposed
/// units and matched controls, all with observed counts.
PosteriorSamples fit_bayes_loglinear(const Dataset& data,
                                     const MatchedDataset& matched,
                                     const ChainConfig& cfg,
                                     double prior_sd = 10.0);

/// exp(posterior mean of alpha_1) with the equal-tailed credible interval
/// of exp(alpha_1) at level 1 - alpha (95% by default).  Interval endpoints are empirical order
/// statistics, so exponentiation commutes with the quantiles exactly.
struct CsirSummary {
    double estimate = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t n_draws = 0;
    double ess = 0.0;  // effective sample size of the alpha_1 chain
};

CsirSummary summarize_csir(const PosteriorSamples& samples, int coordinate = 1,
                           double alpha = 0.05);

/// One row per kept draw, for external diagnostics.
Table draws_as_table(const PosteriorSamples& samples,
                     const std::vector<std::string>& names);

}  // namespace csir
