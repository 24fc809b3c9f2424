#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "csir/data_model.hpp"
#include "csir/mcmc.hpp"

namespace csir {

/// Posterior over the spatial-disaggregation coefficients beta.  Under the
/// county-total constraint a unit's count probability is
///   pi_j = exp(Z_j beta) P_j / sum_{l in county} exp(Z_l beta) P_l,
/// so a global intercept cancels and Z carries no intercept column.
struct Stage1Fit {
    PosteriorSamples beta_samples;            // raw predictor scale
    std::vector<CountyGroup> training_counties;
    std::vector<std::string> predictor_names; // confounders then extras
    std::vector<std::string> warnings;        // non-identifiable predictors etc.
};

/// County-consistent posterior predictive count draws for units observed
/// only through their county totals.
struct PredictiveDraws {
    std::vector<std::string> unit_ids;        // retained (matched-control) units
    std::vector<std::vector<long long>> draws;  // M x n(unit_ids)
    std::map<std::string, long long> per_county_totals;
    std::map<std::string, std::string> diagnostics;
};

/// Predictor row for the disaggregation model: confounders followed by the
/// extra covariates, no intercept.
Eigen::VectorXd stage1_predictors(const Dataset& data, std::size_t unit_row);

/// Multinomial log-likelihood of the member counts given the county totals,
/// up to the beta-free multinomial constant; log-sum-exp stabilized.
/// Members must carry observed counts and positive populations.
double stage1_log_likelihood(const Eigen::VectorXd& beta, const Dataset& data,
                             const std::vector<CountyGroup>& groups);

/// Fit the disaggregation model on fully observed training counties via
/// random-walk Metropolis with independent N(0, prior_sd^2) priors on the
/// standardized-predictor scale.  Requires at least two multi-member
/// counties; a predictor that is constant within every county (a county
/// fixed effect) is rejected, and a globally constant predictor is kept
/// but flagged as non-identifiable.
Stage1Fit fit_stage1(const Dataset& training, const std::vector<CountyGroup>& groups,
                     const ChainConfig& cfg, double prior_sd = 10.0);

/// For m = 1..M: take an evenly strided beta draw, compute each target
/// county's pi, and draw member counts ~ Multinomial(K, pi).  Only the
/// `keep_ids` columns are retained, but every county member participates in
/// the constraint.  Each m uses an independently derived RNG stream.
PredictiveDraws predict_counts(const Stage1Fit& fit, const Dataset& data,
                               const std::vector<CountyGroup>& targets,
                               const std::vector<std::string>& keep_ids,
                               int m_draws, std::uint64_t seed);

/// Draws serialized as (m, unit_id, count) triples.
Table predictive_draws_as_table(const PredictiveDraws& draws);
PredictiveDraws predictive_draws_from_table(const Table& t);

}  // namespace csir
