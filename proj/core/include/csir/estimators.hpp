#pragma once

#include <string>
#include <vector>

#include "csir/data_model.hpp"
#include "csir/disagg.hpp"
#include "csir/matching.hpp"
#include "csir/mcmc.hpp"
#include "csir/results.hpp"

namespace csir {

/// Classic surveillance SIR D/E with the exact Poisson interval built from
/// chi-square quantiles:
///   lower = qchisq(alpha/2, 2D) / 2E   (0 when D = 0)
///   upper = qchisq(1 - alpha/2, 2D + 2) / 2E
SirResult cdc_sir(long long observed, double expected, double alpha = 0.05);

/// Expected community count under the crude background rate:
///   E = (sum background counts / sum background population) * community population.
double expected_count(const std::vector<UnitRecord>& community,
                      const std::vector<UnitRecord>& background);

/// CDC SIR for a community inside a full unit table: D from the community
/// units, E from every other unit as background.
SirResult cdc_sir_for_community(const Dataset& data,
                                const std::vector<std::string>& community_ids,
                                double alpha = 0.05);

/// Bayesian cSIR when every matched unit's count is observed.
SirResult csir_direct(const Dataset& data, const MatchedDataset& matched,
                      const ChainConfig& cfg, double prior_sd = 10.0,
                      double alpha = 0.05);

/// Two-stage cSIR: one chain over (a0, a1, a2) whose control outcomes
/// rotate through the M predictive draws (burn-in pinned to draw 1,
/// post-burn-in sweep t uses draw 1 + (t-1) mod M).  Controls carrying an
/// observed count keep it fixed across imputations.
SirResult csir_two_stage(const Dataset& data, const MatchedDataset& matched,
                         const PredictiveDraws& draws, const ChainConfig& cfg,
                         double prior_sd = 10.0, double alpha = 0.05);

}  // namespace csir
