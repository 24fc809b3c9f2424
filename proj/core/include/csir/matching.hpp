#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "csir/data_model.hpp"
#include "csir/glm.hpp"

namespace csir {

enum class MatchMetric { mahalanobis, propensity_linear };

/// Configuration for k:1 nearest-neighbor ratio matching.
struct MatchSpec {
    int ratio = 1;                        // controls per exposed unit
    MatchMetric metric = MatchMetric::mahalanobis;
    std::vector<std::size_t> exact_on;    // confounder indices matched exactly
    bool replacement = false;
    std::optional<double> caliper;        // propensity metric only, logit scale
};

/// One covariate's standardized mean difference (exposed minus control,
/// divided by the exposed-group sd).  `difference` is +/-infinity when the
/// exposed sd is zero but the means differ.
struct BalanceRow {
    std::string covariate;
    double difference = 0.0;
    bool flagged = false;  // |difference| >= 0.2
};

struct MatchedDataset {
    std::vector<std::string> exposed_ids;
    std::vector<std::vector<std::string>> control_ids_per_exposed;  // each of length k
    std::vector<std::vector<double>> distances;                     // parallel to controls
    std::vector<BalanceRow> balance_before;
    std::vector<BalanceRow> balance_after;

    /// Dataset row indices of the exposed units plus every distinct matched
    /// control, sorted — the analysis set for the outcome model.
    std::vector<std::size_t> analysis_rows(const Dataset& data) const;
};

/// sqrt((a-b)' cov_inv (a-b)).  cov_inv must be symmetric positive
/// definite; validated by a Cholesky factorization on every call, so batch
/// work should go through match() which factors once.
double mahalanobis_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                            const Eigen::MatrixXd& cov_inv);

/// Logistic regression of exposure status on the confounders (intercept
/// added internally).
struct PropensityFit {
    GlmFit glm;
    Eigen::VectorXd linear;              // logit-scale scores
    Eigen::VectorXd score;               // probabilities, in (0,1)
    std::vector<std::size_t> unit_rows;  // dataset indices behind each entry
};

PropensityFit fit_propensity(const Dataset& data, const GlmOptions& opts = {});

/// k:1 greedy nearest-neighbor matching.  Exposed units are processed in
/// ascending unit_id; ties in distance break toward the smaller control
/// unit_id, so the result does not depend on input order.  Eligible
/// controls have exposure 0 and positive population; the Mahalanobis
/// covariance is estimated from the pooled eligible controls.
MatchedDataset match(const Dataset& data, const MatchSpec& spec);

/// Standardized mean differences of the confounders, exposed versus the
/// given control rows (each occurrence counted).
std::vector<BalanceRow> balance_table(const Dataset& data,
                                      const std::vector<std::size_t>& exposed_rows,
                                      const std::vector<std::size_t>& control_rows);

/// Serialize match provenance (exposed id, control ids, distances) as a
/// delimited table.
Table matched_pairs_table(const MatchedDataset& m);

/// Rebuild a matched dataset from its pairs table (inverse of
/// matched_pairs_table up to the balance diagnostics, which stay empty).
/// Ranks must run 1..k contiguously within each exposed id.
MatchedDataset matched_pairs_from_table(const Table& t);
Table balance_as_table(const std::vector<BalanceRow>& before,
                       const std::vector<BalanceRow>& after);

}  // namespace csir
