#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "csir/estimators.hpp"
#include "csir/matching.hpp"
#include "csir/mcmc.hpp"
#include "csir/table.hpp"

namespace csir {

enum class MarginKind { normal, lognormal, uniform };

/// One synthetic covariate: a marginal distribution plus its loading on the
/// shared latent factor that induces the confounding correlation structure.
struct CovariateSpec {
    std::string name;
    MarginKind kind = MarginKind::normal;
    double mean = 0.0;
    double sd = 1.0;        // uniform: half-width is sd*sqrt(3)
    double loading = 0.0;   // in [-1, 1]
};

struct GeneratorSpec {
    std::vector<CovariateSpec> covariates;
    double pop_meanlog = 7.0;  // unit populations ~ lognormal, floored
    double pop_sdlog = 0.6;
    long long pop_min = 50;
};

/// Exposure model logit P(T=1) = gamma0 + gamma'X and outcome model
/// log E[Y] = alpha0 + alpha1 T + alpha2'X + log P over n_units synthetic
/// units; the investigated community is a uniformly random subset of
/// n_exposed_selected exposed units, held fixed across replicates along
/// with the covariates, populations, and exposure draw.  Only the counts
/// are redrawn per replicate.
struct SimConfig {
    Eigen::VectorXd gamma;   // gamma0 followed by one entry per covariate
    Eigen::VectorXd alpha;   // alpha0, alpha1, then one entry per covariate
    int n_units = 8000;
    int n_exposed_selected = 10;
    int n_replicates = 500;
    std::uint64_t seed = 0;
    GeneratorSpec generator;
    ChainConfig chain{5000, 1000, 4, 0, 0.234, 50};  // csir arm, desk scale
    double prior_sd = 10.0;
    unsigned n_threads = 1;  // replicate-level workers; 0 = all available cores
};

enum class SimMethod { cdc, pr, csir };

std::string to_string(SimMethod m);

struct MethodSummary {
    SimMethod method = SimMethod::cdc;
    int n_ok = 0;
    int n_fail = 0;
    double bias = 0.0;           // mean(estimate) - true SIR
    double coverage_true = 0.0;  // fraction of intervals covering the true SIR
    double coverage_null = 0.0;  // fraction covering 1
    double mean_width = 0.0;
};

struct ReplicateRow {
    int replicate = 0;
    SimMethod method = SimMethod::cdc;
    bool ok = false;
    double estimate = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::string error;
};

struct SimReport {
    double true_sir = 1.0;
    int n_replicates = 0;
    std::vector<MethodSummary> summaries;
    std::vector<ReplicateRow> replicates;
    std::vector<std::string> flags;  // failure census when an arm fails > 1%
};

/// Synthetic confounder matrix (n x covariates); column k follows its
/// declared marginal with correlation induced through the latent factor.
Eigen::MatrixXd gen_confounders(const GeneratorSpec& spec, int n, std::uint64_t seed);

std::vector<long long> gen_populations(const GeneratorSpec& spec, int n,
                                       std::uint64_t seed);

/// Draw Y ~ Poisson(exp(alpha0 + alpha1 T + alpha2'X + log P)).  A mean
/// above 1e9 is refused with advice to rescale alpha0.
std::vector<long long> gen_outcome(const Eigen::MatrixXd& X,
                                   const std::vector<long long>& P,
                                   const std::vector<int>& T,
                                   const Eigen::VectorXd& alpha,
                                   std::mt19937_64& rng);

/// One draw of (T, Y) under the configured models.  In simulation runs T is
/// generated once and held fixed while Y is redrawn each replicate.
std::pair<std::vector<int>, std::vector<long long>> gen_exposure_outcome(
    const Eigen::MatrixXd& X, const std::vector<long long>& P, const SimConfig& cfg);

/// Coefficient shapes, counts, margins, and community feasibility (the
/// requested community size against the expected exposed count under
/// gamma).  run_simulation calls this itself; exposed for dry runs.
void validate_sim_config(const SimConfig& cfg);

/// Run the full replicate study for the requested methods.  Replicates are
/// embarrassingly parallel (cfg.n_threads workers) with independently
/// derived seeds and fixed result slots, so the report is bit-identical
/// for any thread count.  Replicate-level failures are recorded per arm,
/// and any arm failing on more than 1% of replicates raises a report flag.
SimReport run_simulation(const SimConfig& cfg, const std::vector<SimMethod>& methods,
                         const MatchSpec& match_spec);

/// Table 1 parameterizations over the synthetic covariate battery.
/// sim 1: null effect, no confounding; 2: null effect with confounding;
/// 3: effect without confounding; 4: effect with confounding.  For sims
/// 3 and 4 set the effect size afterwards via set_true_sir.
SimConfig table1_preset(int sim);
void set_true_sir(SimConfig& cfg, double sir);

Table sim_summary_table(const SimReport& report);
Table sim_replicates_table(const SimReport& report);

/// Rows (true_sir, method, coverage_null) across effect sizes, the Figure-2
/// plot data.
Table null_coverage_curve(const std::vector<std::pair<double, SimReport>>& sweeps);

}  // namespace csir
