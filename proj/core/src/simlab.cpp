#include "csir/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>

#include "csir/common.hpp"
#include "csir/data_model.hpp"

namespace csir {

namespace {

// Standard normal CDF, used to push the latent Gaussian through a uniform
// margin.
double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

void check_covariate(const CovariateSpec& c) {
    if (c.name.empty()) throw ValidationError("covariate spec with empty name");
    if (!std::isfinite(c.mean) || !std::isfinite(c.sd) || !std::isfinite(c.loading))
        throw ValidationError("covariate '" + c.name + "': non-finite parameter");
    if (c.sd <= 0.0)
        throw ValidationError("covariate '" + c.name + "': sd must be positive");
    if (std::abs(c.loading) > 1.0)
        throw ValidationError("covariate '" + c.name +
                              "': factor loading must lie in [-1, 1]");
    if (c.kind == MarginKind::lognormal && c.mean <= 0.0)
        throw ValidationError("covariate '" + c.name +
                              "': lognormal margin needs a positive mean");
}

double transform_margin(const CovariateSpec& c, double u) {
    switch (c.kind) {
        case MarginKind::normal:
            return c.mean + c.sd * u;
        case MarginKind::lognormal: {
            // Match the requested mean/sd exactly: if log V ~ N(m, s^2) then
            // E[V] = exp(m + s^2/2) and Var[V] = E[V]^2 (exp(s^2) - 1).
            const double s2 = std::log1p((c.sd / c.mean) * (c.sd / c.mean));
            const double m = std::log(c.mean) - 0.5 * s2;
            return std::exp(m + std::sqrt(s2) * u);
        }
        case MarginKind::uniform: {
            const double half = c.sd * std::sqrt(3.0);
            return c.mean - half + 2.0 * half * norm_cdf(u);
        }
    }
    throw ValidationError("unknown margin kind");
}

void validate_config(const SimConfig& cfg) {
    const auto k = static_cast<Eigen::Index>(cfg.generator.covariates.size());
    if (k == 0) throw ValidationError("simulation needs at least one covariate");
    for (const auto& c : cfg.generator.covariates) check_covariate(c);
    if (cfg.gamma.size() != k + 1)
        throw ValidationError("gamma must hold an intercept plus one coefficient "
                              "per covariate (expected " +
                              std::to_string(k + 1) + ", got " +
                              std::to_string(cfg.gamma.size()) + ")");
    if (cfg.alpha.size() != k + 2)
        throw ValidationError("alpha must hold an intercept, an exposure "
                              "coefficient, and one coefficient per covariate "
                              "(expected " + std::to_string(k + 2) + ", got " +
                              std::to_string(cfg.alpha.size()) + ")");
    if (!cfg.gamma.allFinite() || !cfg.alpha.allFinite())
        throw ValidationError("non-finite model coefficients");
    if (cfg.n_units < 2) throw ValidationError("n_units must be at least 2");
    if (cfg.n_exposed_selected < 1)
        throw ValidationError("n_exposed_selected must be positive");
    if (cfg.n_replicates < 1) throw ValidationError("n_replicates must be positive");
    if (cfg.prior_sd <= 0.0) throw ValidationError("prior_sd must be positive");

    // The investigated community must plausibly exist: compare against the
    // expected number of exposed units under the exposure model.
    Eigen::VectorXd means(k);
    for (Eigen::Index j = 0; j < k; ++j) means[j] = cfg.generator.covariates[j].mean;
    const double lp = cfg.gamma[0] + cfg.gamma.tail(k).dot(means);
    const double expected_exposed = cfg.n_units / (1.0 + std::exp(-lp));
    if (cfg.n_exposed_selected > expected_exposed)
        throw ValidationError(
            "n_exposed_selected (" + std::to_string(cfg.n_exposed_selected) +
            ") exceeds the expected exposed count under gamma (~" +
            std::to_string(expected_exposed) + ")");
}

}  // namespace

void validate_sim_config(const SimConfig& cfg) { validate_config(cfg); }

std::string to_string(SimMethod m) {
    switch (m) {
        case SimMethod::cdc: return "cdc";
        case SimMethod::pr: return "pr";
        case SimMethod::csir: return "csir";
    }
    return "unknown";
}

Eigen::MatrixXd gen_confounders(const GeneratorSpec& spec, int n, std::uint64_t seed) {
    if (n < 0) throw ValidationError("negative sample size");
    for (const auto& c : spec.covariates) check_covariate(c);

    const auto k = static_cast<Eigen::Index>(spec.covariates.size());
    Eigen::MatrixXd X(n, k);
    auto rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    // One shared latent factor per unit induces the cross-covariate
    // correlation; the draw order (factor, then one residual per covariate)
    // is fixed so a seed pins the whole matrix.
    for (int i = 0; i < n; ++i) {
        const double f = normal(rng);
        for (Eigen::Index j = 0; j < k; ++j) {
            const auto& c = spec.covariates[j];
            const double eps = normal(rng);
            const double u =
                c.loading * f + std::sqrt(1.0 - c.loading * c.loading) * eps;
            X(i, j) = transform_margin(c, u);
        }
    }
    return X;
}

std::vector<long long> gen_populations(const GeneratorSpec& spec, int n,
                                       std::uint64_t seed) {
    if (n < 0) throw ValidationError("negative sample size");
    if (!std::isfinite(spec.pop_meanlog) || !std::isfinite(spec.pop_sdlog) ||
        spec.pop_sdlog < 0.0)
        throw ValidationError("invalid population distribution parameters");
    if (spec.pop_min < 0) throw ValidationError("pop_min must be nonnegative");

    auto rng = make_rng(seed);
    std::lognormal_distribution<double> pop(spec.pop_meanlog, spec.pop_sdlog);
    std::vector<long long> out(static_cast<std::size_t>(n));
    for (auto& p : out) p = std::max(spec.pop_min, std::llround(pop(rng)));
    return out;
}

std::vector<long long> gen_outcome(const Eigen::MatrixXd& X,
                                   const std::vector<long long>& P,
                                   const std::vector<int>& T,
                                   const Eigen::VectorXd& alpha,
                                   std::mt19937_64& rng) {
    const auto n = X.rows();
    if (static_cast<Eigen::Index>(P.size()) != n ||
        static_cast<Eigen::Index>(T.size()) != n)
        throw ValidationError("X, P, and T must have matching lengths");
    if (alpha.size() != X.cols() + 2)
        throw ValidationError("alpha dimension does not match the covariates");

    const Eigen::VectorXd xb = X * alpha.tail(X.cols());
    std::vector<long long> y(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double lp = alpha[0] + alpha[1] * T[static_cast<std::size_t>(i)] + xb[i];
        const double mu = std::exp(lp) * static_cast<double>(P[static_cast<std::size_t>(i)]);
        if (!std::isfinite(mu) || mu > 1e9)
            throw ValidationError(
                "Poisson mean exceeds 1e9 at unit " + std::to_string(i + 1) +
                "; rescale the outcome intercept (alpha0) or the population scale");
        std::poisson_distribution<long long> pois(mu);
        y[static_cast<std::size_t>(i)] = pois(rng);
    }
    return y;
}

std::pair<std::vector<int>, std::vector<long long>> gen_exposure_outcome(
    const Eigen::MatrixXd& X, const std::vector<long long>& P, const SimConfig& cfg) {
    validate_config(cfg);
    const auto n = X.rows();
    if (static_cast<Eigen::Index>(P.size()) != n)
        throw ValidationError("X and P must have matching lengths");

    const Eigen::VectorXd lp =
        (X * cfg.gamma.tail(X.cols())).array() + cfg.gamma[0];
    auto rng_t = make_rng(derive_seed(cfg.seed, 13));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<int> t(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        t[static_cast<std::size_t>(i)] = unif(rng_t) < 1.0 / (1.0 + std::exp(-lp[i])) ? 1 : 0;

    auto rng_y = make_rng(derive_seed(cfg.seed, 14));
    auto y = gen_outcome(X, P, t, cfg.alpha, rng_y);
    return {std::move(t), std::move(y)};
}

namespace {

std::string unit_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "u%05d", i + 1);
    return buf;
}

Dataset build_units(const Eigen::MatrixXd& X, const std::vector<long long>& P,
                    const std::vector<int>& T, const std::vector<int>& community,
                    const std::vector<std::string>& names) {
    // The dataset encodes the investigation's view: the community is the
    // exposed group under study, truly unexposed units are candidate
    // controls, and exposed units outside the community are known-exposed
    // bystanders (no exposure value -> excluded from both sides of the
    // matched analysis, but still present for CDC/PR background rates).
    Dataset data;
    data.n_confounders = static_cast<int>(X.cols());
    data.confounder_names = names;
    std::vector<char> in_community(P.size(), 0);
    for (int i : community) in_community[static_cast<std::size_t>(i)] = 1;

    data.units.resize(P.size());
    for (std::size_t i = 0; i < P.size(); ++i) {
        UnitRecord& u = data.units[i];
        u.unit_id = unit_name(static_cast<int>(i));
        u.county_id = u.unit_id;
        u.population = P[i];
        if (in_community[i])
            u.exposure = 1;
        else if (T[i] == 0)
            u.exposure = 0;
        u.confounders.resize(X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j)
            u.confounders[static_cast<std::size_t>(j)] = X(static_cast<Eigen::Index>(i), j);
    }
    return data;
}

struct ArmTally {
    int n_ok = 0;
    int n_fail = 0;
    double sum_est = 0.0;
    double sum_width = 0.0;
    int n_cover_true = 0;
    int n_cover_null = 0;
    std::string first_error;
};

}  // namespace

SimReport run_simulation(const SimConfig& cfg, const std::vector<SimMethod>& methods,
                         const MatchSpec& match_spec) {
    validate_config(cfg);
    if (methods.empty()) throw ValidationError("no methods requested");

    const Eigen::MatrixXd X =
        gen_confounders(cfg.generator, cfg.n_units, derive_seed(cfg.seed, 11));
    const std::vector<long long> P =
        gen_populations(cfg.generator, cfg.n_units, derive_seed(cfg.seed, 12));

    // Exposure assignment, fixed across replicates.
    const Eigen::VectorXd lp = (X * cfg.gamma.tail(X.cols())).array() + cfg.gamma[0];
    auto rng_t = make_rng(derive_seed(cfg.seed, 13));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<int> t(static_cast<std::size_t>(cfg.n_units));
    std::vector<int> exposed_idx;
    for (int i = 0; i < cfg.n_units; ++i) {
        t[static_cast<std::size_t>(i)] =
            unif(rng_t) < 1.0 / (1.0 + std::exp(-lp[i])) ? 1 : 0;
        if (t[static_cast<std::size_t>(i)] == 1) exposed_idx.push_back(i);
    }
    if (static_cast<int>(exposed_idx.size()) < cfg.n_exposed_selected)
        throw ValidationError(
            "exposure draw produced " + std::to_string(exposed_idx.size()) +
            " exposed units; " + std::to_string(cfg.n_exposed_selected) +
            " were requested for the community");

    // The investigated community: a random subset of the exposed units,
    // fixed across replicates (partial Fisher-Yates for determinism).
    auto rng_c = make_rng(derive_seed(cfg.seed, 15));
    std::vector<int> community;
    for (int j = 0; j < cfg.n_exposed_selected; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, exposed_idx.size() - 1);
        std::swap(exposed_idx[static_cast<std::size_t>(j)], exposed_idx[pick(rng_c)]);
        community.push_back(exposed_idx[static_cast<std::size_t>(j)]);
    }
    std::sort(community.begin(), community.end());

    std::vector<std::string> names;
    for (const auto& c : cfg.generator.covariates) names.push_back(c.name);
    Dataset data = build_units(X, P, t, community, names);
    std::vector<std::string> community_ids;
    for (int i : community) community_ids.push_back(data.units[static_cast<std::size_t>(i)].unit_id);

    const bool want_cdc = std::find(methods.begin(), methods.end(), SimMethod::cdc) != methods.end();
    const bool want_pr = std::find(methods.begin(), methods.end(), SimMethod::pr) != methods.end();
    const bool want_csir = std::find(methods.begin(), methods.end(), SimMethod::csir) != methods.end();

    // Matching depends only on exposure, population, and confounders, all
    // fixed across replicates, so it runs once up front.
    MatchedDataset matched;
    std::string match_error;
    if (want_csir) {
        try {
            matched = match(data, match_spec);
        } catch (const std::exception& e) {
            match_error = e.what();
        }
    }

    const double true_sir = std::exp(cfg.alpha[1]);
    SimReport report;
    report.true_sir = true_sir;
    report.n_replicates = cfg.n_replicates;

    // Outcome-mean feasibility is deterministic given (X, P, T, alpha), so
    // an infeasible configuration fails here, once, rather than on every
    // replicate inside the workers.
    {
        auto probe = make_rng(derive_seed(cfg.seed, 1001));
        (void)gen_outcome(X, P, t, cfg.alpha, probe);
    }

    // Replicates run in parallel; each writes its rows into fixed slots in
    // arm order, so the report is identical for any worker count.
    std::vector<SimMethod> arms;
    if (want_cdc) arms.push_back(SimMethod::cdc);
    if (want_pr) arms.push_back(SimMethod::pr);
    if (want_csir) arms.push_back(SimMethod::csir);
    const std::size_t n_arms = arms.size();

    const auto n_reps = static_cast<std::size_t>(cfg.n_replicates);
    std::vector<ReplicateRow> rows(n_reps * n_arms);

    parallel_for(n_reps, cfg.n_threads, [&](std::size_t r) {
        const int rep = static_cast<int>(r) + 1;
        auto rng_y = make_rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(rep)));
        const std::vector<long long> y = gen_outcome(X, P, t, cfg.alpha, rng_y);
        Dataset local = data;
        for (std::size_t i = 0; i < y.size(); ++i) local.units[i].observed_count = y[i];

        for (std::size_t a = 0; a < n_arms; ++a) {
            ReplicateRow row;
            row.replicate = rep;
            row.method = arms[a];
            try {
                SirResult res;
                switch (arms[a]) {
                    case SimMethod::cdc:
                        res = cdc_sir_for_community(local, community_ids);
                        break;
                    case SimMethod::pr:
                        res = pr_sir_estimate(local, community_ids);
                        break;
                    case SimMethod::csir: {
                        if (!match_error.empty())
                            throw ValidationError("matching failed: " + match_error);
                        ChainConfig chain = cfg.chain;
                        chain.seed =
                            derive_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(rep));
                        res = csir_direct(local, matched, chain, cfg.prior_sd);
                        break;
                    }
                }
                row.ok = true;
                row.estimate = res.estimate;
                row.ci_low = res.ci_low;
                row.ci_high = res.ci_high;
            } catch (const std::exception& e) {
                row.ok = false;
                row.error = e.what();
            }
            rows[r * n_arms + a] = std::move(row);
        }
    });

    ArmTally tally_cdc, tally_pr, tally_csir;
    auto tally_of = [&](SimMethod m) -> ArmTally& {
        switch (m) {
            case SimMethod::cdc: return tally_cdc;
            case SimMethod::pr: return tally_pr;
            default: return tally_csir;
        }
    };
    for (const ReplicateRow& row : rows) {
        ArmTally& tally = tally_of(row.method);
        if (row.ok) {
            ++tally.n_ok;
            tally.sum_est += row.estimate;
            tally.sum_width += row.ci_high - row.ci_low;
            if (row.ci_low <= true_sir && true_sir <= row.ci_high) ++tally.n_cover_true;
            if (row.ci_low <= 1.0 && 1.0 <= row.ci_high) ++tally.n_cover_null;
        } else {
            ++tally.n_fail;
            if (tally.first_error.empty()) tally.first_error = row.error;
        }
    }
    report.replicates = std::move(rows);

    auto summarize = [&](SimMethod m, const ArmTally& tally) {
        MethodSummary s;
        s.method = m;
        s.n_ok = tally.n_ok;
        s.n_fail = tally.n_fail;
        if (tally.n_ok > 0) {
            s.bias = tally.sum_est / tally.n_ok - true_sir;
            s.coverage_true = static_cast<double>(tally.n_cover_true) / tally.n_ok;
            s.coverage_null = static_cast<double>(tally.n_cover_null) / tally.n_ok;
            s.mean_width = tally.sum_width / tally.n_ok;
        }
        report.summaries.push_back(s);
        if (tally.n_fail * 100 > cfg.n_replicates) {
            report.flags.push_back(
                to_string(m) + ": " + std::to_string(tally.n_fail) + " of " +
                std::to_string(cfg.n_replicates) + " replicates failed; first error: " +
                tally.first_error);
        }
    };
    if (want_cdc) summarize(SimMethod::cdc, tally_cdc);
    if (want_pr) summarize(SimMethod::pr, tally_pr);
    if (want_csir) summarize(SimMethod::csir, tally_csir);
    return report;
}

SimConfig table1_preset(int sim) {
    if (sim < 1 || sim > 4) throw ValidationError("simulation structure must be 1-4");

    SimConfig cfg;
    // Synthetic stand-ins for the eight area-level confounders, on the
    // magnitude scales the model coefficients expect.  Loadings on one
    // shared factor induce the collinearity that makes the confounding
    // realistic; bounded (uniform) margins keep the heavy coefficients from
    // producing astronomical Poisson means in the tails.
    cfg.generator.covariates = {
        {"money_food", MarginKind::lognormal, 300.0, 30.0, 0.70},
        {"money_smoke", MarginKind::uniform, 30.0, 20.0, 0.85},
        {"p65", MarginKind::normal, 15.0, 6.0, 0.80},
        {"p_male", MarginKind::normal, 50.0, 4.0, -0.20},
        {"p_white", MarginKind::normal, 88.0, 8.0, -0.80},
        {"unemploy", MarginKind::lognormal, 6.0, 5.0, 0.60},
        {"commute", MarginKind::normal, 25.0, 10.0, 0.50},
        {"income", MarginKind::lognormal, 137.0, 15.0, -0.75},
    };
    cfg.generator.pop_meanlog = 6.049;  // mean unit population ~ 480
    cfg.generator.pop_sdlog = 0.5;
    cfg.generator.pop_min = 50;

    const bool confounded = (sim == 2 || sim == 4);
    cfg.gamma.resize(9);
    if (confounded)
        cfg.gamma << 0.0, 0.0009, 0.015, 0.003, -0.001, -0.01, 0.004, 0.002, -0.01;
    else
        cfg.gamma << -1.15, 0, 0, 0, 0, 0, 0, 0, 0;

    cfg.alpha.resize(10);
    if (sim == 1)
        cfg.alpha << -5.99, 0, 0, 0, 0, 0, 0, 0, 0, 0;
    else
        cfg.alpha << -5.0, 0.0, 0.007, 0.015, 0.03, -0.001, -0.02, 0.004, 0.002, -0.005;

    cfg.n_units = 8000;
    cfg.n_exposed_selected = 10;
    cfg.n_replicates = 500;
    return cfg;
}

void set_true_sir(SimConfig& cfg, double sir) {
    if (cfg.alpha.size() < 2) throw ValidationError("alpha is not initialized");
    if (!(sir > 0.0) || !std::isfinite(sir))
        throw ValidationError("true SIR must be positive and finite");
    cfg.alpha[1] = std::log(sir);
}

Table sim_summary_table(const SimReport& report) {
    Table t;
    t.columns = {"method", "n_ok", "n_fail", "bias", "coverage_true",
                 "coverage_null", "mean_width"};
    for (const auto& s : report.summaries) {
        t.rows.push_back({to_string(s.method), std::to_string(s.n_ok),
                          std::to_string(s.n_fail), format_double(s.bias),
                          format_double(s.coverage_true), format_double(s.coverage_null),
                          format_double(s.mean_width)});
    }
    return t;
}

Table sim_replicates_table(const SimReport& report) {
    Table t;
    t.columns = {"replicate", "method", "ok", "estimate", "ci_low", "ci_high", "error"};
    for (const auto& r : report.replicates) {
        t.rows.push_back({std::to_string(r.replicate), to_string(r.method),
                          r.ok ? "1" : "0", format_double(r.estimate),
                          format_double(r.ci_low), format_double(r.ci_high), r.error});
    }
    return t;
}

Table null_coverage_curve(const std::vector<std::pair<double, SimReport>>& sweeps) {
    Table t;
    t.columns = {"true_sir", "method", "coverage_null"};
    for (const auto& [sir, report] : sweeps) {
        for (const auto& s : report.summaries) {
            t.rows.push_back({format_double(sir), to_string(s.method),
                              format_double(s.coverage_null)});
        }
    }
    return t;
}

}  // namespace csir
