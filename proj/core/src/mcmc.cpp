#include "csir/mcmc.hpp"

#include <cmath>
#include <random>

#include "csir/common.hpp"
#include "csir/design.hpp"
#include "csir/glm.hpp"

namespace csir {

namespace {

void validate(const ChainConfig& cfg, Eigen::Index dim) {
    if (dim < 1) throw ValidationError("chain dimension must be positive");
    if (cfg.n_iter < 1) throw ValidationError("n_iter must be positive");
    if (cfg.burn_in < 0 || cfg.burn_in >= cfg.n_iter) {
        throw ValidationError("burn_in must lie in [0, n_iter)");
    }
    if (cfg.thin < 1) throw ValidationError("thin must be positive");
    if (!(cfg.target_accept > 0.0 && cfg.target_accept < 1.0)) {
        throw ValidationError("target_accept must lie in (0,1)");
    }
    if (cfg.adapt_window < 1) throw ValidationError("adapt_window must be positive");
}

}  // namespace

PosteriorSamples metropolis_rotating(const RotatingLogDensity& log_post,
                                     std::size_t n_outcomes,
                                     const Eigen::VectorXd& init,
                                     const ChainConfig& cfg,
                                     const Eigen::VectorXd* init_scales) {
    const Eigen::Index dim = init.size();
    validate(cfg, dim);
    if (n_outcomes == 0) throw ValidationError("need at least one outcome vector");

    Eigen::VectorXd x = init;
    double lp = log_post(x, 0);
    if (!std::isfinite(lp)) {
        throw ValidationError("log posterior is not finite at the initial point");
    }

    Eigen::VectorXd log_scale = Eigen::VectorXd::Zero(dim);
    if (init_scales != nullptr) {
        if (init_scales->size() != dim) {
            throw ValidationError("init_scales dimension mismatch");
        }
        for (Eigen::Index c = 0; c < dim; ++c) {
            const double s = (*init_scales)(c);
            log_scale(c) = std::log(s > 0.0 && std::isfinite(s) ? s : 1.0);
        }
    }
    Eigen::VectorXd scale = log_scale.array().exp();

    auto rng = make_rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    const int n_kept = (cfg.n_iter - cfg.burn_in) / cfg.thin;
    PosteriorSamples out;
    out.seed = cfg.seed;
    out.draws.resize(n_kept, dim);

    long long accepted = 0;
    long long burn_in_accepted = 0;
    Eigen::VectorXi window_accepts = Eigen::VectorXi::Zero(dim);
    int adapt_updates = 0;
    int kept = 0;
    std::size_t outcome = 0;

    for (int t = 1; t <= cfg.n_iter; ++t) {
        const std::size_t want =
            t <= cfg.burn_in
                ? 0
                : static_cast<std::size_t>(t - cfg.burn_in - 1) % n_outcomes;
        if (want != outcome) {
            outcome = want;
            // The retained state must be re-scored against the incoming
            // outcome before its first proposal is judged.
            lp = log_post(x, outcome);
            if (std::isnan(lp)) {
                throw NumericError("log posterior returned NaN at iteration " +
                                   std::to_string(t));
            }
        }
        for (Eigen::Index c = 0; c < dim; ++c) {
            const double step = normal(rng) * scale(c);
            const double u = unif(rng);
            Eigen::VectorXd prop = x;
            prop(c) += step;
            const double lp_prop = log_post(prop, outcome);
            if (std::isnan(lp_prop)) {
                throw NumericError("log posterior returned NaN at iteration " +
                                   std::to_string(t));
            }
            if (std::log(u) < lp_prop - lp) {
                x = std::move(prop);
                lp = lp_prop;
                ++accepted;
                if (t <= cfg.burn_in) ++burn_in_accepted;
                window_accepts(c) += 1;
            }
        }
        if (t <= cfg.burn_in && t % cfg.adapt_window == 0) {
            ++adapt_updates;
            const double eta = 1.0 / std::sqrt(static_cast<double>(adapt_updates));
            for (Eigen::Index c = 0; c < dim; ++c) {
                const double rate = static_cast<double>(window_accepts(c)) /
                                    static_cast<double>(cfg.adapt_window);
                log_scale(c) += eta * (rate - cfg.target_accept);
                window_accepts(c) = 0;
            }
            scale = log_scale.array().exp();
        }
        if (t == cfg.burn_in && cfg.burn_in > 0 && burn_in_accepted == 0) {
            throw NumericError(
                "no proposals accepted during burn-in; the target may be "
                "degenerate or the initial point pathological");
        }
        if (t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0 && kept < n_kept) {
            out.draws.row(kept++) = x.transpose();
        }
    }

    out.acceptance_rate = static_cast<double>(accepted) /
                          (static_cast<double>(cfg.n_iter) * static_cast<double>(dim));
    out.final_scales = scale;
    out.proposal_scale_final = std::exp(log_scale.mean());
    return out;
}

PosteriorSamples metropolis(const LogDensity& log_post, const Eigen::VectorXd& init,
                            const ChainConfig& cfg) {
    return metropolis_rotating(
        [&log_post](const Eigen::VectorXd& b, std::size_t) { return log_post(b); },
        1, init, cfg, nullptr);
}

PosteriorSamples sample_loglinear(const Eigen::MatrixXd& X,
                                  const std::vector<Eigen::VectorXd>& outcomes,
                                  const Eigen::VectorXd& offset,
                                  const ChainConfig& cfg, double prior_sd) {
    if (outcomes.empty()) throw ValidationError("need at least one outcome vector");
    if (!(prior_sd > 0.0)) throw ValidationError("prior_sd must be positive");
    for (const auto& y : outcomes) {
        if (y.size() != X.rows()) {
            throw ValidationError("outcome vector length does not match the design");
        }
        if ((y.array() < 0).any()) throw ValidationError("negative count in outcome");
    }
    if (offset.size() != X.rows()) {
        throw ValidationError("offset length does not match the design");
    }

    const StandardizedDesign std_x = standardize_design(X);
    const double inv_two_var = 0.5 / (prior_sd * prior_sd);
    auto target = [&](const Eigen::VectorXd& beta, std::size_t m) {
        return poisson_log_likelihood(beta, std_x.X, outcomes[m], offset) -
               inv_two_var * beta.squaredNorm();
    };

    // Start at the MLE of the first outcome when it exists; its standard
    // errors seed the proposal scales so adaptation has little left to do.
    Eigen::VectorXd init = Eigen::VectorXd::Zero(X.cols());
    Eigen::VectorXd scales = Eigen::VectorXd::Ones(X.cols());
    try {
        const GlmFit fit = fit_poisson(outcomes[0], std_x.X, offset);
        if (fit.coefficients.allFinite()) init = fit.coefficients;
        for (Eigen::Index c = 0; c < X.cols(); ++c) {
            const double se = std::sqrt(std::max(fit.covariance(c, c), 0.0));
            if (std::isfinite(se) && se > 0.0) scales(c) = 2.4 * se;
        }
    } catch (const std::runtime_error&) {
        // fall back to the origin with unit scales
    }
    if (!std::isfinite(target(init, 0))) init.setZero();

    PosteriorSamples samples =
        metropolis_rotating(target, outcomes.size(), init, cfg, &scales);

    // Back-transform every kept draw to the raw predictor scale.
    const Eigen::MatrixXd a = std_x.raw_from_std();
    samples.draws = samples.draws * a.transpose();
    return samples;
}

PosteriorSamples fit_bayes_loglinear(const Dataset& data,
                                     const MatchedDataset& matched,
                                     const ChainConfig& cfg, double prior_sd) {
    const OutcomeDesign d =
        build_outcome_design(data, matched.analysis_rows(data), true);
    return sample_loglinear(d.X, {d.y}, d.offset, cfg, prior_sd);
}

CsirSummary summarize_csir(const PosteriorSamples& samples, int coordinate,
                           double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ValidationError("credible level alpha must lie in (0, 1)");
    const auto kept = static_cast<std::size_t>(samples.draws.rows());
    if (kept == 0) throw ValidationError("no posterior draws to summarize");
    if (kept < 100) {
        throw ValidationError("a reported summary needs at least 100 kept draws, have " +
                              std::to_string(kept));
    }
    if (coordinate < 0 || coordinate >= samples.draws.cols()) {
        throw ValidationError("summary coordinate out of range");
    }

    std::vector<double> a1(kept);
    for (std::size_t i = 0; i < kept; ++i) {
        a1[i] = samples.draws(static_cast<Eigen::Index>(i), coordinate);
    }

    CsirSummary s;
    s.n_draws = kept;
    s.estimate = std::exp(mean(a1));
    // Order-statistic quantiles commute exactly with exp().
    s.ci_low = std::exp(quantile_order_stat(a1, alpha / 2.0));
    s.ci_high = std::exp(quantile_order_stat(a1, 1.0 - alpha / 2.0));
    s.ess = effective_sample_size(a1);
    return s;
}

Table draws_as_table(const PosteriorSamples& samples,
                     const std::vector<std::string>& names) {
    if (static_cast<Eigen::Index>(names.size()) != samples.draws.cols()) {
        throw ValidationError("draw column names do not match dimension");
    }
    Table t;
    t.columns.push_back("draw");
    for (const auto& n : names) t.columns.push_back(n);
    for (Eigen::Index i = 0; i < samples.draws.rows(); ++i) {
        std::vector<std::string> row;
        row.push_back(std::to_string(i + 1));
        for (Eigen::Index j = 0; j < samples.draws.cols(); ++j) {
            row.push_back(format_double(samples.draws(i, j)));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace csir
