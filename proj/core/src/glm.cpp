#include "csir/glm.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "csir/common.hpp"
#include "csir/design.hpp"

namespace csir {

namespace {

constexpr double kZ975 = 1.959964;

void check_rank(const Eigen::MatrixXd& X) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    const auto rank = qr.rank();
    if (rank < X.cols()) {
        // The trailing pivots identify which columns are redundant.
        std::ostringstream msg;
        msg << "design matrix is rank deficient (rank " << rank << " of "
            << X.cols() << "); dependent columns:";
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index k = rank; k < X.cols(); ++k) {
            msg << ' ' << perm(k);
        }
        throw ValidationError(msg.str());
    }
}

double deviance_of(GlmFamily family, const Eigen::VectorXd& y,
                   const Eigen::VectorXd& mu) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (family == GlmFamily::poisson) {
            if (y(i) > 0) dev += y(i) * std::log(y(i) / mu(i)) - (y(i) - mu(i));
            else dev += mu(i);
        } else {
            const double p = std::clamp(mu(i), 1e-12, 1.0 - 1e-12);
            dev += -(y(i) * std::log(p) + (1.0 - y(i)) * std::log1p(-p));
        }
    }
    return 2.0 * dev;
}

}  // namespace

GlmFit fit_glm(GlmFamily family, const Eigen::VectorXd& y,
               const Eigen::MatrixXd& X, const Eigen::VectorXd& offset,
               const GlmOptions& opts) {
    const auto n = X.rows();
    const auto p = X.cols();
    if (y.size() != n || offset.size() != n) {
        throw ValidationError("response, design, and offset dimensions disagree");
    }
    if (n < p) {
        throw ValidationError("fewer observations than coefficients");
    }
    // With every count zero the Poisson intercept drifts to -inf; the fit is
    // still returned, but never declared converged.
    bool mle_at_boundary = false;
    if (family == GlmFamily::poisson) {
        if ((y.array() < 0).any()) throw ValidationError("negative count in Poisson response");
        mle_at_boundary = y.sum() == 0.0;
    } else {
        if (((y.array() != 0.0) && (y.array() != 1.0)).any()) {
            throw ValidationError("binomial response must be 0/1");
        }
        const double s = y.sum();
        if (s == 0.0 || s == static_cast<double>(n)) {
            throw ValidationError("binomial response is constant; both classes are required");
        }
    }

    StandardizedDesign std_x = standardize_design(X);
    check_rank(std_x.X);

    // Start from the family's conventional data-driven fit rather than
    // beta = 0: the first weighted solve then lands near the answer.
    Eigen::VectorXd mu(n), eta(n);
    if (family == GlmFamily::poisson) {
        mu = y.array() + 0.5;
        eta = mu.array().log();
    } else {
        mu = (y.array() + 0.5) / 2.0;
        eta = (mu.array() / (1.0 - mu.array())).log() + offset.array();
    }

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd info(p, p);
    double dev = deviance_of(family, y, mu);
    bool converged = false;
    int iterations = 0;

    for (int it = 1; it <= opts.max_iter; ++it) {
        iterations = it;
        Eigen::VectorXd w(n), z(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            // Canonical links: the weight equals d(mu)/d(eta).
            const double wi = family == GlmFamily::poisson
                                  ? std::max(mu(i), 1e-10)
                                  : std::max(mu(i) * (1.0 - mu(i)), 1e-10);
            w(i) = wi;
            z(i) = (eta(i) - offset(i)) + (y(i) - mu(i)) / wi;
        }
        const Eigen::MatrixXd xw = std_x.X.transpose() * w.asDiagonal();
        info = xw * std_x.X;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (ldlt.info() != Eigen::Success) {
            throw NumericError("weighted least squares system became singular at iteration " +
                               std::to_string(it));
        }
        const Eigen::VectorXd beta_prev = beta;
        beta = ldlt.solve(xw * z);
        const bool diverging =
            !beta.allFinite() || beta.cwiseAbs().maxCoeff() > opts.divergence_bound;
        if (diverging) {
            if (family == GlmFamily::binomial) {
                throw NumericError(
                    "perfect separation suspected: a standardized coefficient exceeded " +
                    std::to_string(opts.divergence_bound));
            }
            // Poisson divergence is reported as a flagged, non-converged fit.
            beta = beta_prev;
            break;
        }

        eta = std_x.X * beta + offset;
        if (family == GlmFamily::poisson) {
            mu = eta.array().exp();
        } else {
            mu = eta.unaryExpr([](double e) { return expit(e); });
        }
        const double dev_old = dev;
        dev = deviance_of(family, y, mu);
        if (!std::isfinite(dev)) {
            if (family == GlmFamily::binomial) {
                throw NumericError("deviance became non-finite at iteration " +
                                   std::to_string(it));
            }
            beta = beta_prev;
            eta = std_x.X * beta + offset;
            mu = eta.array().exp();
            dev = deviance_of(family, y, mu);
            break;
        }
        if (std::abs(dev - dev_old) / (std::abs(dev) + 0.1) < opts.tol) {
            converged = !mle_at_boundary;
            break;
        }
    }

    // Observed information at the final iterate (canonical links make the
    // expected and observed information coincide).
    {
        Eigen::VectorXd w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            w(i) = family == GlmFamily::poisson ? mu(i) : mu(i) * (1.0 - mu(i));
        }
        info = std_x.X.transpose() * w.asDiagonal() * std_x.X;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    Eigen::MatrixXd cov_std = ldlt.solve(Eigen::MatrixXd::Identity(p, p));

    // Map back to the raw predictor scale.
    const Eigen::MatrixXd a = std_x.raw_from_std();

    GlmFit fit;
    fit.family = family;
    fit.coefficients = a * beta;
    fit.covariance = a * cov_std * a.transpose();
    fit.deviance = dev;
    fit.iterations = iterations;
    fit.converged = converged;
    return fit;
}

GlmFit fit_poisson(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                   const Eigen::VectorXd& offset, const GlmOptions& opts) {
    return fit_glm(GlmFamily::poisson, y, X, offset, opts);
}

GlmFit fit_logistic(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                    const GlmOptions& opts) {
    return fit_glm(GlmFamily::binomial, y, X, Eigen::VectorXd::Zero(X.rows()), opts);
}

std::pair<double, double> wald_interval(const GlmFit& fit, int coefficient) {
    if (coefficient < 0 || coefficient >= fit.coefficients.size()) {
        throw ValidationError("coefficient index out of range");
    }
    const double se = std::sqrt(fit.covariance(coefficient, coefficient));
    const double b = fit.coefficients(coefficient);
    return {b - kZ975 * se, b + kZ975 * se};
}

double poisson_log_likelihood(const Eigen::VectorXd& beta,
                              const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& y,
                              const Eigen::VectorXd& offset) {
    const Eigen::VectorXd eta = X * beta + offset;
    return (y.array() * eta.array() - eta.array().exp()).sum();
}

OutcomeDesign build_outcome_design(const Dataset& data,
                                   const std::vector<std::size_t>& which,
                                   bool include_exposure) {
    std::vector<std::size_t> rows = which;
    if (rows.empty()) {
        rows.resize(data.units.size());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    }

    OutcomeDesign d;
    d.unit_rows.reserve(rows.size());
    for (std::size_t i : rows) {
        if (i >= data.units.size()) throw ValidationError("unit index out of range");
        const UnitRecord& u = data.units[i];
        if (u.population == 0) {
            ++d.n_skipped_zero_pop;
            continue;
        }
        if (!u.observed_count.has_value()) {
            throw ValidationError("unit " + u.unit_id + " has no observed count");
        }
        if (include_exposure && !u.exposure.has_value()) {
            throw ValidationError("unit " + u.unit_id + " has no exposure status");
        }
        d.unit_rows.push_back(i);
    }
    if (d.unit_rows.empty()) {
        throw ValidationError("no usable units for the outcome model");
    }

    const auto n = static_cast<Eigen::Index>(d.unit_rows.size());
    const auto p = static_cast<Eigen::Index>(1 + (include_exposure ? 1 : 0) +
                                             data.n_confounders);
    d.X.resize(n, p);
    d.y.resize(n);
    d.offset.resize(n);
    d.column_names.push_back("intercept");
    if (include_exposure) d.column_names.push_back("exposure");
    for (const auto& name : data.confounder_names) d.column_names.push_back(name);

    for (Eigen::Index r = 0; r < n; ++r) {
        const UnitRecord& u = data.units[d.unit_rows[static_cast<std::size_t>(r)]];
        Eigen::Index c = 0;
        d.X(r, c++) = 1.0;
        if (include_exposure) d.X(r, c++) = static_cast<double>(*u.exposure);
        for (double x : u.confounders) d.X(r, c++) = x;
        d.y(r) = static_cast<double>(*u.observed_count);
        d.offset(r) = std::log(static_cast<double>(u.population));
    }
    return d;
}

SirResult pr_sir_estimate(const Dataset& data,
                          const std::vector<std::string>& community_ids,
                          const GlmOptions& opts) {
    std::set<std::size_t> community;
    for (const auto& id : community_ids) {
        community.insert(data.index_of(id));
    }
    if (community.empty()) throw ValidationError("community is empty");

    // Assemble [1, community indicator, confounders] with log-population
    // offset over every usable unit.
    std::vector<std::size_t> rows;
    int skipped_zero_pop = 0;
    for (std::size_t i = 0; i < data.units.size(); ++i) {
        const UnitRecord& u = data.units[i];
        if (u.population == 0) {
            ++skipped_zero_pop;
            continue;
        }
        if (!u.observed_count.has_value()) {
            throw ValidationError("unit " + u.unit_id + " has no observed count");
        }
        rows.push_back(i);
    }
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto p = static_cast<Eigen::Index>(2 + data.n_confounders);
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd y(n), offset(n);
    int n_in_community = 0;
    for (Eigen::Index r = 0; r < n; ++r) {
        const std::size_t i = rows[static_cast<std::size_t>(r)];
        const UnitRecord& u = data.units[i];
        const bool member = community.count(i) > 0;
        n_in_community += member ? 1 : 0;
        X(r, 0) = 1.0;
        X(r, 1) = member ? 1.0 : 0.0;
        for (std::size_t j = 0; j < u.confounders.size(); ++j) {
            X(r, 2 + static_cast<Eigen::Index>(j)) = u.confounders[j];
        }
        y(r) = static_cast<double>(*u.observed_count);
        offset(r) = std::log(static_cast<double>(u.population));
    }
    if (n_in_community == 0 || n_in_community == static_cast<int>(n)) {
        throw ValidationError("community indicator is constant across usable units");
    }

    const GlmFit fit = fit_poisson(y, X, offset, opts);

    SirResult r;
    r.method = SirMethod::pr;
    r.estimate = std::exp(fit.coefficients(1));
    const auto [lo, hi] = wald_interval(fit, 1);
    r.ci_low = std::exp(lo);
    r.ci_high = std::exp(hi);
    r.n_exposed_units = n_in_community;
    r.diagnostics["iterations"] = std::to_string(fit.iterations);
    r.diagnostics["converged"] = fit.converged ? "yes" : "no";
    r.diagnostics["deviance"] = std::to_string(fit.deviance);
    r.diagnostics["alpha"] = "0.05";
    if (skipped_zero_pop > 0) {
        r.diagnostics["skipped_zero_population"] = std::to_string(skipped_zero_pop);
    }
    return r;
}

}  // namespace csir
