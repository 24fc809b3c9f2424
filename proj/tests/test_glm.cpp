#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "csir/common.hpp"
#include "csir/glm.hpp"
#include "helpers.hpp"

using namespace csir;
using testutil::UnitSpec;
using testutil::make_dataset;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

}  // namespace

TEST_SUITE("glm") {

TEST_CASE("intercept-only Poisson has the closed-form MLE") {
    const Eigen::VectorXd y = vec({1, 2, 3});
    const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
    const Eigen::VectorXd off = Eigen::VectorXd::Zero(3);
    const GlmFit fit = fit_poisson(y, X, off);
    REQUIRE(fit.converged);
    CHECK(fit.coefficients(0) == doctest::Approx(std::log(2.0)).epsilon(1e-10));
    // Observed information = sum of fitted means = 6.
    CHECK(fit.covariance(0, 0) == doctest::Approx(1.0 / 6.0).epsilon(1e-8));
    // Deviance 2*sum(y log(y/mu) - (y - mu)), frozen independently.
    CHECK(fit.deviance == doctest::Approx(1.0464962875290957).epsilon(1e-10));
}

TEST_CASE("the offset enters with coefficient one") {
    const Eigen::VectorXd y = vec({3, 9});
    const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(2, 1);
    const Eigen::VectorXd off = vec({std::log(1.0), std::log(3.0)});
    const GlmFit fit = fit_poisson(y, X, off);
    // Rate MLE = (3+9)/(1+3) = 3.
    CHECK(fit.coefficients(0) == doctest::Approx(std::log(3.0)).epsilon(1e-10));
}

TEST_CASE("two-group Poisson recovers the log mean ratio") {
    const Eigen::VectorXd y = vec({1, 3, 2, 6});
    Eigen::MatrixXd X(4, 2);
    X << 1, 0, 1, 0, 1, 1, 1, 1;
    const GlmFit fit = fit_poisson(y, X, Eigen::VectorXd::Zero(4));
    CHECK(fit.coefficients(0) == doctest::Approx(std::log(2.0)).epsilon(1e-10));
    CHECK(fit.coefficients(1) == doctest::Approx(std::log(4.0) - std::log(2.0)).epsilon(1e-10));
}

TEST_CASE("score equations vanish at the reported Poisson optimum") {
    auto rng = make_rng(4242);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> up(std::log(50.0), std::log(500.0));
    for (int rep = 0; rep < 5; ++rep) {
        const int n = 120, p = 4;
        Eigen::MatrixXd X(n, p);
        Eigen::VectorXd off(n);
        const Eigen::VectorXd beta_true = vec({-4.0, 0.4, -0.25, 0.15});
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            X(i, 0) = 1.0;
            for (int j = 1; j < p; ++j) X(i, j) = nd(rng);
            off(i) = up(rng);
            const double mu = std::exp(X.row(i).dot(beta_true) + off(i));
            std::poisson_distribution<long> pd(mu);
            y(i) = static_cast<double>(pd(rng));
        }
        const GlmFit fit = fit_poisson(y, X, off);
        REQUIRE(fit.converged);
        const Eigen::VectorXd mu = (X * fit.coefficients + off).array().exp();
        const Eigen::VectorXd score = X.transpose() * (y - mu);
        CHECK(score.cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("score equations vanish at the reported logistic optimum") {
    auto rng = make_rng(777);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud;
    for (int rep = 0; rep < 5; ++rep) {
        const int n = 150, p = 3;
        Eigen::MatrixXd X(n, p);
        const Eigen::VectorXd beta_true = vec({0.2, 0.8, -0.5});
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            X(i, 0) = 1.0;
            for (int j = 1; j < p; ++j) X(i, j) = nd(rng);
            y(i) = ud(rng) < expit(X.row(i).dot(beta_true)) ? 1.0 : 0.0;
        }
        const GlmFit fit = fit_logistic(y, X);
        REQUIRE(fit.converged);
        Eigen::VectorXd mu(n);
        for (int i = 0; i < n; ++i) mu(i) = expit(X.row(i).dot(fit.coefficients));
        const Eigen::VectorXd score = X.transpose() * (y - mu);
        CHECK(score.cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("logistic closed forms") {
    SUBCASE("intercept only") {
        const Eigen::VectorXd y = vec({1, 1, 1, 0});
        const GlmFit fit = fit_logistic(y, Eigen::MatrixXd::Ones(4, 1));
        CHECK(fit.coefficients(0) == doctest::Approx(std::log(3.0)).epsilon(1e-8));
        // Information = n p (1-p) = 4 * 3/16.
        CHECK(fit.covariance(0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-6));
    }
    SUBCASE("two groups") {
        const Eigen::VectorXd y = vec({0, 1, 1, 1, 1, 0, 1});
        Eigen::MatrixXd X(7, 2);
        X << 1, 0, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1;
        const GlmFit fit = fit_logistic(y, X);
        CHECK(fit.coefficients(0) == doctest::Approx(std::log(2.0)).epsilon(1e-8));
        CHECK(fit.coefficients(1) ==
              doctest::Approx(std::log(3.0) - std::log(2.0)).epsilon(1e-8));
    }
}

TEST_CASE("wald_interval uses the 97.5% normal quantile") {
    const Eigen::VectorXd y = vec({1, 2, 3});
    const GlmFit fit = fit_poisson(y, Eigen::MatrixXd::Ones(3, 1), Eigen::VectorXd::Zero(3));
    const auto [lo, hi] = wald_interval(fit, 0);
    const double se = std::sqrt(fit.covariance(0, 0));
    CHECK(lo == doctest::Approx(fit.coefficients(0) - 1.959963984540054 * se).epsilon(1e-6));
    CHECK(hi == doctest::Approx(fit.coefficients(0) + 1.959963984540054 * se).epsilon(1e-6));
    CHECK_THROWS_AS((void)wald_interval(fit, 5), ValidationError);
}

TEST_CASE("rank-deficient designs are rejected, naming the redundancy") {
    Eigen::MatrixXd X(4, 3);
    X << 1, 2, 4, 1, 3, 6, 1, 5, 10, 1, 7, 14;  // col2 = 2*col1
    const Eigen::VectorXd y = vec({1, 2, 3, 4});
    CHECK_THROWS_AS((void)fit_poisson(y, X, Eigen::VectorXd::Zero(4)), ValidationError);
}

TEST_CASE("separation that sends standardized coefficients past the bound throws") {
    // Classes split along the tiny difference of two near-collinear columns,
    // so the separating direction needs opposite-signed coefficients beyond
    // the divergence bound on the standardized scale.
    Eigen::MatrixXd X(6, 3);
    X << 1, 1, 1.0000001, 1, 2, 2.0000002, 1, 3, 3.0000001,  //
        1, 1, 0.9999999, 1, 2, 1.9999998, 1, 3, 2.9999999;
    const Eigen::VectorXd y = vec({1, 1, 1, 0, 0, 0});
    CHECK_THROWS_WITH_AS((void)fit_logistic(y, X), doctest::Contains("separation"),
                         NumericError);
}

TEST_CASE("clean one-covariate separation converges at the boundary instead") {
    // Here the deviance collapses to ~0 long before any coefficient nears the
    // divergence bound, so the fit comes back ordinary-looking: saturated
    // probabilities, near-zero deviance.
    Eigen::MatrixXd X(4, 2);
    X << 1, -2, 1, -1, 1, 1, 1, 2;
    const Eigen::VectorXd y = vec({0, 0, 1, 1});
    const GlmFit fit = fit_logistic(y, X);
    CHECK(fit.deviance < 1e-6);
    CHECK(fit.coefficients(1) > 5.0);
}

TEST_CASE("degenerate responses") {
    const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
    const Eigen::VectorXd off = Eigen::VectorXd::Zero(3);

    // All-zero counts: the MLE sits at the boundary; the fit comes back
    // flagged as not converged rather than throwing.
    const GlmFit zero = fit_poisson(vec({0, 0, 0}), X, off);
    CHECK_FALSE(zero.converged);

    CHECK_THROWS_AS((void)fit_poisson(vec({1, -1, 2}), X, off), ValidationError);
    CHECK_THROWS_AS((void)fit_logistic(vec({0, 2, 1}), X), ValidationError);
    CHECK_THROWS_AS((void)fit_logistic(vec({1, 1, 1}), X), ValidationError);
    CHECK_THROWS_AS((void)fit_glm(GlmFamily::poisson, vec({1, 2}), X, off), ValidationError);
}

TEST_CASE("poisson_log_likelihood matches the direct formula") {
    auto rng = make_rng(5);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd X(6, 2);
    Eigen::VectorXd y(6), off(6);
    for (int i = 0; i < 6; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = nd(rng);
        off(i) = 0.5 * nd(rng);
        y(i) = static_cast<double>(i % 3);
    }
    const Eigen::VectorXd beta = vec({0.3, -0.7});
    const Eigen::VectorXd eta = X * beta + off;
    double expect = 0.0;
    for (int i = 0; i < 6; ++i) expect += y(i) * eta(i) - std::exp(eta(i));
    CHECK(poisson_log_likelihood(beta, X, y, off) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("coefficients are reported on the raw predictor scale") {
    auto rng = make_rng(31);
    std::normal_distribution<double> nd;
    const int n = 80;
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = nd(rng);
        std::poisson_distribution<long> pd(std::exp(1.0 + 0.5 * X(i, 1)));
        y(i) = static_cast<double>(pd(rng));
    }
    const GlmFit base = fit_poisson(y, X, Eigen::VectorXd::Zero(n));
    Eigen::MatrixXd Xs = X;
    Xs.col(1) *= 1000.0;
    const GlmFit scaled = fit_poisson(y, Xs, Eigen::VectorXd::Zero(n));
    CHECK(scaled.coefficients(1) * 1000.0 ==
          doctest::Approx(base.coefficients(1)).epsilon(1e-8));
    CHECK(scaled.deviance == doctest::Approx(base.deviance).epsilon(1e-10));
}

TEST_CASE("build_outcome_design lays out intercept, exposure, confounders") {
    const Dataset ds = make_dataset(
        {
            {"e1", "c1", 100, 1, {0.5, 2.0}, 4},
            {"c1u", "c1", 200, 0, {0.1, 1.0}, 3},
            {"zp", "c1", 0, 0, {0.2, 1.5}, 1},
        },
        2);
    const std::vector<std::size_t> all{0, 1, 2};
    const OutcomeDesign d = build_outcome_design(ds, all, true);
    CHECK(d.n_skipped_zero_pop == 1);
    REQUIRE(d.X.rows() == 2);
    CHECK(d.X.cols() == 4);
    CHECK(d.column_names.size() == 4);
    CHECK(d.column_names[0] == "intercept");
    CHECK(d.column_names[1] == "exposure");
    CHECK(d.X(0, 1) == 1.0);
    CHECK(d.X(1, 1) == 0.0);
    CHECK(d.X(0, 2) == 0.5);
    CHECK(d.offset(1) == doctest::Approx(std::log(200.0)).epsilon(1e-14));
    CHECK(d.unit_rows == std::vector<std::size_t>{0, 1});

    const OutcomeDesign no_t = build_outcome_design(ds, all, false);
    CHECK(no_t.X.cols() == 3);

    Dataset missing_y = ds;
    missing_y.units[0].observed_count.reset();
    CHECK_THROWS_AS((void)build_outcome_design(missing_y, all, true), ValidationError);

    Dataset missing_t = ds;
    missing_t.units[1].exposure.reset();
    CHECK_THROWS_AS((void)build_outcome_design(missing_t, all, true), ValidationError);
}

TEST_CASE("pr_sir_estimate equals the saturated two-group rate ratio") {
    // Community rate 10/1000, background rate 30/6000: ratio exactly 2.
    const Dataset ds = make_dataset(
        {
            {"m1", "c1", 400, 1, {}, 4},
            {"m2", "c1", 600, 1, {}, 6},
            {"b1", "c1", 2000, 0, {}, 10},
            {"b2", "c2", 1500, 0, {}, 8},
            {"b3", "c2", 1500, 0, {}, 7},
            {"b4", "c2", 1000, 0, {}, 5},
        },
        0);
    const SirResult r = pr_sir_estimate(ds, {"m1", "m2"});
    CHECK(r.method == SirMethod::pr);
    CHECK(r.estimate == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(r.ci_low < 2.0);
    CHECK(r.ci_high > 2.0);
    CHECK(r.n_exposed_units == 2);
    CHECK(r.diagnostics.at("alpha") == "0.05");

    CHECK_THROWS_AS((void)pr_sir_estimate(ds, {"nope"}), ValidationError);
    CHECK_THROWS_AS((void)pr_sir_estimate(ds, {}), ValidationError);
}

}  // TEST_SUITE("glm")
