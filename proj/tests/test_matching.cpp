#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "csir/common.hpp"
#include "csir/matching.hpp"
#include "helpers.hpp"

using namespace csir;
using testutil::UnitSpec;
using testutil::make_dataset;

namespace {

// Random dataset with two confounders: exposure loosely follows x1, so the
// exposed and control distributions overlap but differ.
Dataset random_match_pool(std::uint64_t seed, int n_exposed, int n_controls) {
    auto rng = make_rng(seed);
    std::normal_distribution<double> nd;
    std::vector<UnitSpec> specs;
    for (int i = 0; i < n_exposed; ++i) {
        specs.push_back({"e" + std::to_string(100 + i), "c1", 100, 1,
                         {nd(rng) + 1.0, nd(rng)}, 1});
    }
    for (int i = 0; i < n_controls; ++i) {
        specs.push_back({"k" + std::to_string(100 + i), "c1", 100, 0,
                         {nd(rng), nd(rng)}, 1});
    }
    return make_dataset(specs, 2);
}

// Straight re-implementation of greedy nearest-neighbor matching from the
// documented contract, used to cross-check match().
std::vector<std::vector<std::string>> brute_force_greedy(
    const Dataset& data, int ratio, bool replacement,
    const std::function<double(std::size_t, std::size_t)>& dist) {
    std::vector<std::size_t> exposed, controls;
    for (std::size_t i = 0; i < data.units.size(); ++i) {
        if (!data.units[i].exposure.has_value()) continue;
        if (*data.units[i].exposure == 1)
            exposed.push_back(i);
        else if (data.units[i].population > 0)
            controls.push_back(i);
    }
    std::sort(exposed.begin(), exposed.end(), [&](std::size_t a, std::size_t b) {
        return data.units[a].unit_id < data.units[b].unit_id;
    });
    std::set<std::size_t> used;
    std::vector<std::vector<std::string>> picked;
    for (std::size_t e : exposed) {
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t c : controls) {
            if (!replacement && used.count(c)) continue;
            cand.emplace_back(dist(e, c), c);
        }
        std::sort(cand.begin(), cand.end(), [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return data.units[a.second].unit_id < data.units[b.second].unit_id;
        });
        std::vector<std::string> ids;
        for (int k = 0; k < ratio; ++k) {
            ids.push_back(data.units[cand[static_cast<std::size_t>(k)].second].unit_id);
            if (!replacement) used.insert(cand[static_cast<std::size_t>(k)].second);
        }
        picked.push_back(std::move(ids));
    }
    return picked;
}

Eigen::MatrixXd control_cov_inverse(const Dataset& data) {
    std::vector<std::size_t> controls;
    for (std::size_t i = 0; i < data.units.size(); ++i) {
        if (data.units[i].exposure.has_value() && *data.units[i].exposure == 0 &&
            data.units[i].population > 0)
            controls.push_back(i);
    }
    Eigen::MatrixXd C(controls.size(), data.n_confounders);
    for (std::size_t r = 0; r < controls.size(); ++r)
        for (std::size_t j = 0; j < data.n_confounders; ++j)
            C(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
                data.units[controls[r]].confounders[j];
    const Eigen::RowVectorXd mu = C.colwise().mean();
    C.rowwise() -= mu;
    const Eigen::MatrixXd cov = C.transpose() * C / static_cast<double>(controls.size() - 1);
    return cov.inverse();
}

}  // namespace

TEST_SUITE("matching") {

TEST_CASE("mahalanobis_distance agrees with hand values and validates input") {
    Eigen::VectorXd a(2), b(2);
    a << 1.0, 2.0;
    b << 4.0, 6.0;
    const Eigen::MatrixXd id2 = Eigen::MatrixXd::Identity(2, 2);
    CHECK(mahalanobis_distance(a, b, id2) == doctest::Approx(5.0).epsilon(1e-14));

    Eigen::MatrixXd w = id2;
    w(0, 0) = 4.0;  // first coordinate weighted double after sqrt
    CHECK(mahalanobis_distance(a, b, w) ==
          doctest::Approx(std::sqrt(36.0 + 16.0)).epsilon(1e-14));

    Eigen::VectorXd short1(1);
    short1 << 1.0;
    CHECK_THROWS_AS((void)mahalanobis_distance(short1, b, id2), ValidationError);

    Eigen::MatrixXd asym(2, 2);
    asym << 1.0, 0.5, -0.5, 1.0;
    CHECK_THROWS_AS((void)mahalanobis_distance(a, b, asym), NumericError);

    Eigen::MatrixXd npd(2, 2);
    npd << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS((void)mahalanobis_distance(a, b, npd), NumericError);
}

TEST_CASE("match reproduces a brute-force greedy pass (mahalanobis)") {
    for (std::uint64_t seed : {11ULL, 12ULL, 13ULL}) {
        const Dataset ds = random_match_pool(seed, 6, 30);
        const Eigen::MatrixXd cov_inv = control_cov_inverse(ds);
        auto dist = [&](std::size_t a, std::size_t b) {
            Eigen::VectorXd da(2), db(2);
            da << ds.units[a].confounders[0], ds.units[a].confounders[1];
            db << ds.units[b].confounders[0], ds.units[b].confounders[1];
            return mahalanobis_distance(da, db, cov_inv);
        };
        for (int ratio : {1, 2}) {
            for (bool repl : {false, true}) {
                MatchSpec spec;
                spec.ratio = ratio;
                spec.replacement = repl;
                const MatchedDataset got = match(ds, spec);
                const auto want = brute_force_greedy(ds, ratio, repl, dist);
                REQUIRE(got.control_ids_per_exposed.size() == want.size());
                CHECK(got.control_ids_per_exposed == want);
            }
        }
    }
}

TEST_CASE("match reproduces a brute-force greedy pass (propensity)") {
    const Dataset ds = random_match_pool(21, 5, 25);
    const PropensityFit pf = fit_propensity(ds);
    std::vector<double> lp(ds.units.size(), 0.0);
    for (std::size_t r = 0; r < pf.unit_rows.size(); ++r)
        lp[pf.unit_rows[r]] = pf.linear(static_cast<Eigen::Index>(r));
    auto dist = [&](std::size_t a, std::size_t b) { return std::abs(lp[a] - lp[b]); };

    MatchSpec spec;
    spec.metric = MatchMetric::propensity_linear;
    spec.ratio = 2;
    const MatchedDataset got = match(ds, spec);
    CHECK(got.control_ids_per_exposed == brute_force_greedy(ds, 2, false, dist));
}

TEST_CASE("matching is invariant to affine confounder changes (mahalanobis)") {
    const Dataset ds = random_match_pool(31, 6, 30);
    MatchSpec spec;
    spec.ratio = 2;
    const MatchedDataset base = match(ds, spec);

    Dataset scaled = ds;
    for (auto& u : scaled.units) {
        u.confounders[0] = 7.0 * u.confounders[0] + 3.0;
        u.confounders[1] = -0.5 * u.confounders[1] + 100.0;
    }
    const MatchedDataset after = match(scaled, spec);
    CHECK(after.exposed_ids == base.exposed_ids);
    CHECK(after.control_ids_per_exposed == base.control_ids_per_exposed);
}

TEST_CASE("distance ties break toward the smaller control unit_id") {
    // kB and kA carry identical covariates, so their distances agree to the
    // bit; kB comes first in the file, so insertion order would pick kB.
    const Dataset ds = make_dataset(
        {
            {"e1", "c", 100, 1, {0.0, 0.0}, 1},
            {"kB", "c", 100, 0, {0.7, 0.3}, 1},
            {"kA", "c", 100, 0, {0.7, 0.3}, 1},
            {"kC", "c", 100, 0, {4.0, 1.0}, 1},
            {"kD", "c", 100, 0, {-3.0, 2.0}, 1},
            {"kE", "c", 100, 0, {2.0, -2.0}, 1},
        },
        2);
    MatchSpec spec;
    const MatchedDataset m = match(ds, spec);
    REQUIRE(m.control_ids_per_exposed.size() == 1);
    CHECK(m.control_ids_per_exposed[0][0] == "kA");

    MatchSpec two;
    two.ratio = 2;
    const MatchedDataset m2 = match(ds, two);
    CHECK(m2.control_ids_per_exposed[0] == std::vector<std::string>{"kA", "kB"});
}

TEST_CASE("exact_on restricts the candidate pool to the stratum") {
    // kFar shares the stratum; kNear does not, despite being closer.
    const Dataset ds = make_dataset(
        {
            {"e1", "c", 100, 1, {0.0, 1.0}, 1},
            {"kNear", "c", 100, 0, {0.1, 0.0}, 1},
            {"kFar", "c", 100, 0, {3.0, 1.0}, 1},
            {"k3", "c", 100, 0, {-1.0, 0.0}, 1},
            {"k4", "c", 100, 0, {2.0, 1.0}, 1},
        },
        2);
    MatchSpec spec;
    spec.exact_on = {1};
    const MatchedDataset m = match(ds, spec);
    CHECK(m.control_ids_per_exposed[0][0] == "k4");

    MatchSpec bad;
    bad.exact_on = {5};
    CHECK_THROWS_AS((void)match(ds, bad), ValidationError);
}

TEST_CASE("insufficient controls name the starved stratum") {
    const Dataset ds = make_dataset(
        {
            {"e1", "c", 100, 1, {0.0}, 1},
            {"e2", "c", 100, 1, {0.5}, 1},
            {"e3", "c", 100, 1, {10.0}, 1},
            {"k1", "c", 100, 0, {0.2}, 1},
            {"k2", "c", 100, 0, {9.0}, 1},
        },
        1);
    MatchSpec spec;  // 3 exposed x ratio 1 > 2 controls
    CHECK_THROWS_WITH_AS((void)match(ds, spec),
                         doctest::Contains("insufficient controls"), ValidationError);

    // With replacement a control can serve several exposed units.
    MatchSpec repl;
    repl.replacement = true;
    const MatchedDataset m = match(ds, repl);
    CHECK(m.control_ids_per_exposed ==
          std::vector<std::vector<std::string>>{{"k1"}, {"k1"}, {"k2"}});
}

TEST_CASE("zero-population controls are never eligible") {
    const Dataset ds = make_dataset(
        {
            {"e1", "c", 100, 1, {0.0}, 1},
            {"kZero", "c", 0, 0, {0.0}, 1},   // perfect covariate match, pop 0
            {"kPos", "c", 100, 0, {2.0}, 1},
            {"k2", "c", 100, 0, {5.0}, 1},
        },
        1);
    MatchSpec spec;
    const MatchedDataset m = match(ds, spec);
    CHECK(m.control_ids_per_exposed[0][0] == "kPos");
}

TEST_CASE("caliper requires the propensity metric and reports starvation") {
    const Dataset ds = random_match_pool(41, 4, 20);

    MatchSpec wrong;
    wrong.caliper = 0.1;
    CHECK_THROWS_WITH_AS((void)match(ds, wrong), doctest::Contains("propensity"),
                         ValidationError);

    MatchSpec neg;
    neg.metric = MatchMetric::propensity_linear;
    neg.caliper = -1.0;
    CHECK_THROWS_AS((void)match(ds, neg), ValidationError);

    MatchSpec tight;
    tight.metric = MatchMetric::propensity_linear;
    tight.caliper = 1e-12;
    CHECK_THROWS_WITH_AS((void)match(ds, tight), doctest::Contains("caliper"),
                         ValidationError);

    MatchSpec loose;
    loose.metric = MatchMetric::propensity_linear;
    loose.caliper = 1e6;
    const MatchedDataset m = match(ds, loose);
    CHECK(m.exposed_ids.size() == 4);
}

TEST_CASE("fit_propensity returns coherent scores") {
    const Dataset ds = random_match_pool(51, 10, 40);
    const PropensityFit pf = fit_propensity(ds);
    REQUIRE(pf.unit_rows.size() == 50);
    for (Eigen::Index i = 0; i < pf.score.size(); ++i) {
        CHECK(pf.score(i) > 0.0);
        CHECK(pf.score(i) < 1.0);
        CHECK(pf.linear(i) == doctest::Approx(logit(pf.score(i))).epsilon(1e-9));
    }
}

TEST_CASE("propensity separation failures advise a caliper") {
    // Exposure splits along the tiny difference of two near-collinear
    // confounders, which drives the standardized logistic coefficients past
    // the divergence bound.
    const Dataset ds = make_dataset(
        {
            {"e1", "c", 100, 1, {1.0, 1.0000001}, 1},
            {"e2", "c", 100, 1, {2.0, 2.0000002}, 1},
            {"e3", "c", 100, 1, {3.0, 3.0000001}, 1},
            {"k1", "c", 100, 0, {1.0, 0.9999999}, 1},
            {"k2", "c", 100, 0, {2.0, 1.9999998}, 1},
            {"k3", "c", 100, 0, {3.0, 2.9999999}, 1},
        },
        2);
    CHECK_THROWS_WITH_AS((void)fit_propensity(ds), doctest::Contains("caliper"),
                         NumericError);
}

TEST_CASE("balance_table hand value and flagging") {
    const Dataset ds = make_dataset(
        {
            {"e1", "c", 100, 1, {0.0}, 1},
            {"e2", "c", 100, 1, {2.0}, 1},
            {"k1", "c", 100, 0, {1.0}, 1},
            {"k2", "c", 100, 0, {3.0}, 1},
        },
        1);
    const auto rows = balance_table(ds, {0, 1}, {2, 3});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].covariate == "x1");
    // (mean_e - mean_c) / sd_e = (1 - 2) / sqrt(2)
    CHECK(rows[0].difference == doctest::Approx(-0.7071067811865475).epsilon(1e-12));
    CHECK(rows[0].flagged);

    const auto same = balance_table(ds, {0, 1}, {0, 1});
    CHECK(same[0].difference == doctest::Approx(0.0));
    CHECK_FALSE(same[0].flagged);
}

TEST_CASE("matching improves balance on a shifted pool") {
    const Dataset ds = random_match_pool(61, 8, 80);
    MatchSpec spec;
    spec.ratio = 2;
    const MatchedDataset m = match(ds, spec);
    REQUIRE(m.balance_before.size() == 2);
    REQUIRE(m.balance_after.size() == 2);
    // x1 is shifted by one control-sd in the exposed group; matching on it
    // must shrink the standardized difference.
    CHECK(std::abs(m.balance_after[0].difference) <
          std::abs(m.balance_before[0].difference));
}

TEST_CASE("matched pairs table round trip") {
    const Dataset ds = random_match_pool(71, 5, 25);
    MatchSpec spec;
    spec.ratio = 2;
    const MatchedDataset m = match(ds, spec);
    const Table t = matched_pairs_table(m);
    const MatchedDataset back = matched_pairs_from_table(t);
    CHECK(back.exposed_ids == m.exposed_ids);
    CHECK(back.control_ids_per_exposed == m.control_ids_per_exposed);
    REQUIRE(back.distances.size() == m.distances.size());
    for (std::size_t i = 0; i < m.distances.size(); ++i) {
        for (std::size_t k = 0; k < m.distances[i].size(); ++k) {
            CHECK(back.distances[i][k] == m.distances[i][k]);  // format_double exact
        }
    }

    Table broken = t;
    broken.rows.pop_back();  // rank 2 of the last exposed id disappears
    CHECK_THROWS_AS((void)matched_pairs_from_table(broken), ValidationError);
}

TEST_CASE("analysis_rows is the sorted distinct union") {
    const Dataset ds = make_dataset(
        {
            {"e1", "c", 100, 1, {0.0}, 1},
            {"e2", "c", 100, 1, {0.1}, 1},
            {"k1", "c", 100, 0, {0.2}, 1},
            {"k2", "c", 100, 0, {0.3}, 1},
        },
        1);
    MatchedDataset m;
    m.exposed_ids = {"e2", "e1"};
    m.control_ids_per_exposed = {{"k2"}, {"k2"}};  // shared control
    CHECK(m.analysis_rows(ds) == std::vector<std::size_t>{0, 1, 3});
}

TEST_CASE("match input validation") {
    const Dataset ds = random_match_pool(81, 3, 9);
    MatchSpec spec;
    spec.ratio = 0;
    CHECK_THROWS_AS((void)match(ds, spec), ValidationError);

    Dataset no_exposure = ds;
    for (auto& u : no_exposure.units) u.exposure.reset();
    CHECK_THROWS_AS((void)match(no_exposure, MatchSpec{}), ValidationError);
}

}  // TEST_SUITE("matching")
