#include "csir/estimators.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <set>

#include "csir/common.hpp"
#include "csir/glm.hpp"

namespace csir {

SirResult cdc_sir(long long observed, double expected, double alpha) {
    if (observed < 0) throw ValidationError("observed count must be nonnegative");
    if (!(expected > 0.0)) throw ValidationError("expected count must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0,1)");

    const double d = static_cast<double>(observed);
    SirResult r;
    r.method = SirMethod::cdc;
    r.estimate = d / expected;
    if (observed == 0) {
        r.ci_low = 0.0;
    } else {
        const boost::math::chi_squared lo_dist(2.0 * d);
        r.ci_low = boost::math::quantile(lo_dist, alpha / 2.0) / (2.0 * expected);
    }
    const boost::math::chi_squared hi_dist(2.0 * d + 2.0);
    r.ci_high = boost::math::quantile(hi_dist, 1.0 - alpha / 2.0) / (2.0 * expected);
    r.diagnostics["observed"] = std::to_string(observed);
    r.diagnostics["expected"] = format_double(expected);
    r.diagnostics["alpha"] = format_double(alpha);
    return r;
}

double expected_count(const std::vector<UnitRecord>& community,
                      const std::vector<UnitRecord>& background) {
    if (community.empty()) throw ValidationError("community is empty");
    if (background.empty()) throw ValidationError("background is empty");
    double bg_pop = 0.0, bg_count = 0.0, comm_pop = 0.0;
    for (const auto& u : background) {
        bg_pop += static_cast<double>(u.population);
        if (!u.observed_count.has_value()) {
            throw ValidationError("background unit " + u.unit_id + " has no observed count");
        }
        bg_count += static_cast<double>(*u.observed_count);
    }
    if (!(bg_pop > 0.0)) throw ValidationError("background population is zero");
    for (const auto& u : community) {
        comm_pop += static_cast<double>(u.population);
    }
    return bg_count / bg_pop * comm_pop;
}

SirResult cdc_sir_for_community(const Dataset& data,
                                const std::vector<std::string>& community_ids,
                                double alpha) {
    std::set<std::size_t> comm;
    for (const auto& id : community_ids) comm.insert(data.index_of(id));
    if (comm.empty()) throw ValidationError("community is empty");

    std::vector<UnitRecord> community, background;
    long long observed = 0;
    for (std::size_t i = 0; i < data.units.size(); ++i) {
        const UnitRecord& u = data.units[i];
        if (comm.count(i)) {
            if (!u.observed_count.has_value()) {
                throw ValidationError("community unit " + u.unit_id +
                                      " has no observed count");
            }
            observed += *u.observed_count;
            community.push_back(u);
        } else {
            background.push_back(u);
        }
    }
    if (background.empty()) {
        throw ValidationError("no background units outside the community");
    }
    SirResult r = cdc_sir(observed, expected_count(community, background), alpha);
    r.n_exposed_units = static_cast<int>(community.size());
    return r;
}

namespace {

SirResult summarize_into_result(const PosteriorSamples& samples, SirMethod method,
                                int n_exposed, double alpha) {
    const CsirSummary s = summarize_csir(samples, 1, alpha);
    SirResult r;
    r.method = method;
    r.estimate = s.estimate;
    r.ci_low = s.ci_low;
    r.ci_high = s.ci_high;
    r.n_exposed_units = n_exposed;
    r.diagnostics["kept_draws"] = std::to_string(s.n_draws);
    r.diagnostics["acceptance_rate"] = format_double(samples.acceptance_rate);
    r.diagnostics["ess_alpha1"] = format_double(s.ess);
    r.diagnostics["alpha"] = format_double(alpha);
    r.diagnostics["seed"] = std::to_string(samples.seed);
    return r;
}

}  // namespace

SirResult csir_direct(const Dataset& data, const MatchedDataset& matched,
                      const ChainConfig& cfg, double prior_sd, double alpha) {
    const PosteriorSamples samples = fit_bayes_loglinear(data, matched, cfg, prior_sd);
    return summarize_into_result(samples, SirMethod::csir_direct,
                                 static_cast<int>(matched.exposed_ids.size()), alpha);
}

SirResult csir_two_stage(const Dataset& data, const MatchedDataset& matched,
                         const PredictiveDraws& draws, const ChainConfig& cfg,
                         double prior_sd, double alpha) {
    const std::size_t m_draws = draws.draws.size();
    if (m_draws < 100) {
        throw ValidationError("two-stage estimation needs at least 100 predictive draws, have " +
                              std::to_string(m_draws));
    }
    for (const auto& row : draws.draws) {
        if (row.size() != draws.unit_ids.size()) {
            throw ValidationError("predictive draw rows disagree with the unit list");
        }
    }

    // Exposed rows first, then distinct controls (observed or imputed).
    std::vector<std::size_t> exposed_rows, control_rows;
    for (const auto& id : matched.exposed_ids) exposed_rows.push_back(data.index_of(id));
    {
        std::set<std::size_t> seen;
        for (const auto& ids : matched.control_ids_per_exposed) {
            for (const auto& id : ids) {
                const std::size_t row = data.index_of(id);
                if (seen.insert(row).second) control_rows.push_back(row);
            }
        }
    }
    std::map<std::string, std::size_t> draw_col;
    for (std::size_t k = 0; k < draws.unit_ids.size(); ++k) {
        draw_col[draws.unit_ids[k]] = k;
    }

    const auto n = static_cast<Eigen::Index>(exposed_rows.size() + control_rows.size());
    const auto p = static_cast<Eigen::Index>(2 + data.n_confounders);
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd offset(n);
    Eigen::VectorXd base(n);                       // observed counts; imputed slots filled per m
    std::vector<std::pair<Eigen::Index, std::size_t>> imputed;  // design row -> draw column

    Eigen::Index at = 0;
    auto add_unit = [&](std::size_t row, bool is_exposed) {
        const UnitRecord& u = data.units[row];
        if (u.population <= 0) {
            throw ValidationError("unit " + u.unit_id + " has no population");
        }
        X(at, 0) = 1.0;
        X(at, 1) = is_exposed ? 1.0 : 0.0;
        for (std::size_t j = 0; j < u.confounders.size(); ++j) {
            X(at, 2 + static_cast<Eigen::Index>(j)) = u.confounders[j];
        }
        offset(at) = std::log(static_cast<double>(u.population));
        if (u.observed_count.has_value()) {
            base(at) = static_cast<double>(*u.observed_count);
        } else if (!is_exposed && draw_col.count(u.unit_id)) {
            base(at) = 0.0;
            imputed.emplace_back(at, draw_col[u.unit_id]);
        } else if (is_exposed) {
            throw ValidationError("exposed unit " + u.unit_id + " has no observed count");
        } else {
            throw ValidationError("control " + u.unit_id +
                                  " has neither an observed count nor a predictive draw");
        }
        ++at;
    };
    for (std::size_t row : exposed_rows) add_unit(row, true);
    for (std::size_t row : control_rows) add_unit(row, false);

    std::vector<Eigen::VectorXd> outcomes(m_draws, base);
    for (std::size_t m = 0; m < m_draws; ++m) {
        for (const auto& [design_row, col] : imputed) {
            outcomes[m](design_row) = static_cast<double>(draws.draws[m][col]);
        }
    }

    const PosteriorSamples samples = sample_loglinear(X, outcomes, offset, cfg, prior_sd);
    SirResult r = summarize_into_result(samples, SirMethod::csir_two_stage,
                                        static_cast<int>(exposed_rows.size()), alpha);
    r.diagnostics["predictive_draws"] = std::to_string(m_draws);
    r.diagnostics["imputed_controls"] = std::to_string(imputed.size());
    r.diagnostics["observed_controls"] =
        std::to_string(control_rows.size() - imputed.size());
    return r;
}

}  // namespace csir
