#include "csir/disagg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "csir/common.hpp"
#include "csir/design.hpp"

namespace csir {

namespace {

// Per-county blocks rebuilt once per fit/prediction so the likelihood loop
// touches contiguous memory.
struct CountyBlock {
    std::string county_id;
    Eigen::MatrixXd Z;       // members x q
    Eigen::VectorXd log_pop;
    Eigen::VectorXd y;       // training only
    long long total = 0;     // K
    std::vector<std::size_t> unit_rows;
};

Eigen::Index predictor_count(const Dataset& data) {
    return static_cast<Eigen::Index>(data.n_confounders + data.n_extras);
}

CountyBlock build_block(const Dataset& data, const CountyGroup& g, bool need_y) {
    CountyBlock b;
    b.county_id = g.county_id;
    b.total = g.county_total;
    const Eigen::Index q = predictor_count(data);
    b.Z.resize(static_cast<Eigen::Index>(g.member_indices.size()), q);
    b.log_pop.resize(static_cast<Eigen::Index>(g.member_indices.size()));
    if (need_y) b.y.resize(static_cast<Eigen::Index>(g.member_indices.size()));
    Eigen::Index r = 0;
    for (std::size_t i : g.member_indices) {
        const UnitRecord& u = data.units[i];
        const Eigen::VectorXd z = stage1_predictors(data, i);
        if (!z.allFinite()) {
            throw ValidationError("unit " + u.unit_id + " has a non-finite predictor");
        }
        b.Z.row(r) = z.transpose();
        b.log_pop(r) = u.population > 0
                           ? std::log(static_cast<double>(u.population))
                           : -std::numeric_limits<double>::infinity();
        if (need_y) {
            if (!u.observed_count.has_value()) {
                throw ValidationError("unit " + u.unit_id +
                                      " in county " + g.county_id +
                                      " has no observed count");
            }
            b.y(r) = static_cast<double>(*u.observed_count);
        }
        b.unit_rows.push_back(i);
        ++r;
    }
    return b;
}

// log-likelihood contribution of one fully observed county:
//   sum_j y_j w_j - K * log(sum_l exp(w_l)),  w = Z beta + log P,
// evaluated with log-sum-exp; members with zero population carry w = -inf
// and must have y = 0 (validated before fitting).
double block_log_likelihood(const CountyBlock& b, const Eigen::VectorXd& beta) {
    const Eigen::VectorXd w = b.Z * beta + b.log_pop;
    double ll = b.y.dot(w.unaryExpr([](double v) {
        return std::isfinite(v) ? v : 0.0;  // y is 0 wherever w is -inf
    }));
    std::vector<double> finite;
    finite.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (std::isfinite(w(i))) finite.push_back(w(i));
    }
    const double k = b.y.sum();
    if (k > 0 && finite.empty()) {
        throw ValidationError("county " + b.county_id +
                              " has positive total but no positive-population members");
    }
    if (!finite.empty()) ll -= k * log_sum_exp(finite);
    return ll;
}

std::string stratum_of(std::size_t members) {
    if (members <= 1) return "1";
    if (members <= 5) return "2-5";
    if (members <= 20) return "6-20";
    return "21+";
}

}  // namespace

Eigen::VectorXd stage1_predictors(const Dataset& data, std::size_t unit_row) {
    const UnitRecord& u = data.units.at(unit_row);
    Eigen::VectorXd z(predictor_count(data));
    Eigen::Index c = 0;
    for (double v : u.confounders) z(c++) = v;
    for (double v : u.covariate_extras) z(c++) = v;
    return z;
}

double stage1_log_likelihood(const Eigen::VectorXd& beta, const Dataset& data,
                             const std::vector<CountyGroup>& groups) {
    if (beta.size() != predictor_count(data)) {
        throw ValidationError("beta dimension does not match the predictor count");
    }
    if (!beta.allFinite()) throw ValidationError("beta has non-finite entries");
    double ll = 0.0;
    for (const auto& g : groups) {
        const CountyBlock b = build_block(data, g, /*need_y=*/true);
        for (Eigen::Index i = 0; i < b.y.size(); ++i) {
            if (!std::isfinite(b.log_pop(i))) {
                if (b.y(i) > 0) {
                    throw ValidationError(
                        "unit " + data.units[b.unit_rows[static_cast<std::size_t>(i)]].unit_id +
                        " has a positive count but zero population");
                }
            }
        }
        ll += block_log_likelihood(b, beta);
    }
    return ll;
}

Stage1Fit fit_stage1(const Dataset& training, const std::vector<CountyGroup>& groups,
                     const ChainConfig& cfg, double prior_sd) {
    const Eigen::Index q = predictor_count(training);
    if (q < 1) throw ValidationError("the disaggregation model needs predictors");
    if (!(prior_sd > 0.0)) throw ValidationError("prior_sd must be positive");

    Stage1Fit fit;
    fit.predictor_names = training.confounder_names;
    fit.predictor_names.insert(fit.predictor_names.end(), training.extra_names.begin(),
                               training.extra_names.end());

    // Validate counties and keep the multi-member ones (single-member
    // counties contribute a constant to the likelihood).
    std::vector<CountyBlock> blocks;
    double total_count = 0.0;
    for (const auto& g : groups) {
        CountyBlock b = build_block(training, g, /*need_y=*/true);
        const double sum = b.y.sum();
        if (static_cast<long long>(sum) != g.county_total) {
            throw ValidationError("county " + g.county_id + " member counts sum to " +
                                  std::to_string(static_cast<long long>(sum)) +
                                  " but its total is " + std::to_string(g.county_total));
        }
        // Members without population cannot receive counts.
        std::vector<Eigen::Index> keep;
        for (Eigen::Index i = 0; i < b.y.size(); ++i) {
            if (std::isfinite(b.log_pop(i))) {
                keep.push_back(i);
            } else if (b.y(i) > 0) {
                throw ValidationError(
                    "unit " + training.units[b.unit_rows[static_cast<std::size_t>(i)]].unit_id +
                    " has a positive count but zero population");
            }
        }
        if (keep.empty()) {
            if (g.county_total > 0) {
                throw ValidationError("county " + g.county_id +
                                      " has a positive total but no positive-population members");
            }
            continue;
        }
        if (keep.size() != static_cast<std::size_t>(b.y.size())) {
            fit.warnings.push_back("county " + g.county_id +
                                   ": zero-population members excluded from the fit");
            CountyBlock trimmed;
            trimmed.county_id = b.county_id;
            trimmed.total = b.total;
            trimmed.Z.resize(static_cast<Eigen::Index>(keep.size()), q);
            trimmed.log_pop.resize(static_cast<Eigen::Index>(keep.size()));
            trimmed.y.resize(static_cast<Eigen::Index>(keep.size()));
            for (std::size_t r = 0; r < keep.size(); ++r) {
                trimmed.Z.row(static_cast<Eigen::Index>(r)) = b.Z.row(keep[r]);
                trimmed.log_pop(static_cast<Eigen::Index>(r)) = b.log_pop(keep[r]);
                trimmed.y(static_cast<Eigen::Index>(r)) = b.y(keep[r]);
                trimmed.unit_rows.push_back(b.unit_rows[static_cast<std::size_t>(keep[r])]);
            }
            b = std::move(trimmed);
        }
        if (b.unit_rows.size() < 2) continue;
        total_count += b.y.sum();
        fit.training_counties.push_back(g);
        blocks.push_back(std::move(b));
    }
    if (blocks.size() < 2) {
        throw ValidationError("need at least two counties with two or more members; have " +
                              std::to_string(blocks.size()));
    }

    // Column diagnosis: a county-level column cancels from pi identically
    // (hard error); a globally constant column is a flat direction that the
    // prior keeps proper (warning).
    for (Eigen::Index j = 0; j < q; ++j) {
        bool within_constant = true;
        double global_min = std::numeric_limits<double>::infinity();
        double global_max = -std::numeric_limits<double>::infinity();
        for (const auto& b : blocks) {
            const double lo = b.Z.col(j).minCoeff();
            const double hi = b.Z.col(j).maxCoeff();
            global_min = std::min(global_min, lo);
            global_max = std::max(global_max, hi);
            if (hi - lo > 1e-12 * std::max(1.0, std::abs(hi))) within_constant = false;
        }
        const bool globally_constant =
            global_max - global_min <= 1e-12 * std::max(1.0, std::abs(global_max));
        if (globally_constant) {
            fit.warnings.push_back("predictor " + fit.predictor_names[static_cast<std::size_t>(j)] +
                                   " is constant; its coefficient is not identifiable "
                                   "(posterior equals the prior)");
        } else if (within_constant) {
            throw ValidationError("predictor " + fit.predictor_names[static_cast<std::size_t>(j)] +
                                  " is constant within every county; county-level effects "
                                  "cancel from the constrained model");
        }
    }

    // Standardize the pooled member predictors.  The model is invariant to
    // column shifts (they cancel in pi), so centering needs no intercept;
    // the raw-scale map is the pure rescaling diag(1/s).
    Eigen::Index n_members = 0;
    for (const auto& b : blocks) n_members += b.Z.rows();
    Eigen::MatrixXd pooled(n_members, q);
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        pooled.middleRows(at, b.Z.rows()) = b.Z;
        at += b.Z.rows();
    }
    const StandardizedDesign std_z = standardize_design(pooled, true);
    std::vector<CountyBlock> std_blocks = blocks;
    at = 0;
    for (auto& b : std_blocks) {
        b.Z = std_z.X.middleRows(at, b.Z.rows());
        at += b.Z.rows();
    }

    const double inv_two_var = 0.5 / (prior_sd * prior_sd);
    auto target = [&](const Eigen::VectorXd& beta, std::size_t) {
        double ll = 0.0;
        for (const auto& b : std_blocks) ll += block_log_likelihood(b, beta);
        return ll - inv_two_var * beta.squaredNorm();
    };

    // Posterior scale is roughly 1/sqrt(total count) for standardized
    // predictors; seed the proposals there instead of at 1.
    const double guess = 2.4 / std::sqrt(std::max(1.0, total_count));
    const Eigen::VectorXd scales = Eigen::VectorXd::Constant(q, guess);
    fit.beta_samples = metropolis_rotating(target, 1, Eigen::VectorXd::Zero(q), cfg, &scales);

    // Back-transform draws to the raw predictor scale.
    for (Eigen::Index j = 0; j < q; ++j) {
        fit.beta_samples.draws.col(j) /= std_z.scale(j);
    }
    return fit;
}

PredictiveDraws predict_counts(const Stage1Fit& fit, const Dataset& data,
                               const std::vector<CountyGroup>& targets,
                               const std::vector<std::string>& keep_ids,
                               int m_draws, std::uint64_t seed) {
    if (m_draws < 1) throw ValidationError("number of predictive draws must be positive");
    if (targets.empty()) throw ValidationError("no target counties");
    const auto kept = fit.beta_samples.draws.rows();
    if (kept < 1) throw ValidationError("stage-1 fit holds no posterior draws");
    if (fit.beta_samples.draws.cols() != predictor_count(data)) {
        throw ValidationError("stage-1 fit and dataset disagree on predictor count");
    }

    std::vector<CountyBlock> blocks;
    blocks.reserve(targets.size());
    std::map<std::string, std::pair<std::size_t, std::size_t>> member_slot;  // id -> (block, row)
    PredictiveDraws out;
    for (std::size_t gi = 0; gi < targets.size(); ++gi) {
        if (targets[gi].county_total < 0) {
            throw ValidationError("county " + targets[gi].county_id + " has a negative total");
        }
        CountyBlock b = build_block(data, targets[gi], /*need_y=*/false);
        bool any_pop = false;
        for (Eigen::Index i = 0; i < b.log_pop.size(); ++i) {
            if (std::isfinite(b.log_pop(i))) any_pop = true;
        }
        if (!any_pop && b.total > 0) {
            throw ValidationError("county " + b.county_id +
                                  " has a positive total but no positive-population members");
        }
        for (std::size_t r = 0; r < b.unit_rows.size(); ++r) {
            member_slot[data.units[b.unit_rows[r]].unit_id] = {gi, r};
        }
        out.per_county_totals[b.county_id] = b.total;
        blocks.push_back(std::move(b));
    }

    out.unit_ids = keep_ids;
    std::vector<std::pair<std::size_t, std::size_t>> keep_slots;
    keep_slots.reserve(keep_ids.size());
    for (const auto& id : keep_ids) {
        const auto it = member_slot.find(id);
        if (it == member_slot.end()) {
            throw ValidationError("unit " + id + " is not a member of any target county");
        }
        keep_slots.push_back(it->second);
    }

    out.draws.assign(static_cast<std::size_t>(m_draws),
                     std::vector<long long>(keep_ids.size(), 0));
    std::map<std::string, std::pair<double, double>> stratum_acc;  // sum, sumsq
    std::map<std::string, long long> stratum_n;

    std::vector<std::vector<long long>> county_counts(blocks.size());
    for (int m = 1; m <= m_draws; ++m) {
        const auto idx = static_cast<Eigen::Index>(
            (static_cast<long long>(m - 1) * kept) / m_draws);
        const Eigen::VectorXd beta = fit.beta_samples.draws.row(idx).transpose();
        auto rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(m)));

        for (std::size_t gi = 0; gi < blocks.size(); ++gi) {
            const CountyBlock& b = blocks[gi];
            const Eigen::VectorXd w = b.Z * beta + b.log_pop;
            // pi via log-sum-exp over the positive-population members.
            std::vector<double> finite;
            finite.reserve(static_cast<std::size_t>(w.size()));
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                if (std::isfinite(w(i))) finite.push_back(w(i));
            }
            std::vector<double> pi(static_cast<std::size_t>(w.size()), 0.0);
            if (!finite.empty()) {
                const double lse = log_sum_exp(finite);
                for (Eigen::Index i = 0; i < w.size(); ++i) {
                    if (std::isfinite(w(i))) {
                        pi[static_cast<std::size_t>(i)] = std::exp(w(i) - lse);
                    }
                }
            }
            county_counts[gi] = multinomial_draw(rng, b.total, pi);
            long long check = 0;
            for (long long c : county_counts[gi]) check += c;
            if (check != b.total) {
                throw NumericError("county " + b.county_id + " draw sums to " +
                                   std::to_string(check) + " instead of " +
                                   std::to_string(b.total));
            }
            const std::string stratum = stratum_of(b.unit_rows.size());
            auto& acc = stratum_acc[stratum];
            for (long long c : county_counts[gi]) {
                const auto v = static_cast<double>(c);
                acc.first += v;
                acc.second += v * v;
                ++stratum_n[stratum];
            }
        }
        for (std::size_t k = 0; k < keep_slots.size(); ++k) {
            const auto [gi, r] = keep_slots[k];
            out.draws[static_cast<std::size_t>(m - 1)][k] = county_counts[gi][r];
        }
    }

    out.diagnostics["n_target_counties"] = std::to_string(blocks.size());
    out.diagnostics["n_draws"] = std::to_string(m_draws);
    for (const auto& [stratum, acc] : stratum_acc) {
        const double n = static_cast<double>(stratum_n[stratum]);
        const double mu = acc.first / n;
        const double var = n > 1 ? (acc.second - n * mu * mu) / (n - 1) : 0.0;
        std::ostringstream v;
        v << "mean=" << format_double(mu) << " var=" << format_double(var);
        if (mu > 0) v << " ratio=" << format_double(var / mu);
        out.diagnostics["draw_moments_county_size_" + stratum] = v.str();
    }
    return out;
}

Table predictive_draws_as_table(const PredictiveDraws& draws) {
    Table t;
    t.columns = {"m", "unit_id", "count"};
    for (std::size_t m = 0; m < draws.draws.size(); ++m) {
        for (std::size_t k = 0; k < draws.unit_ids.size(); ++k) {
            t.rows.push_back({std::to_string(m + 1), draws.unit_ids[k],
                              std::to_string(draws.draws[m][k])});
        }
    }
    return t;
}

PredictiveDraws predictive_draws_from_table(const Table& t) {
    const std::size_t cm = t.require("m");
    const std::size_t cu = t.require("unit_id");
    const std::size_t cc = t.require("count");

    PredictiveDraws out;
    std::map<std::string, std::size_t> col_of;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const long long m = parse_count(t.rows[r][cm], r + 1, "m");
        const std::string& id = t.rows[r][cu];
        const long long count = parse_count(t.rows[r][cc], r + 1, "count");
        if (m < 1) throw ValidationError("draw index must be >= 1 at data row " +
                                         std::to_string(r + 1));
        const auto mi = static_cast<std::size_t>(m - 1);
        if (out.draws.size() < mi + 1) out.draws.resize(mi + 1);
        auto it = col_of.find(id);
        if (it == col_of.end()) {
            it = col_of.emplace(id, out.unit_ids.size()).first;
            out.unit_ids.push_back(id);
        }
        auto& row = out.draws[mi];
        if (row.size() < out.unit_ids.size()) row.resize(out.unit_ids.size(), -1);
        if (it->second < row.size() && row[it->second] >= 0) {
            throw ValidationError("duplicate draw for unit " + id + " at m=" +
                                  std::to_string(m));
        }
        if (row.size() <= it->second) row.resize(it->second + 1, -1);
        row[it->second] = count;
    }
    for (std::size_t m = 0; m < out.draws.size(); ++m) {
        out.draws[m].resize(out.unit_ids.size(), -1);
        for (std::size_t k = 0; k < out.unit_ids.size(); ++k) {
            if (out.draws[m][k] < 0) {
                throw ValidationError("draw m=" + std::to_string(m + 1) +
                                      " is missing unit " + out.unit_ids[k]);
            }
        }
    }
    if (out.draws.empty()) throw ValidationError("draws table is empty");
    return out;
}

}  // namespace csir
