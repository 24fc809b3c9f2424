#include "csir/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "csir/common.hpp"

namespace csir {

namespace {

std::string stratum_label(const Dataset& data,
                          const std::vector<std::size_t>& exact_on,
                          const std::vector<double>& key) {
    std::ostringstream out;
    for (std::size_t k = 0; k < exact_on.size(); ++k) {
        if (k > 0) out << ", ";
        out << data.confounder_names[exact_on[k]] << '=' << format_double(key[k]);
    }
    return out.str();
}

std::vector<double> stratum_key(const UnitRecord& u,
                                const std::vector<std::size_t>& exact_on) {
    std::vector<double> key;
    key.reserve(exact_on.size());
    for (std::size_t j : exact_on) key.push_back(u.confounders[j]);
    return key;
}

}  // namespace

double mahalanobis_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                            const Eigen::MatrixXd& cov_inv) {
    if (a.size() != b.size() || cov_inv.rows() != a.size() ||
        cov_inv.cols() != a.size()) {
        throw ValidationError("mahalanobis_distance: dimensions disagree");
    }
    const double scale = std::max(1.0, cov_inv.cwiseAbs().maxCoeff());
    if ((cov_inv - cov_inv.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
        throw NumericError("mahalanobis_distance: matrix is not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov_inv);
    if (llt.info() != Eigen::Success) {
        throw NumericError("mahalanobis_distance: matrix is not positive definite");
    }
    const Eigen::VectorXd d = a - b;
    return std::sqrt(std::max(0.0, d.dot(cov_inv * d)));
}

PropensityFit fit_propensity(const Dataset& data, const GlmOptions& opts) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.units.size(); ++i) {
        if (data.units[i].exposure.has_value()) rows.push_back(i);
    }
    if (rows.empty()) throw ValidationError("no units carry an exposure status");

    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto p = static_cast<Eigen::Index>(1 + data.n_confounders);
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd y(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const UnitRecord& u = data.units[rows[static_cast<std::size_t>(r)]];
        X(r, 0) = 1.0;
        for (std::size_t j = 0; j < u.confounders.size(); ++j) {
            X(r, 1 + static_cast<Eigen::Index>(j)) = u.confounders[j];
        }
        y(r) = static_cast<double>(*u.exposure);
    }

    PropensityFit fit;
    try {
        fit.glm = fit_logistic(y, X, opts);
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        if (msg.find("separation") != std::string::npos) {
            throw NumericError(msg + "; consider a caliper or exact matching constraints");
        }
        throw;
    }
    fit.linear = X * fit.glm.coefficients;
    fit.score = fit.linear.unaryExpr([](double v) { return expit(v); });
    fit.unit_rows = std::move(rows);
    return fit;
}

std::vector<BalanceRow> balance_table(const Dataset& data,
                                      const std::vector<std::size_t>& exposed_rows,
                                      const std::vector<std::size_t>& control_rows) {
    if (exposed_rows.empty() || control_rows.empty()) {
        throw ValidationError("balance table needs both exposed and control units");
    }
    std::vector<BalanceRow> out;
    out.reserve(data.n_confounders);
    for (std::size_t j = 0; j < data.n_confounders; ++j) {
        std::vector<double> xe, xc;
        xe.reserve(exposed_rows.size());
        xc.reserve(control_rows.size());
        for (std::size_t i : exposed_rows) xe.push_back(data.units[i].confounders[j]);
        for (std::size_t i : control_rows) xc.push_back(data.units[i].confounders[j]);
        const double me = mean(xe);
        const double mc = mean(xc);
        const double sde = xe.size() > 1 ? sample_sd(xe) : 0.0;

        BalanceRow row;
        row.covariate = data.confounder_names[j];
        if (sde > 0.0) {
            row.difference = (me - mc) / sde;
        } else if (me == mc) {
            row.difference = 0.0;
        } else {
            // Degenerate exposed sample: report an infinite imbalance
            // rather than failing.
            row.difference = me > mc ? std::numeric_limits<double>::infinity()
                                     : -std::numeric_limits<double>::infinity();
        }
        row.flagged = std::abs(row.difference) >= 0.2;
        out.push_back(std::move(row));
    }
    return out;
}

MatchedDataset match(const Dataset& data, const MatchSpec& spec) {
    if (spec.ratio < 1) throw ValidationError("matching ratio must be >= 1");
    for (std::size_t j : spec.exact_on) {
        if (j >= data.n_confounders) {
            throw ValidationError("exact_on index " + std::to_string(j) +
                                  " is out of range");
        }
    }
    if (spec.caliper.has_value()) {
        if (spec.metric != MatchMetric::propensity_linear) {
            throw ValidationError("a caliper requires the propensity metric");
        }
        if (*spec.caliper <= 0.0) throw ValidationError("caliper must be positive");
    }

    std::vector<std::size_t> exposed, controls;
    for (std::size_t i = 0; i < data.units.size(); ++i) {
        const UnitRecord& u = data.units[i];
        if (!u.exposure.has_value()) continue;
        if (*u.exposure == 1) {
            exposed.push_back(i);
        } else if (u.population > 0) {
            // Zero-population controls would drop out of the outcome model
            // later, so they are never eligible.
            controls.push_back(i);
        }
    }
    if (exposed.empty()) throw ValidationError("no exposed units to match");
    if (controls.empty()) throw ValidationError("no eligible control units");

    // Group by exact-matching stratum and verify each has a large enough
    // control pool before any selection starts.
    std::map<std::vector<double>, std::vector<std::size_t>> stratum_controls;
    std::map<std::vector<double>, int> stratum_exposed;
    for (std::size_t i : controls) {
        stratum_controls[stratum_key(data.units[i], spec.exact_on)].push_back(i);
    }
    for (std::size_t i : exposed) {
        ++stratum_exposed[stratum_key(data.units[i], spec.exact_on)];
    }
    for (const auto& [key, count] : stratum_exposed) {
        const auto it = stratum_controls.find(key);
        const std::size_t have = it == stratum_controls.end() ? 0 : it->second.size();
        const std::size_t need = spec.replacement
                                     ? static_cast<std::size_t>(spec.ratio)
                                     : static_cast<std::size_t>(spec.ratio) *
                                           static_cast<std::size_t>(count);
        if (have < need) {
            std::string where = spec.exact_on.empty()
                                    ? "the control pool"
                                    : "exact stratum (" +
                                          stratum_label(data, spec.exact_on, key) + ")";
            throw ValidationError("insufficient controls in " + where + ": need " +
                                  std::to_string(need) + ", have " +
                                  std::to_string(have));
        }
    }

    // Metric setup: one factorization / one propensity fit for the whole run.
    Eigen::LLT<Eigen::MatrixXd> chol;
    std::vector<double> lp(data.units.size(), 0.0);
    if (spec.metric == MatchMetric::mahalanobis) {
        if (data.n_confounders == 0) {
            throw ValidationError("mahalanobis matching needs at least one confounder");
        }
        if (controls.size() < 2) {
            throw ValidationError("need at least two controls to estimate a covariance");
        }
        Eigen::MatrixXd C(controls.size(), data.n_confounders);
        for (std::size_t r = 0; r < controls.size(); ++r) {
            const auto& x = data.units[controls[r]].confounders;
            for (std::size_t j = 0; j < data.n_confounders; ++j) {
                C(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = x[j];
            }
        }
        const Eigen::RowVectorXd mu = C.colwise().mean();
        C.rowwise() -= mu;
        const Eigen::MatrixXd cov =
            C.transpose() * C / static_cast<double>(controls.size() - 1);
        chol.compute(cov);
        if (chol.info() != Eigen::Success) {
            throw NumericError(
                "control-sample covariance is not positive definite; "
                "drop collinear or constant confounders");
        }
    } else {
        const PropensityFit pf = fit_propensity(data);
        for (std::size_t r = 0; r < pf.unit_rows.size(); ++r) {
            lp[pf.unit_rows[r]] = pf.linear(static_cast<Eigen::Index>(r));
        }
    }

    auto distance = [&](std::size_t a, std::size_t b) {
        if (spec.metric == MatchMetric::propensity_linear) {
            return std::abs(lp[a] - lp[b]);
        }
        const auto& xa = data.units[a].confounders;
        const auto& xb = data.units[b].confounders;
        Eigen::VectorXd d(static_cast<Eigen::Index>(xa.size()));
        for (std::size_t j = 0; j < xa.size(); ++j) {
            d(static_cast<Eigen::Index>(j)) = xa[j] - xb[j];
        }
        // cov = L L'  =>  d' cov^-1 d = ||L^-1 d||^2
        return std::sqrt(
            chol.matrixL().solve(d).squaredNorm());
    };

    // Greedy pass in ascending unit_id, ties toward the smaller control id.
    std::vector<std::size_t> order = exposed;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return data.units[a].unit_id < data.units[b].unit_id;
    });

    MatchedDataset out;
    std::set<std::size_t> used;
    std::vector<std::string> caliper_starved;
    for (std::size_t e : order) {
        const auto key = stratum_key(data.units[e], spec.exact_on);
        const auto& pool = stratum_controls[key];

        struct Cand {
            double dist;
            const std::string* id;
            std::size_t row;
        };
        std::vector<Cand> cand;
        cand.reserve(pool.size());
        for (std::size_t c : pool) {
            if (!spec.replacement && used.count(c)) continue;
            const double d = distance(e, c);
            if (spec.caliper.has_value() && d > *spec.caliper) continue;
            cand.push_back({d, &data.units[c].unit_id, c});
        }
        if (cand.size() < static_cast<std::size_t>(spec.ratio)) {
            // Only a caliper can starve a unit; pool sizes were checked above.
            caliper_starved.push_back(data.units[e].unit_id);
            continue;
        }
        const auto kth = cand.begin() + spec.ratio;
        std::partial_sort(cand.begin(), kth, cand.end(),
                          [](const Cand& a, const Cand& b) {
                              if (a.dist != b.dist) return a.dist < b.dist;
                              return *a.id < *b.id;
                          });

        out.exposed_ids.push_back(data.units[e].unit_id);
        std::vector<std::string> ids;
        std::vector<double> dists;
        for (int k = 0; k < spec.ratio; ++k) {
            ids.push_back(*cand[static_cast<std::size_t>(k)].id);
            dists.push_back(cand[static_cast<std::size_t>(k)].dist);
            if (!spec.replacement) used.insert(cand[static_cast<std::size_t>(k)].row);
        }
        out.control_ids_per_exposed.push_back(std::move(ids));
        out.distances.push_back(std::move(dists));
    }
    if (!caliper_starved.empty()) {
        std::string ids;
        for (const auto& id : caliper_starved) {
            if (!ids.empty()) ids += ", ";
            ids += id;
        }
        throw ValidationError("caliper leaves exposed units with fewer than " +
                              std::to_string(spec.ratio) + " matches: " + ids);
    }

    std::vector<std::size_t> matched_controls;
    for (const auto& ids : out.control_ids_per_exposed) {
        for (const auto& id : ids) matched_controls.push_back(data.index_of(id));
    }
    out.balance_before = balance_table(data, exposed, controls);
    out.balance_after = balance_table(data, exposed, matched_controls);
    return out;
}

std::vector<std::size_t> MatchedDataset::analysis_rows(const Dataset& data) const {
    std::set<std::size_t> rows;
    for (const auto& id : exposed_ids) rows.insert(data.index_of(id));
    for (const auto& ids : control_ids_per_exposed) {
        for (const auto& id : ids) rows.insert(data.index_of(id));
    }
    return {rows.begin(), rows.end()};
}

Table matched_pairs_table(const MatchedDataset& m) {
    Table t;
    t.columns = {"exposed_id", "rank", "control_id", "distance"};
    for (std::size_t e = 0; e < m.exposed_ids.size(); ++e) {
        for (std::size_t k = 0; k < m.control_ids_per_exposed[e].size(); ++k) {
            t.rows.push_back({m.exposed_ids[e], std::to_string(k + 1),
                              m.control_ids_per_exposed[e][k],
                              format_double(m.distances[e][k])});
        }
    }
    return t;
}

MatchedDataset matched_pairs_from_table(const Table& t) {
    const std::size_t c_exposed = t.require("exposed_id");
    const std::size_t c_rank = t.require("rank");
    const std::size_t c_control = t.require("control_id");
    const std::size_t c_dist = t.require("distance");

    MatchedDataset m;
    std::map<std::string, std::size_t> slot;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::string& exposed = t.rows[r][c_exposed];
        if (exposed.empty())
            throw ValidationError("matched pairs row " + std::to_string(r + 1) +
                                  ": empty exposed_id");
        auto [it, fresh] = slot.try_emplace(exposed, m.exposed_ids.size());
        if (fresh) {
            m.exposed_ids.push_back(exposed);
            m.control_ids_per_exposed.emplace_back();
            m.distances.emplace_back();
        }
        auto& controls = m.control_ids_per_exposed[it->second];
        const long long rank = parse_count(t.rows[r][c_rank], r + 1, "rank");
        if (rank != static_cast<long long>(controls.size()) + 1)
            throw ValidationError("matched pairs row " + std::to_string(r + 1) +
                                  ": rank " + std::to_string(rank) +
                                  " out of order for exposed unit '" + exposed +
                                  "' (expected " + std::to_string(controls.size() + 1) +
                                  ")");
        controls.push_back(t.rows[r][c_control]);
        m.distances[it->second].push_back(
            parse_double(t.rows[r][c_dist], r + 1, "distance"));
    }
    if (m.exposed_ids.empty()) throw ValidationError("matched pairs table is empty");
    const std::size_t k = m.control_ids_per_exposed.front().size();
    for (std::size_t e = 0; e < m.exposed_ids.size(); ++e) {
        if (m.control_ids_per_exposed[e].size() != k)
            throw ValidationError("exposed unit '" + m.exposed_ids[e] + "' has " +
                                  std::to_string(m.control_ids_per_exposed[e].size()) +
                                  " controls; expected " + std::to_string(k) +
                                  " to keep the ratio uniform");
    }
    return m;
}

Table balance_as_table(const std::vector<BalanceRow>& before,
                       const std::vector<BalanceRow>& after) {
    Table t;
    t.columns = {"covariate", "std_diff_before", "flag_before", "std_diff_after",
                 "flag_after"};
    for (std::size_t j = 0; j < before.size(); ++j) {
        const bool have_after = j < after.size();
        t.rows.push_back({before[j].covariate, format_double(before[j].difference),
                          before[j].flagged ? "1" : "0",
                          have_after ? format_double(after[j].difference) : "",
                          have_after ? (after[j].flagged ? "1" : "0") : ""});
    }
    return t;
}

}  // namespace csir
