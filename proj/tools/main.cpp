// csir: command-line surface over the cSIR pipeline.
//
// Subcommands: match | sir | csir | predict | simulate.  Machine-readable
// outputs are delimited tables; a human summary goes to standard output,
// warnings to standard error.  Every run that writes results also writes a
// JSON manifest recording the resolved configuration, input digests, output
// paths, seed, and timestamp.
//
// Exit codes: 0 success, 1 internal/numeric failure, 2 usage or validation
// error.  --dry-run validates flags and inputs, then exits before any
// fitting, sampling, or file writing; data-adaptive failures (an exhausted
// control pool, a non-converging fit) can still surface only in full runs.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "csir/common.hpp"
#include "csir/data_model.hpp"
#include "csir/disagg.hpp"
#include "csir/estimators.hpp"
#include "csir/glm.hpp"
#include "csir/matching.hpp"
#include "csir/mcmc.hpp"
#include "csir/report.hpp"
#include "csir/simlab.hpp"
#include "csir/table.hpp"
#include "manifest.hpp"

namespace {

using namespace csir;

// Seed streams: one master --seed per run, children derived per stage so
// adding a stage never shifts another stage's draws.
constexpr std::uint64_t kStreamStage1 = 21;
constexpr std::uint64_t kStreamPredict = 22;
constexpr std::uint64_t kStreamOutcomeChain = 23;

Dataset load_units_checked(const std::string& path, const std::string& role) {
    LoadResult lr = load_units_file(path);
    for (const auto& d : lr.diagnostics) {
        std::cerr << "warning: " << role << " file " << path;
        if (d.row > 0) std::cerr << ", row " << d.row;
        std::cerr << ": " << d.message << "\n";
    }
    if (lr.dataset.units.empty())
        throw ValidationError(role + " file has no valid units: " + path);
    return std::move(lr.dataset);
}

void require_alpha_in_range(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ConfigError("--alpha must lie strictly between 0 and 1");
}

void require_counts(const Dataset& data, const std::vector<std::size_t>& rows,
                    const std::string& role, const std::string& advice) {
    for (std::size_t i : rows) {
        if (!data.units[i].observed_count.has_value())
            throw ValidationError(role + " unit " + data.units[i].unit_id +
                                  " has no observed count (y)" + advice);
    }
}

std::vector<std::size_t> all_rows(const Dataset& data) {
    std::vector<std::size_t> rows(data.units.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return rows;
}

/// Two-column (field, value) rendering of an estimate, the stable
/// machine-readable result format shared by sir and csir.
Table result_as_table(const SirResult& r) {
    Table t;
    t.columns = {"field", "value"};
    t.rows.push_back({"method", to_string(r.method)});
    t.rows.push_back({"estimate", format_double(r.estimate)});
    t.rows.push_back({"ci_low", format_double(r.ci_low)});
    t.rows.push_back({"ci_high", format_double(r.ci_high)});
    t.rows.push_back({"exposed_units", std::to_string(r.n_exposed_units)});
    for (const auto& [key, value] : r.diagnostics) t.rows.push_back({key, value});
    return t;
}

std::string default_manifest_path(const std::string& primary_output) {
    return primary_output + ".manifest.json";
}

void check_same_predictors(const Dataset& a, const std::string& a_role,
                           const Dataset& b, const std::string& b_role) {
    if (a.confounder_names != b.confounder_names || a.extra_names != b.extra_names)
        throw ValidationError(a_role + " and " + b_role +
                              " files disagree on predictor columns");
}

MatchMetric metric_from_name(const std::string& name) {
    return name == "mahalanobis" ? MatchMetric::mahalanobis
                                 : MatchMetric::propensity_linear;
}

Table prepend_column(Table t, const std::string& name, const std::string& value) {
    t.columns.insert(t.columns.begin(), name);
    for (auto& row : t.rows) row.insert(row.begin(), value);
    return t;
}

void append_rows(Table& into, const Table& from) {
    if (into.columns.empty()) {
        into = from;
        return;
    }
    into.rows.insert(into.rows.end(), from.rows.begin(), from.rows.end());
}

// ---------------------------------------------------------------------------
// match
// ---------------------------------------------------------------------------

struct MatchOpts {
    std::string units, out_pairs, out_balance, manifest;
    int ratio = 1;
    std::string metric = "mahalanobis";
    std::vector<std::size_t> exact_on;
    bool replacement = false;
    std::optional<double> caliper;
    bool dry_run = false;
};

void run_match(const MatchOpts& o) {
    MatchSpec spec;
    spec.ratio = o.ratio;
    spec.metric = metric_from_name(o.metric);
    spec.exact_on = o.exact_on;
    spec.replacement = o.replacement;
    spec.caliper = o.caliper;
    if (spec.caliper.has_value() && spec.metric != MatchMetric::propensity_linear)
        throw ConfigError("--caliper requires --metric propensity-linear");
    if (spec.ratio < 1) throw ConfigError("--ratio must be at least 1");

    const Dataset data = load_units_checked(o.units, "units");
    for (std::size_t j : spec.exact_on) {
        if (j >= data.n_confounders)
            throw ValidationError("--exact-on index " + std::to_string(j) +
                                  " is out of range; the units file has " +
                                  std::to_string(data.n_confounders) + " confounders");
    }

    if (o.dry_run) {
        std::cout << "dry run: inputs validated\n";
        return;
    }

    const MatchedDataset m = match(data, spec);
    write_table_file(o.out_pairs, matched_pairs_table(m));
    write_table_file(o.out_balance, balance_as_table(m.balance_before, m.balance_after));

    auto worst = [](const std::vector<BalanceRow>& rows) {
        double w = 0.0;
        for (const auto& r : rows) w = std::max(w, std::abs(r.difference));
        return w;
    };
    std::string flagged;
    for (const auto& r : m.balance_after)
        if (r.flagged) flagged += (flagged.empty() ? "" : ", ") + r.covariate;
    std::cout << "matched " << m.exposed_ids.size() << " exposed units, " << o.ratio
              << " controls each (" << o.metric << ")\n";
    if (!m.balance_after.empty()) {
        std::cout << "worst |std diff|: " << format_double(worst(m.balance_before))
                  << " before -> " << format_double(worst(m.balance_after))
                  << " after\n";
        std::cout << "flagged covariates after matching: "
                  << (flagged.empty() ? "none" : flagged) << "\n";
    }
    std::cout << "wrote " << o.out_pairs << " and " << o.out_balance << "\n";

    cli::RunManifest man;
    man.command = "match";
    man.config = {{"units", o.units},
                  {"ratio", std::to_string(o.ratio)},
                  {"metric", o.metric},
                  {"replacement", o.replacement ? "1" : "0"}};
    if (!o.exact_on.empty()) {
        std::string joined;
        for (std::size_t j : o.exact_on)
            joined += (joined.empty() ? "" : ",") + std::to_string(j);
        man.config["exact_on"] = joined;
    }
    if (o.caliper.has_value()) man.config["caliper"] = format_double(*o.caliper);
    man.inputs[o.units] = cli::digest_file(o.units);
    man.outputs = {o.out_pairs, o.out_balance};
    cli::write_manifest_file(
        o.manifest.empty() ? default_manifest_path(o.out_pairs) : o.manifest, man);
}

// ---------------------------------------------------------------------------
// sir
// ---------------------------------------------------------------------------

struct SirOpts {
    std::string community, background, out, manifest;
    double alpha = 0.05;
    bool dry_run = false;
};

void run_sir(const SirOpts& o) {
    require_alpha_in_range(o.alpha);
    const Dataset comm = load_units_checked(o.community, "community");
    const Dataset back = load_units_checked(o.background, "background");
    require_counts(comm, all_rows(comm), "community", "");
    require_counts(back, all_rows(back), "background", "");
    for (const auto& u : comm.units) {
        if (back.find_unit(u.unit_id) != nullptr)
            throw ValidationError("unit " + u.unit_id +
                                  " appears in both the community and background files");
    }

    if (o.dry_run) {
        std::cout << "dry run: inputs validated\n";
        return;
    }

    long long observed = 0;
    for (const auto& u : comm.units) observed += *u.observed_count;
    SirResult res = cdc_sir(observed, expected_count(comm.units, back.units), o.alpha);
    res.n_exposed_units = static_cast<int>(comm.units.size());

    std::cout << render_result(res);
    write_table_file(o.out, result_as_table(res));

    cli::RunManifest man;
    man.command = "sir";
    man.config = {{"community", o.community},
                  {"background", o.background},
                  {"alpha", format_double(o.alpha)}};
    man.inputs[o.community] = cli::digest_file(o.community);
    man.inputs[o.background] = cli::digest_file(o.background);
    man.outputs = {o.out};
    cli::write_manifest_file(o.manifest.empty() ? default_manifest_path(o.out) : o.manifest,
                             man);
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct ChainFlags {
    int iters = 50000;
    int burn_in = 10000;
    int thin = 10;
};

void add_chain_flags(CLI::App* cmd, ChainFlags& c) {
    cmd->add_option("--iters", c.iters, "Metropolis sweeps per chain")
        ->capture_default_str();
    cmd->add_option("--burn-in", c.burn_in, "sweeps discarded while proposals adapt")
        ->capture_default_str();
    cmd->add_option("--thin", c.thin, "keep every thin-th post-burn-in sweep")
        ->capture_default_str();
}

ChainConfig chain_from(const ChainFlags& f, std::uint64_t seed) {
    ChainConfig cfg;
    cfg.n_iter = f.iters;
    cfg.burn_in = f.burn_in;
    cfg.thin = f.thin;
    cfg.seed = seed;
    return cfg;
}

void put_chain_config(std::map<std::string, std::string>& config, const ChainFlags& f) {
    config["iters"] = std::to_string(f.iters);
    config["burn_in"] = std::to_string(f.burn_in);
    config["thin"] = std::to_string(f.thin);
}

struct PredictOpts {
    std::string training, targets, totals, out, manifest;
    int m_draws = 1000;
    ChainFlags chain;
    std::uint64_t seed = 0;
    double prior_sd = 10.0;
    bool dry_run = false;
};

void run_predict(const PredictOpts& o) {
    if (o.m_draws < 1) throw ConfigError("--m-draws must be positive");
    if (o.prior_sd <= 0.0) throw ConfigError("--prior-sd must be positive");

    const Dataset training = load_units_checked(o.training, "training");
    const Dataset targets = load_units_checked(o.targets, "targets");
    require_counts(training, all_rows(training), "training", "");
    check_same_predictors(training, "training", targets, "targets");
    const auto totals = load_county_totals_file(o.totals);

    std::map<std::string, long long> training_totals;
    for (const auto& u : training.units) training_totals[u.county_id] += *u.observed_count;
    const GroupResult train_groups = group_by_county(training, training_totals);
    const GroupResult target_groups = group_by_county(targets, totals);
    for (const auto& d : target_groups.diagnostics)
        std::cerr << "warning: targets: " << d.message << "\n";

    if (o.dry_run) {
        std::cout << "dry run: inputs validated\n";
        return;
    }

    const Stage1Fit fit = fit_stage1(training, train_groups.groups,
                                     chain_from(o.chain, derive_seed(o.seed, kStreamStage1)),
                                     o.prior_sd);
    for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";

    std::vector<std::string> keep_ids;
    for (const auto& u : targets.units) keep_ids.push_back(u.unit_id);
    const PredictiveDraws draws =
        predict_counts(fit, targets, target_groups.groups, keep_ids, o.m_draws,
                       derive_seed(o.seed, kStreamPredict));
    write_table_file(o.out, predictive_draws_as_table(draws));

    std::cout << "stage-1 fit: " << fit.predictor_names.size() << " predictors on "
              << train_groups.groups.size() << " training counties (acceptance "
              << format_double(fit.beta_samples.acceptance_rate) << ")\n";
    std::cout << "wrote " << o.m_draws << " predictive draws for " << keep_ids.size()
              << " units in " << target_groups.groups.size() << " counties to " << o.out
              << "\n";

    cli::RunManifest man;
    man.command = "predict";
    man.config = {{"training", o.training}, {"targets", o.targets},
                  {"totals", o.totals},     {"m_draws", std::to_string(o.m_draws)},
                  {"seed", std::to_string(o.seed)},
                  {"prior_sd", format_double(o.prior_sd)}};
    put_chain_config(man.config, o.chain);
    man.seed = o.seed;
    man.inputs[o.training] = cli::digest_file(o.training);
    man.inputs[o.targets] = cli::digest_file(o.targets);
    man.inputs[o.totals] = cli::digest_file(o.totals);
    man.outputs = {o.out};
    cli::write_manifest_file(o.manifest.empty() ? default_manifest_path(o.out) : o.manifest,
                             man);
}

// ---------------------------------------------------------------------------
// csir
// ---------------------------------------------------------------------------

struct CsirOpts {
    std::string units, matched, training, totals, draws_file, out, out_draws, manifest;
    int m_draws = 1000;
    ChainFlags chain;
    std::uint64_t seed = 0;
    double prior_sd = 10.0;
    double alpha = 0.05;
    bool dry_run = false;
};

std::vector<CountyGroup> target_groups_for(const Dataset& data,
                                           const std::set<std::string>& counties,
                                           const std::map<std::string, long long>& totals) {
    std::vector<CountyGroup> groups;
    for (const auto& county : counties) {
        const auto it = totals.find(county);
        if (it == totals.end())
            throw ValidationError("county " + county +
                                  " of a matched control is missing from the totals file");
        CountyGroup g;
        g.county_id = county;
        g.county_total = it->second;
        std::vector<std::pair<std::string, std::size_t>> members;
        for (std::size_t i = 0; i < data.units.size(); ++i) {
            if (data.units[i].county_id == county)
                members.emplace_back(data.units[i].unit_id, i);
        }
        std::sort(members.begin(), members.end());
        for (const auto& [id, row] : members) g.member_indices.push_back(row);
        groups.push_back(std::move(g));
    }
    return groups;
}

void run_csir(const CsirOpts& o) {
    require_alpha_in_range(o.alpha);
    if (o.m_draws < 1) throw ConfigError("--m-draws must be positive");
    if (o.prior_sd <= 0.0) throw ConfigError("--prior-sd must be positive");
    const bool two_stage_fit = !o.training.empty();
    const bool two_stage_file = !o.draws_file.empty();

    const Dataset data = load_units_checked(o.units, "units");
    const MatchedDataset matched = matched_pairs_from_table(read_table_file(o.matched));

    std::vector<std::size_t> exposed_rows;
    std::vector<std::size_t> control_rows;
    {
        std::set<std::string> seen;
        auto locate = [&](const std::string& id, std::vector<std::size_t>& rows) {
            if (data.find_unit(id) == nullptr)
                throw ValidationError("matched unit " + id +
                                      " is absent from the units file");
            if (seen.insert(id).second) rows.push_back(data.index_of(id));
        };
        for (const auto& id : matched.exposed_ids) locate(id, exposed_rows);
        for (const auto& ids : matched.control_ids_per_exposed)
            for (const auto& id : ids) locate(id, control_rows);
    }
    require_counts(data, exposed_rows, "exposed", "");

    // Controls lacking counts force two-stage mode; an imputation source
    // makes the run two-stage regardless.
    std::vector<std::string> unobserved_controls;
    for (std::size_t i : control_rows) {
        if (!data.units[i].observed_count.has_value())
            unobserved_controls.push_back(data.units[i].unit_id);
    }
    if (!two_stage_fit && !two_stage_file && !unobserved_controls.empty()) {
        throw ValidationError(
            "matched control " + unobserved_controls.front() +
            " has no observed count (y); supply --training with --totals, or "
            "--draws, to impute control outcomes from county totals");
    }

    // Inputs specific to the chosen mode, validated before the dry-run gate.
    Dataset training;
    std::map<std::string, long long> totals;
    std::vector<CountyGroup> train_groups, targets;
    if (two_stage_fit) {
        training = load_units_checked(o.training, "training");
        require_counts(training, all_rows(training), "training", "");
        check_same_predictors(training, "training", data, "units");
        totals = load_county_totals_file(o.totals);

        std::map<std::string, long long> training_totals;
        for (const auto& u : training.units)
            training_totals[u.county_id] += *u.observed_count;
        train_groups = group_by_county(training, training_totals).groups;

        std::set<std::string> target_counties;
        for (const auto& id : unobserved_controls)
            target_counties.insert(data.units[data.index_of(id)].county_id);
        targets = target_groups_for(data, target_counties, totals);
    }
    PredictiveDraws draws;
    if (two_stage_file) {
        draws = predictive_draws_from_table(read_table_file(o.draws_file));
        for (const auto& id : draws.unit_ids) {
            if (data.find_unit(id) == nullptr)
                throw ValidationError("draws unit " + id +
                                      " is absent from the units file");
        }
    }

    if (o.dry_run) {
        std::cout << "dry run: inputs validated\n";
        return;
    }

    SirResult res;
    if (two_stage_fit) {
        const Stage1Fit fit =
            fit_stage1(training, train_groups,
                       chain_from(o.chain, derive_seed(o.seed, kStreamStage1)), o.prior_sd);
        for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";
        draws = predict_counts(fit, data, targets, unobserved_controls, o.m_draws,
                               derive_seed(o.seed, kStreamPredict));
        if (!o.out_draws.empty())
            write_table_file(o.out_draws, predictive_draws_as_table(draws));
        res = csir_two_stage(data, matched, draws,
                             chain_from(o.chain, derive_seed(o.seed, kStreamOutcomeChain)),
                             o.prior_sd, o.alpha);
    } else if (two_stage_file) {
        res = csir_two_stage(data, matched, draws,
                             chain_from(o.chain, derive_seed(o.seed, kStreamOutcomeChain)),
                             o.prior_sd, o.alpha);
    } else {
        res = csir_direct(data, matched,
                          chain_from(o.chain, derive_seed(o.seed, kStreamOutcomeChain)),
                          o.prior_sd, o.alpha);
    }

    std::cout << render_result(res);
    write_table_file(o.out, result_as_table(res));

    cli::RunManifest man;
    man.command = "csir";
    man.config = {{"units", o.units},
                  {"matched", o.matched},
                  {"seed", std::to_string(o.seed)},
                  {"prior_sd", format_double(o.prior_sd)},
                  {"alpha", format_double(o.alpha)}};
    put_chain_config(man.config, o.chain);
    const char* mode = two_stage_fit ? "two-stage-fit"
                       : two_stage_file ? "two-stage-draws"
                                        : "direct";
    man.config["mode"] = mode;
    man.seed = o.seed;
    man.inputs[o.units] = cli::digest_file(o.units);
    man.inputs[o.matched] = cli::digest_file(o.matched);
    man.outputs = {o.out};
    if (two_stage_fit) {
        man.config["training"] = o.training;
        man.config["totals"] = o.totals;
        man.config["m_draws"] = std::to_string(o.m_draws);
        man.inputs[o.training] = cli::digest_file(o.training);
        man.inputs[o.totals] = cli::digest_file(o.totals);
        if (!o.out_draws.empty()) man.outputs.push_back(o.out_draws);
    }
    if (two_stage_file) {
        man.config["draws"] = o.draws_file;
        man.inputs[o.draws_file] = cli::digest_file(o.draws_file);
    }
    cli::write_manifest_file(o.manifest.empty() ? default_manifest_path(o.out) : o.manifest,
                             man);
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateOpts {
    std::string config, out_dir, manifest;
    unsigned threads = 0;  // 0 = all available cores
    bool dry_run = false;
};

std::map<std::string, std::string> parse_flat_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + " line " + std::to_string(line_no) +
                              ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError(path + " line " + std::to_string(line_no) + ": empty key");
        if (!kv.emplace(key, value).second)
            throw ConfigError(path + " line " + std::to_string(line_no) +
                              ": duplicate config key: " + key);
    }
    return kv;
}

long long config_int(const std::map<std::string, std::string>& kv, const std::string& key,
                     long long fallback) {
    const auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        std::size_t used = 0;
        const long long v = std::stoll(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing text");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config value for " + key + " is not an integer: " + it->second);
    }
}

double config_num(const std::map<std::string, std::string>& kv, const std::string& key,
                  double fallback) {
    const auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing text");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config value for " + key + " is not a number: " + it->second);
    }
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != ' ' && c != '\t') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

const std::set<std::string> kSimulateKeys = {
    "preset",      "true_sir",   "sweep",          "n_units",    "n_replicates",
    "n_exposed",   "seed",       "methods",        "match_ratio", "match_metric",
    "chain_iters", "chain_burn_in", "chain_thin",  "prior_sd"};

void run_simulate(const SimulateOpts& o) {
    const auto kv = parse_flat_config(o.config);
    for (const auto& [key, value] : kv) {
        if (!kSimulateKeys.count(key)) throw ConfigError("unknown config key: " + key);
    }
    if (!kv.count("preset")) throw ConfigError("missing config key: preset");

    const long long preset = config_int(kv, "preset", 0);
    if (preset < 1 || preset > 4)
        throw ConfigError("config value for preset must be 1, 2, 3, or 4");
    SimConfig cfg = table1_preset(static_cast<int>(preset));

    std::vector<double> sweep;
    if (kv.count("sweep")) {
        if (kv.count("true_sir"))
            throw ConfigError("config keys true_sir and sweep are mutually exclusive");
        for (const auto& tok : split_list(kv.at("sweep"))) {
            if (tok.empty()) throw ConfigError("config value for sweep has an empty entry");
            try {
                std::size_t used = 0;
                const double v = std::stod(tok, &used);
                if (used != tok.size()) throw std::invalid_argument("trailing text");
                sweep.push_back(v);
            } catch (const std::exception&) {
                throw ConfigError("config value for sweep is not a number list: " +
                                  kv.at("sweep"));
            }
        }
    } else if (kv.count("true_sir")) {
        set_true_sir(cfg, config_num(kv, "true_sir", 1.0));
    } else if (preset >= 3) {
        throw ConfigError("missing config key: true_sir (presets 3 and 4 model a real "
                          "effect; set true_sir or sweep)");
    }
    if (!sweep.empty()) {
        for (double s : sweep) set_true_sir(cfg, s);  // validates every entry
    }

    cfg.n_units = static_cast<int>(config_int(kv, "n_units", cfg.n_units));
    cfg.n_replicates = static_cast<int>(config_int(kv, "n_replicates", cfg.n_replicates));
    cfg.n_exposed_selected =
        static_cast<int>(config_int(kv, "n_exposed", cfg.n_exposed_selected));
    cfg.seed = static_cast<std::uint64_t>(config_int(kv, "seed", 0));
    cfg.chain.n_iter = static_cast<int>(config_int(kv, "chain_iters", cfg.chain.n_iter));
    cfg.chain.burn_in = static_cast<int>(config_int(kv, "chain_burn_in", cfg.chain.burn_in));
    cfg.chain.thin = static_cast<int>(config_int(kv, "chain_thin", cfg.chain.thin));
    cfg.prior_sd = config_num(kv, "prior_sd", cfg.prior_sd);
    cfg.n_threads = o.threads;

    std::vector<SimMethod> methods;
    {
        std::string spec_str = kv.count("methods") ? kv.at("methods") : "cdc,pr,csir";
        std::set<std::string> names;
        for (const auto& tok : split_list(spec_str)) {
            if (tok.empty()) continue;
            if (tok != "cdc" && tok != "pr" && tok != "csir")
                throw ConfigError("config value for methods must list cdc, pr, csir; got " +
                                  tok);
            names.insert(tok);
        }
        if (names.count("cdc")) methods.push_back(SimMethod::cdc);
        if (names.count("pr")) methods.push_back(SimMethod::pr);
        if (names.count("csir")) methods.push_back(SimMethod::csir);
        if (methods.empty()) throw ConfigError("config value for methods is empty");
    }

    MatchSpec match_spec;
    match_spec.ratio = static_cast<int>(config_int(kv, "match_ratio", 20));
    std::string metric = kv.count("match_metric") ? kv.at("match_metric") : "mahalanobis";
    if (metric != "mahalanobis" && metric != "propensity-linear")
        throw ConfigError(
            "config value for match_metric must be mahalanobis or propensity-linear");
    match_spec.metric = metric_from_name(metric);
    if (match_spec.ratio < 1) throw ConfigError("config value for match_ratio must be >= 1");

    validate_sim_config(cfg);
    if (o.dry_run) {
        std::cout << "dry run: config validated\n";
        return;
    }

    std::filesystem::create_directories(o.out_dir);
    const auto path_in_dir = [&](const char* name) {
        return (std::filesystem::path(o.out_dir) / name).string();
    };

    std::vector<std::pair<double, SimReport>> runs;
    Table summary_all, replicate_all;
    const std::vector<double> points = sweep.empty()
                                           ? std::vector<double>{std::exp(cfg.alpha[1])}
                                           : sweep;
    for (double point : points) {
        set_true_sir(cfg, point);
        const auto t0 = std::chrono::steady_clock::now();
        SimReport report = run_simulation(cfg, methods, match_spec);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        std::cout << "true_sir " << format_double(report.true_sir) << " ("
                  << report.n_replicates << " replicates, " << format_double(secs)
                  << "s):\n";
        for (const auto& s : report.summaries) {
            std::cout << "  " << to_string(s.method) << ": bias " << format_double(s.bias)
                      << ", coverage_true " << format_double(s.coverage_true)
                      << ", coverage_null " << format_double(s.coverage_null)
                      << ", mean_width " << format_double(s.mean_width) << " ("
                      << s.n_ok << " ok, " << s.n_fail << " failed)\n";
        }
        for (const auto& flag : report.flags) std::cerr << "warning: " << flag << "\n";

        const std::string label = format_double(report.true_sir);
        append_rows(summary_all, prepend_column(sim_summary_table(report), "true_sir", label));
        append_rows(replicate_all,
                    prepend_column(sim_replicates_table(report), "true_sir", label));
        runs.emplace_back(report.true_sir, std::move(report));
    }

    write_table_file(path_in_dir("summary.csv"), summary_all);
    write_table_file(path_in_dir("replicates.csv"), replicate_all);
    write_table_file(path_in_dir("null_coverage.csv"), null_coverage_curve(runs));
    std::cout << "wrote summary.csv, replicates.csv, null_coverage.csv in " << o.out_dir
              << "\n";

    cli::RunManifest man;
    man.command = "simulate";
    man.config["preset"] = std::to_string(preset);
    if (!sweep.empty()) {
        std::string joined;
        for (double s : sweep) joined += (joined.empty() ? "" : ",") + format_double(s);
        man.config["sweep"] = joined;
    } else {
        man.config["true_sir"] = format_double(points.front());
    }
    man.config["n_units"] = std::to_string(cfg.n_units);
    man.config["n_replicates"] = std::to_string(cfg.n_replicates);
    man.config["n_exposed"] = std::to_string(cfg.n_exposed_selected);
    man.config["seed"] = std::to_string(cfg.seed);
    man.config["prior_sd"] = format_double(cfg.prior_sd);
    man.config["chain_iters"] = std::to_string(cfg.chain.n_iter);
    man.config["chain_burn_in"] = std::to_string(cfg.chain.burn_in);
    man.config["chain_thin"] = std::to_string(cfg.chain.thin);
    man.config["match_ratio"] = std::to_string(match_spec.ratio);
    man.config["match_metric"] = metric;
    {
        std::string joined;
        for (SimMethod m : methods) joined += (joined.empty() ? "" : ",") + to_string(m);
        man.config["methods"] = joined;
    }
    man.seed = cfg.seed;
    man.inputs[o.config] = cli::digest_file(o.config);
    man.outputs = {path_in_dir("summary.csv"), path_in_dir("replicates.csv"),
                   path_in_dir("null_coverage.csv")};
    cli::write_manifest_file(
        o.manifest.empty() ? path_in_dir("manifest.json") : o.manifest, man);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"causal SIR pipeline: matching, SIR estimation, county-to-unit "
                 "disaggregation, and the estimator comparison lab"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "0.1.0");

    MatchOpts match_opts;
    auto* cmd_match = app.add_subcommand(
        "match", "select ratio-matched unexposed controls for the exposed units");
    cmd_match->add_option("--units", match_opts.units, "unit table (exposure column set)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_match->add_option("--ratio", match_opts.ratio, "controls per exposed unit")
        ->capture_default_str();
    cmd_match->add_option("--metric", match_opts.metric, "distance metric")
        ->check(CLI::IsMember({"mahalanobis", "propensity-linear"}))
        ->capture_default_str();
    cmd_match
        ->add_option("--exact-on", match_opts.exact_on,
                     "confounder indices that must match exactly")
        ->delimiter(',');
    cmd_match->add_flag("--replacement", match_opts.replacement,
                        "allow a control to serve several exposed units");
    cmd_match->add_option("--caliper", match_opts.caliper,
                          "max propensity distance on the logit scale");
    cmd_match->add_option("--out-pairs", match_opts.out_pairs, "matched pairs output")
        ->required();
    cmd_match->add_option("--out-balance", match_opts.out_balance, "balance table output")
        ->required();
    cmd_match->add_option("--manifest", match_opts.manifest, "manifest path override");
    cmd_match->add_flag("--dry-run", match_opts.dry_run, "validate inputs and exit");
    cmd_match->callback([&] { run_match(match_opts); });

    SirOpts sir_opts;
    auto* cmd_sir = app.add_subcommand(
        "sir", "classic SIR with an exact Poisson interval for a community");
    cmd_sir->add_option("--community", sir_opts.community, "community unit table (y set)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_sir
        ->add_option("--background", sir_opts.background,
                     "background unit table for the reference rate")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_sir->add_option("--alpha", sir_opts.alpha, "two-sided interval level")
        ->capture_default_str();
    cmd_sir->add_option("--out", sir_opts.out, "result table output")->required();
    cmd_sir->add_option("--manifest", sir_opts.manifest, "manifest path override");
    cmd_sir->add_flag("--dry-run", sir_opts.dry_run, "validate inputs and exit");
    cmd_sir->callback([&] { run_sir(sir_opts); });

    CsirOpts csir_opts;
    auto* cmd_csir = app.add_subcommand(
        "csir", "Bayesian causal SIR on a matched design (direct or two-stage)");
    cmd_csir->add_option("--units", csir_opts.units, "unit table covering the matched ids")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_csir->add_option("--matched", csir_opts.matched, "matched pairs file from `match`")
        ->required()
        ->check(CLI::ExistingFile);
    auto* opt_training =
        cmd_csir
            ->add_option("--training", csir_opts.training,
                         "fully observed unit table for the disaggregation fit")
            ->check(CLI::ExistingFile);
    auto* opt_totals =
        cmd_csir
            ->add_option("--totals", csir_opts.totals,
                         "county totals for the matched controls' counties")
            ->check(CLI::ExistingFile);
    auto* opt_draws = cmd_csir
                          ->add_option("--draws", csir_opts.draws_file,
                                       "precomputed predictive draws from `predict`")
                          ->check(CLI::ExistingFile);
    auto* opt_mdraws =
        cmd_csir
            ->add_option("--m-draws", csir_opts.m_draws, "predictive draws per control")
            ->capture_default_str();
    opt_training->needs(opt_totals);
    opt_totals->needs(opt_training);
    opt_draws->excludes(opt_training)->excludes(opt_totals)->excludes(opt_mdraws);
    add_chain_flags(cmd_csir, csir_opts.chain);
    cmd_csir->add_option("--seed", csir_opts.seed, "master seed")->capture_default_str();
    cmd_csir->add_option("--prior-sd", csir_opts.prior_sd, "prior sd for the coefficients")
        ->capture_default_str();
    cmd_csir->add_option("--alpha", csir_opts.alpha, "credible level in the report")
        ->capture_default_str();
    cmd_csir->add_option("--out", csir_opts.out, "result table output")->required();
    cmd_csir->add_option("--out-draws", csir_opts.out_draws,
                         "also write the stage-1 predictive draws");
    cmd_csir->add_option("--manifest", csir_opts.manifest, "manifest path override");
    cmd_csir->add_flag("--dry-run", csir_opts.dry_run, "validate inputs and exit");
    cmd_csir->callback([&] { run_csir(csir_opts); });

    PredictOpts predict_opts;
    auto* cmd_predict = app.add_subcommand(
        "predict", "county-consistent predictive count draws for target units");
    cmd_predict
        ->add_option("--training", predict_opts.training,
                     "fully observed unit table for the disaggregation fit")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_predict
        ->add_option("--targets", predict_opts.targets,
                     "unit table for the counties to disaggregate")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_predict->add_option("--totals", predict_opts.totals, "target county totals")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_predict->add_option("--m-draws", predict_opts.m_draws, "number of predictive draws")
        ->capture_default_str();
    add_chain_flags(cmd_predict, predict_opts.chain);
    cmd_predict->add_option("--seed", predict_opts.seed, "master seed")
        ->capture_default_str();
    cmd_predict
        ->add_option("--prior-sd", predict_opts.prior_sd, "prior sd for the coefficients")
        ->capture_default_str();
    cmd_predict->add_option("--out", predict_opts.out, "predictive draws output")
        ->required();
    cmd_predict->add_option("--manifest", predict_opts.manifest, "manifest path override");
    cmd_predict->add_flag("--dry-run", predict_opts.dry_run, "validate inputs and exit");
    cmd_predict->callback([&] { run_predict(predict_opts); });

    SimulateOpts sim_opts;
    auto* cmd_simulate = app.add_subcommand(
        "simulate", "replicate study comparing cdc / pr / csir on synthetic regions");
    cmd_simulate->add_option("--config", sim_opts.config, "key=value config file")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_simulate->add_option("--out-dir", sim_opts.out_dir, "directory for the report files")
        ->required();
    cmd_simulate
        ->add_option("--threads", sim_opts.threads,
                     "replicate-level workers (0 = all cores); results do not "
                     "depend on this")
        ->capture_default_str();
    cmd_simulate->add_option("--manifest", sim_opts.manifest, "manifest path override");
    cmd_simulate->add_flag("--dry-run", sim_opts.dry_run, "validate the config and exit");
    cmd_simulate->callback([&] { run_simulate(sim_opts); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
