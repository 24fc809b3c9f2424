#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

// End-to-end checks of the installed command-line surface: exit codes, output
// files, manifests, and the error channel.  The binary path arrives through
// the CSIR_BIN environment variable set by the test harness.

namespace {

namespace fs = std::filesystem;

struct RunOutcome {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    REQUIRE(out.good());
}

const fs::path& work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::path("/tmp") / ("csir_cli_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

RunOutcome run_cli(const std::string& args) {
    const char* bin = std::getenv("CSIR_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "CSIR_BIN must point at the csir binary");
    const fs::path out_path = work_dir() / "stdout.txt";
    const fs::path err_path = work_dir() / "stderr.txt";
    const std::string cmd = std::string(bin) + " " + args + " >" + out_path.string() +
                            " 2>" + err_path.string();
    const int status = std::system(cmd.c_str());
    RunOutcome r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

fs::path write_match_units(const std::string& name, bool blank_control_count) {
    const fs::path path = work_dir() / name;
    std::string body =
        "unit_id,county_id,population,exposure,y,x1\n"
        "ex1,cA,1000,1,12,1.0\n"
        "ex2,cA,1000,1,15,2.0\n"
        "c1,cB,1000,0,8,0.9\n"
        "c2,cB,1000,0,9,1.1\n"
        "c3,cC,1000,0,10,2.2\n"
        "c4,cC,1000,0,11,3.5\n"
        "c5,cC,1000,0,7,4.0\n";
    if (blank_control_count) {
        const auto pos = body.find("c3,cC,1000,0,10,2.2");
        body.replace(pos, std::string("c3,cC,1000,0,10,2.2").size(), "c3,cC,1000,0,,2.2");
    }
    spit(path, body);
    return path;
}

fs::path write_matched_pairs(const std::string& name) {
    const fs::path path = work_dir() / name;
    spit(path,
         "exposed_id,rank,control_id,distance\n"
         "ex1,1,c1,0.1\n"
         "ex1,2,c2,0.1\n"
         "ex2,1,c3,0.2\n"
         "ex2,2,c4,1.5\n");
    return path;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("--help exits zero and names every subcommand") {
    const RunOutcome r = run_cli("--help");
    CHECK(r.exit_code == 0);
    for (const char* name : {"match", "sir", "csir", "predict", "simulate"})
        CHECK_MESSAGE(contains(r.out, name), "help should mention " << name);
}

TEST_CASE("running without a subcommand is a usage error") {
    const RunOutcome r = run_cli("");
    CHECK(r.exit_code == 2);
    CHECK_FALSE(r.err.empty());
}

TEST_CASE("sir computes the community ratio end to end") {
    const fs::path community = work_dir() / "community.csv";
    spit(community,
         "unit_id,county_id,population,exposure,y,x1\n"
         "m1,cA,500,1,15,0.2\n"
         "m2,cA,500,1,5,-0.1\n");
    const fs::path background = work_dir() / "background.csv";
    spit(background,
         "unit_id,county_id,population,exposure,y,x1\n"
         "b1,cB,1000,0,10,0.0\n"
         "b2,cB,1000,0,10,0.3\n");
    const fs::path out = work_dir() / "sir_result.csv";

    const RunOutcome r = run_cli("sir --community " + community.string() +
                                 " --background " + background.string() + " --out " +
                                 out.string());
    CHECK(r.exit_code == 0);
    // 20 observed against rate 0.01 on population 1000: ratio 2.
    CHECK(contains(r.out, "method: cdc"));
    CHECK(contains(r.out, "estimate: 2"));

    const std::string table = slurp(out);
    CHECK(contains(table, "field,value"));
    CHECK(contains(table, "estimate,2"));
    CHECK(contains(table, "observed,20"));
    CHECK(contains(table, "expected,10"));

    const std::string manifest = slurp(out.string() + ".manifest.json");
    CHECK(contains(manifest, "\"command\": \"sir\""));
    CHECK(contains(manifest, "fnv1a64:"));
    CHECK(contains(manifest, "\"config_digest\""));
    CHECK(contains(manifest, community.string()));
}

TEST_CASE("sir rejects a unit that sits in both files") {
    const fs::path community = work_dir() / "overlap_comm.csv";
    spit(community,
         "unit_id,county_id,population,exposure,y,x1\n"
         "m1,cA,500,1,15,0.2\n");
    const fs::path background = work_dir() / "overlap_back.csv";
    spit(background,
         "unit_id,county_id,population,exposure,y,x1\n"
         "m1,cB,1000,0,10,0.0\n"
         "b2,cB,1000,0,10,0.3\n");
    const RunOutcome r = run_cli("sir --community " + community.string() +
                                 " --background " + background.string() + " --out " +
                                 (work_dir() / "unused.csv").string());
    CHECK(r.exit_code == 2);
    CHECK(contains(r.err, "error:"));
    CHECK(contains(r.err, "appears in both"));
}

TEST_CASE("a missing input file fails at flag parsing") {
    const RunOutcome r = run_cli(
        std::string("sir --community /nonexistent/nope.csv --background ") +
        "/nonexistent/nope2.csv --out " + (work_dir() / "unused2.csv").string());
    CHECK(r.exit_code == 2);
    CHECK_FALSE(r.err.empty());
}

TEST_CASE("an out-of-range alpha is a usage error") {
    const fs::path community = work_dir() / "alpha_comm.csv";
    spit(community,
         "unit_id,county_id,population,exposure,y,x1\n"
         "m1,cA,500,1,15,0.2\n");
    const RunOutcome r = run_cli("sir --community " + community.string() +
                                 " --background " + community.string() +
                                 " --alpha 1.5 --out " +
                                 (work_dir() / "unused3.csv").string());
    CHECK(r.exit_code == 2);
    CHECK(contains(r.err, "--alpha"));
}

TEST_CASE("match writes pairs, balance, and a manifest") {
    const fs::path units = write_match_units("match_units.csv", false);
    const fs::path pairs = work_dir() / "pairs.csv";
    const fs::path balance = work_dir() / "balance.csv";

    const RunOutcome r = run_cli("match --units " + units.string() + " --out-pairs " +
                                 pairs.string() + " --out-balance " + balance.string());
    CHECK(r.exit_code == 0);
    CHECK(contains(r.out, "matched 2 exposed units"));

    const std::string pairs_text = slurp(pairs);
    CHECK(contains(pairs_text, "exposed_id,rank,control_id,distance"));
    CHECK(line_count(pairs_text) == 3);  // header + one control per exposed unit
    CHECK(contains(pairs_text, "ex1"));
    CHECK(contains(pairs_text, "ex2"));

    const std::string balance_text = slurp(balance);
    CHECK(contains(balance_text, "x1"));

    CHECK(contains(slurp(pairs.string() + ".manifest.json"), "\"command\": \"match\""));
}

TEST_CASE("match --dry-run validates without writing anything") {
    const fs::path units = write_match_units("dry_units.csv", false);
    const fs::path pairs = work_dir() / "dry_pairs.csv";
    const fs::path balance = work_dir() / "dry_balance.csv";

    const RunOutcome r = run_cli("match --units " + units.string() + " --out-pairs " +
                                 pairs.string() + " --out-balance " + balance.string() +
                                 " --dry-run");
    CHECK(r.exit_code == 0);
    CHECK(contains(r.out, "dry run"));
    CHECK_FALSE(fs::exists(pairs));
    CHECK_FALSE(fs::exists(balance));
    CHECK_FALSE(fs::exists(pairs.string() + ".manifest.json"));
}

TEST_CASE("match rejects an exact-on index past the confounder count") {
    const fs::path units = write_match_units("exact_units.csv", false);
    const RunOutcome r =
        run_cli("match --units " + units.string() + " --exact-on 5 --out-pairs " +
                (work_dir() / "x_pairs.csv").string() + " --out-balance " +
                (work_dir() / "x_balance.csv").string());
    CHECK(r.exit_code == 2);
    CHECK(contains(r.err, "out of range"));
}

TEST_CASE("csir direct runs are reproducible from the seed") {
    const fs::path units = write_match_units("csir_units.csv", false);
    const fs::path matched = write_matched_pairs("csir_pairs.csv");
    const fs::path out_a = work_dir() / "csir_a.csv";
    const fs::path out_b = work_dir() / "csir_b.csv";
    const fs::path out_c = work_dir() / "csir_c.csv";
    const std::string chain = " --iters 2000 --burn-in 400 --thin 2";
    const std::string base =
        "csir --units " + units.string() + " --matched " + matched.string() + chain;

    const RunOutcome ra = run_cli(base + " --seed 7 --out " + out_a.string());
    CHECK(ra.exit_code == 0);
    CHECK(contains(ra.out, "method: csir_direct"));

    const RunOutcome rb = run_cli(base + " --seed 7 --out " + out_b.string());
    CHECK(rb.exit_code == 0);
    CHECK(slurp(out_a) == slurp(out_b));

    const RunOutcome rc = run_cli(base + " --seed 8 --out " + out_c.string());
    CHECK(rc.exit_code == 0);
    CHECK(slurp(out_a) != slurp(out_c));

    const std::string manifest = slurp(out_a.string() + ".manifest.json");
    CHECK(contains(manifest, "\"mode\": \"direct\""));
    CHECK(contains(manifest, "\"seed\": 7"));
}

TEST_CASE("csir refuses --draws combined with a training fit") {
    const fs::path units = write_match_units("conflict_units.csv", false);
    const fs::path matched = write_matched_pairs("conflict_pairs.csv");
    const fs::path draws = work_dir() / "conflict_draws.csv";
    spit(draws, "m,unit_id,count\n1,c1,3\n");
    const fs::path totals = work_dir() / "conflict_totals.csv";
    spit(totals, "county_id,total\ncB,40\n");

    const RunOutcome r = run_cli("csir --units " + units.string() + " --matched " +
                                 matched.string() + " --draws " + draws.string() +
                                 " --training " + units.string() + " --totals " +
                                 totals.string() + " --out " +
                                 (work_dir() / "conflict_out.csv").string());
    CHECK(r.exit_code == 2);
    CHECK_FALSE(r.err.empty());
}

TEST_CASE("csir without an imputation source needs every control count") {
    const fs::path units = write_match_units("missing_y_units.csv", true);
    const fs::path matched = write_matched_pairs("missing_y_pairs.csv");
    const RunOutcome r = run_cli("csir --units " + units.string() + " --matched " +
                                 matched.string() + " --out " +
                                 (work_dir() / "missing_y_out.csv").string());
    CHECK(r.exit_code == 2);
    CHECK(contains(r.err, "error:"));
    CHECK(contains(r.err, "impute"));
}

TEST_CASE("predict writes county-consistent draws") {
    const fs::path training = work_dir() / "pred_training.csv";
    {
        std::string body = "unit_id,county_id,population,exposure,y,x1\n";
        // Four training counties, three units each, counts roughly rising in x1.
        const char* county[] = {"t1", "t2", "t3", "t4"};
        int y_vals[4][3] = {{4, 7, 12}, {5, 9, 15}, {3, 6, 11}, {6, 10, 14}};
        for (int c = 0; c < 4; ++c) {
            for (int k = 0; k < 3; ++k) {
                body += std::string(county[c]) + "_u" + std::to_string(k) + "," +
                        county[c] + ",1000,0," + std::to_string(y_vals[c][k]) + "," +
                        std::to_string(-1.0 + k) + "\n";
            }
        }
        spit(training, body);
    }
    const fs::path targets = work_dir() / "pred_targets.csv";
    spit(targets,
         "unit_id,county_id,population,exposure,y,x1\n"
         "g1,cG,1000,0,,-1.0\n"
         "g2,cG,1000,0,,0.0\n"
         "g3,cG,1000,0,,1.0\n");
    const fs::path totals = work_dir() / "pred_totals.csv";
    spit(totals, "county_id,total\ncG,30\n");
    const fs::path out = work_dir() / "pred_draws.csv";

    const RunOutcome r = run_cli("predict --training " + training.string() +
                                 " --targets " + targets.string() + " --totals " +
                                 totals.string() +
                                 " --m-draws 50 --iters 1500 --burn-in 300 --thin 3"
                                 " --seed 5 --out " +
                                 out.string());
    CHECK(r.exit_code == 0);
    CHECK(contains(r.out, "50 predictive draws for 3 units"));

    const std::string draws_text = slurp(out);
    CHECK(contains(draws_text, "m,unit_id,count"));
    CHECK(line_count(draws_text) == 1 + 50 * 3);

    // Every draw respects the county total.
    std::istringstream lines(draws_text);
    std::string line;
    std::getline(lines, line);  // header
    long long sum = 0;
    int in_draw = 0;
    while (std::getline(lines, line)) {
        const auto last_comma = line.rfind(',');
        sum += std::stoll(line.substr(last_comma + 1));
        if (++in_draw == 3) {
            CHECK(sum == 30);
            sum = 0;
            in_draw = 0;
        }
    }
}

TEST_CASE("simulate demands a preset key") {
    const fs::path config = work_dir() / "sim_no_preset.cfg";
    spit(config, "n_units = 200\n");
    const RunOutcome r = run_cli("simulate --config " + config.string() + " --out-dir " +
                                 (work_dir() / "sim_out_a").string());
    CHECK(r.exit_code == 2);
    CHECK(contains(r.err, "missing config key: preset"));
}

TEST_CASE("simulate rejects unknown config keys") {
    const fs::path config = work_dir() / "sim_bad_key.cfg";
    spit(config, "preset = 1\nbogus = 3\n");
    const RunOutcome r = run_cli("simulate --config " + config.string() + " --out-dir " +
                                 (work_dir() / "sim_out_b").string());
    CHECK(r.exit_code == 2);
    CHECK(contains(r.err, "unknown config key: bogus"));
}

TEST_CASE("simulate --dry-run validates the config and touches nothing") {
    const fs::path config = work_dir() / "sim_dry.cfg";
    spit(config, "preset = 1\nn_replicates = 2\n");
    const fs::path out_dir = work_dir() / "sim_out_dry";
    const RunOutcome r = run_cli("simulate --config " + config.string() + " --out-dir " +
                                 out_dir.string() + " --dry-run");
    CHECK(r.exit_code == 0);
    CHECK(contains(r.out, "dry run"));
    CHECK_FALSE(fs::exists(out_dir));
}

}  // TEST_SUITE("cli")
