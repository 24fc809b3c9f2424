#include <doctest.h>

#include "csir/report.hpp"
#include "csir/results.hpp"

using namespace csir;

TEST_SUITE("report") {

TEST_CASE("render_result lays out method, estimate, interval, and diagnostics") {
    SirResult r;
    r.estimate = 2.0;
    r.ci_low = 0.5;
    r.ci_high = 4.0;
    r.method = SirMethod::csir_direct;
    r.n_exposed_units = 6;
    r.diagnostics["seed"] = "42";
    r.diagnostics["alpha"] = "0.05";

    const std::string text = render_result(r);
    CHECK(text.find("method: " + to_string(SirMethod::csir_direct)) != std::string::npos);
    CHECK(text.find("estimate: 2") != std::string::npos);
    CHECK(text.find("interval: [0.5, 4]") != std::string::npos);
    CHECK(text.find("exposed_units: 6") != std::string::npos);
    CHECK(text.find("seed: 42") != std::string::npos);
    CHECK(text.find("alpha: 0.05") != std::string::npos);
    CHECK(text.back() == '\n');
}

TEST_CASE("method names are distinct and round through render_result") {
    CHECK(to_string(SirMethod::cdc) != to_string(SirMethod::pr));
    CHECK(to_string(SirMethod::csir_direct) != to_string(SirMethod::csir_two_stage));

    SirResult r;
    r.method = SirMethod::cdc;
    const std::string cdc_text = render_result(r);
    r.method = SirMethod::csir_two_stage;
    const std::string ts_text = render_result(r);
    CHECK(cdc_text != ts_text);
    CHECK(ts_text.find(to_string(SirMethod::csir_two_stage)) != std::string::npos);
}

TEST_CASE("the assumption checklist names the identification assumptions") {
    const std::string text = assumption_checklist();
    CHECK(text.find("consistency") != std::string::npos);
    CHECK(text.find("no-interference") != std::string::npos);
    CHECK(text.find("ignorability") != std::string::npos);
    CHECK(text.find("positivity") != std::string::npos);
    // Design assumptions, not statistical tests: the text must say so.
    CHECK(text.find("untestable") != std::string::npos);
}

}  // TEST_SUITE("report")
