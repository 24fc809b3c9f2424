#include "csir/report.hpp"

#include <map>
#include <sstream>

#include "csir/table.hpp"

namespace csir {

std::string render_result(const SirResult& result) {
    std::ostringstream out;
    out << "method: " << to_string(result.method) << "\n";
    out << "estimate: " << format_double(result.estimate) << "\n";
    out << "interval: [" << format_double(result.ci_low) << ", "
        << format_double(result.ci_high) << "]\n";
    out << "exposed_units: " << result.n_exposed_units << "\n";
    for (const auto& [key, value] : result.diagnostics)
        out << key << ": " << value << "\n";
    return out.str();
}

std::string assumption_checklist() {
    return
        "assumptions (untestable; justify by design):\n"
        "  consistency/no-interference: each unit's count reflects its own\n"
        "    exposure status only, with one well-defined version of exposure;\n"
        "    spillover across unit boundaries breaks the contrast.\n"
        "  ignorability: given the matched/adjusted confounders, exposure is\n"
        "    as good as random; an unmeasured cause of both exposure and the\n"
        "    outcome biases the estimate in either direction.\n"
        "  positivity: every exposed unit profile must have counterpart\n"
        "    unexposed units with comparable confounders; matching diagnostics\n"
        "    (balance table, caliper failures) flag where this thins out.\n";
}

}  // namespace csir
