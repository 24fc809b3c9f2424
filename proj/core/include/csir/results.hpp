#pragma once

#include <map>
#include <string>

namespace csir {

enum class SirMethod { cdc, pr, csir_direct, csir_two_stage };

std::string to_string(SirMethod method);

/// A standardized incidence ratio estimate with its 95% interval.
struct SirResult {
    double estimate = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    SirMethod method = SirMethod::cdc;
    int n_exposed_units = 0;
    std::map<std::string, std::string> diagnostics;
};

}  // namespace csir
