#pragma once

#include <string>

#include "csir/results.hpp"

namespace csir {

/// Human-readable result block: method, estimate, interval, and whatever
/// diagnostics the estimator attached (seed, chain behavior, counts).
std::string render_result(const SirResult& result);

/// The identification assumptions a causal reading of the estimate leans on.
/// They are design assumptions, not testable hypotheses, so every report
/// restates them next to the numbers.
std::string assumption_checklist();

}  // namespace csir
