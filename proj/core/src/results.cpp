#include "csir/results.hpp"

namespace csir {

std::string to_string(SirMethod method) {
    switch (method) {
        case SirMethod::cdc: return "cdc";
        case SirMethod::pr: return "pr";
        case SirMethod::csir_direct: return "csir_direct";
        case SirMethod::csir_two_stage: return "csir_two_stage";
    }
    return "unknown";
}

}  // namespace csir
