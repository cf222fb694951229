#pragma once

#include "bedroil/solver.hpp"

#include <string_view>

namespace bedroil {

/// Reference learners: "bc" (behavioral cloning) and "bedroil_rho0" (the robust
/// learner with its ambiguity radius switched off). Both return histories in
/// the TrainingHistory schema.
inline TrainResult run_baseline(std::string_view name, const NominalData& data, const SolverConfig& cfg) {
    if (name == "bc") return train_bc(data, cfg);
    if (name == "bedroil_rho0") {
        SolverConfig c = cfg;
        c.rho = 0.0;
        return train_bedroil(data, c);
    }
    throw ModelError("unknown baseline: " + std::string(name));
}

} // namespace bedroil
