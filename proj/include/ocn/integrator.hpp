#pragma once

#include <vector>

#include "ocn/corrector.hpp"
#include "ocn/data.hpp"
#include "ocn/grid.hpp"
#include "ocn/physics.hpp"

namespace ocn {

/// The one-step hybrid operator: physics core with learnable diffusivities
/// plus the neural corrector, advanced by a single forward-Euler step in
/// normalized coordinates. Either branch can be disabled for ablations.
struct HybridModel {
    GridSpec grid;
    StateChannels layout;
    PhysicsParams physics;
    CorrectorConfig corr_cfg;
    CorrectorWeights corrector;
    NormStats stats;
    bool physics_enabled = true;
    bool corrector_enabled = true;

    double dt() const { return physics.dt_total; }
    int c_in() const { return layout.count() + 4; }

    /// Stable parameter order: physics scalars first, then corrector weights.
    std::vector<ParamRef> trainable(bool include_physics, bool include_corrector);

    static HybridModel create(GridSpec grid, StateChannels layout, PhysicsParams physics,
                              CorrectorConfig corr_cfg, NormStats stats, uint64_t init_seed);
};

struct StepVars {
    PhysicsVars physics;
    CorrectorVars corrector;
};

/// Insert the model parameters onto a tape; order matches trainable().
StepVars lift_model(ad::Tape& tape, const HybridModel& model, bool train_physics, bool train_corrector);

/// One hybrid step in normalized space:
///   y_phys   = mask(denormalize(y_norm))
///   G_p_norm = physics_step(y_phys) * dt/sigma      (per channel)
///   G_n      = corrector_forward(y_norm, F_norm)    (normalized increment per dt)
///   y_next   = mask(y_norm + G_p_norm + G_n)
/// The additive mean and climatology cancel in the tendency difference, so
/// only sigma enters the renormalization.
ad::Var hybrid_step(ad::Tape& tape, ad::Var y_norm, ad::Var f_norm, const HybridModel& model,
                    const StepVars& vars, int day_of_year, PhysicsMode mode);

} // namespace ocn
