#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ocn/grid.hpp"
#include "ocn/tape.hpp"

namespace ocn {

enum class VarKind : uint8_t {
    Salinity = 0,
    ZonalVelocity = 1,
    MeridionalVelocity = 2,
    Temperature = 3,
    SeaSurfaceHeight = 4,
    Forcing = 5,
};

struct ChannelInfo {
    std::string name;
    VarKind kind = VarKind::Forcing;
    int level = 0;
    bool periodic = false; // seasonal climatology applies (T, S, SSH)
};

/// Mapping channel index -> (variable, level) for the prognostic state.
struct StateChannels {
    int levels = 1;
    std::vector<ChannelInfo> channels;

    /// S, U, V, T with `levels` layers each, then SSH: C_o = 4*levels + 1.
    static StateChannels standard(int levels, bool periodic_tracers = true);

    int count() const { return static_cast<int>(channels.size()); }
    int index_of(VarKind kind, int level) const; // -1 when absent
    bool is_velocity(int c) const;
    /// (u,v) channel indices advecting channel c; SSH is advected by level 0.
    std::pair<int, int> advecting_velocity(int c) const;
};

/// Learnable physics parameters. The effective diffusivities are
/// softplus(raw) in m^2/s, strictly positive for any finite raw value.
struct PhysicsParams {
    Tensor raw_nu_momentum; // pre-softplus scalar
    Tensor raw_nu_tracer;
    int n_substeps = 4;
    double dt_total = 86400.0; // s

    PhysicsParams();

    static double softplus(double x);
    static double inverse_softplus(double nu);

    double nu_momentum() const { return softplus(raw_nu_momentum[0]); }
    double nu_tracer() const { return softplus(raw_nu_tracer[0]); }

    mutable bool cfl_warned = false; // warn once per instance in training mode
};

enum class PhysicsMode { Training, Rollout };

struct CflReport {
    double nu_max = 0.0;
    double dt_sub = 0.0;
    double min_cell_scale_sq = 0.0; // min over ocean rows of (R cos dlon)^2, (R dlat)^2
    double ratio = 0.0;             // nu_max * dt_sub / min_cell_scale_sq
    bool ok = true;                 // ratio <= 0.25
};

CflReport cfl_report(const GridSpec& grid, const PhysicsParams& params);

/// Tape handles for the two learnable scalars.
struct PhysicsVars {
    ad::Var raw_nu_momentum;
    ad::Var raw_nu_tracer;
};

PhysicsVars lift_physics(ad::Tape& tape, const PhysicsParams& params, bool trainable);

/// -(u ddx(c) + v ddy(c)) per channel, same-level velocities.
Field advection_tendency(const Field& state, const StateChannels& layout);
/// du/dt += f v, dv/dt += -f u; zero for tracers and SSH.
Field coriolis_tendency(const Field& state, const StateChannels& layout);
/// softplus(raw_nu) * laplacian per channel; momentum vs tracer coefficient.
Field diffusion_tendency(const Field& state, const PhysicsVars& vars, const PhysicsParams& params,
                         const StateChannels& layout, PhysicsMode mode);

/// n_substeps forward-Euler sub-steps of length dt_total/n_substeps; returns
/// the effective tendency (y_final - y_initial)/dt_total in physical units
/// per second. n_substeps == 1 returns the instantaneous tendency sum
/// advection + coriolis + diffusion exactly.
Field physics_step(const Field& state_physical, const PhysicsVars& vars, const PhysicsParams& params,
                   const StateChannels& layout, PhysicsMode mode);

} // namespace ocn
