#include "ocn/physics.hpp"

#include <cmath>
#include <cstdio>

namespace ocn {

StateChannels StateChannels::standard(int levels, bool periodic_tracers) {
    StateChannels sc;
    sc.levels = levels;
    auto push = [&sc](VarKind kind, int level, const std::string& base, bool periodic) {
        sc.channels.push_back(ChannelInfo{base + std::to_string(level), kind, level, periodic});
    };
    for (int l = 0; l < levels; ++l) push(VarKind::Salinity, l, "S", periodic_tracers);
    for (int l = 0; l < levels; ++l) push(VarKind::ZonalVelocity, l, "U", false);
    for (int l = 0; l < levels; ++l) push(VarKind::MeridionalVelocity, l, "V", false);
    for (int l = 0; l < levels; ++l) push(VarKind::Temperature, l, "T", periodic_tracers);
    sc.channels.push_back(ChannelInfo{"SSH", VarKind::SeaSurfaceHeight, 0, periodic_tracers});
    return sc;
}

int StateChannels::index_of(VarKind kind, int level) const {
    for (int c = 0; c < count(); ++c) {
        if (channels[static_cast<size_t>(c)].kind == kind && channels[static_cast<size_t>(c)].level == level)
            return c;
    }
    return -1;
}

bool StateChannels::is_velocity(int c) const {
    const VarKind k = channels[static_cast<size_t>(c)].kind;
    return k == VarKind::ZonalVelocity || k == VarKind::MeridionalVelocity;
}

std::pair<int, int> StateChannels::advecting_velocity(int c) const {
    const ChannelInfo& info = channels[static_cast<size_t>(c)];
    const int level = info.kind == VarKind::SeaSurfaceHeight ? 0 : info.level;
    const int u = index_of(VarKind::ZonalVelocity, level);
    const int v = index_of(VarKind::MeridionalVelocity, level);
    if (u < 0 || v < 0) {
        throw Error("advection_tendency: missing velocity channels for level " + std::to_string(level));
    }
    return {u, v};
}

PhysicsParams::PhysicsParams()
    : raw_nu_momentum(Tensor::scalar(inverse_softplus(1.0e3))),
      raw_nu_tracer(Tensor::scalar(inverse_softplus(5.0e2))) {}

double PhysicsParams::softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double PhysicsParams::inverse_softplus(double nu) {
    // ln(e^nu - 1), stable for both small and large nu
    return nu > 20.0 ? nu + std::log1p(-std::exp(-nu)) : std::log(std::expm1(nu));
}

CflReport cfl_report(const GridSpec& grid, const PhysicsParams& params) {
    CflReport r;
    r.nu_max = std::max(params.nu_momentum(), params.nu_tracer());
    r.dt_sub = params.dt_total / params.n_substeps;
    double min_scale = 0.0;
    bool first = true;
    for (int i = 0; i < grid.n_lat; ++i) {
        bool has_ocean = false;
        for (int j = 0; j < grid.n_lon; ++j) {
            if (grid.mask.at2(i, j) != 0.0) {
                has_ocean = true;
                break;
            }
        }
        if (!has_ocean) continue;
        const double dx = grid.radius * grid.cos_lat[static_cast<size_t>(i)] * grid.d_lon;
        const double dy = grid.radius * grid.d_lat;
        const double s = std::min(dx * dx, dy * dy);
        min_scale = first ? s : std::min(min_scale, s);
        first = false;
    }
    r.min_cell_scale_sq = min_scale;
    r.ratio = min_scale > 0.0 ? r.nu_max * r.dt_sub / min_scale : 0.0;
    r.ok = r.ratio <= 0.25;
    return r;
}

PhysicsVars lift_physics(ad::Tape& tape, const PhysicsParams& params, bool trainable) {
    return PhysicsVars{tape.leaf(params.raw_nu_momentum, trainable), tape.leaf(params.raw_nu_tracer, trainable)};
}

namespace {

void check_layout(const char* op, const Field& state, const StateChannels& layout) {
    if (state.value.val().dim(0) != layout.count()) {
        throw ShapeError(std::string(op) + ": state " + shape_str(state.value.val().shape()) + " vs layout with " +
                         std::to_string(layout.count()) + " channels");
    }
}

ad::Var channel(const Field& state, int c) { return ad::slice(state.value, 0, c, 1); }

void enforce_cfl(const GridSpec& grid, const PhysicsParams& params, PhysicsMode mode) {
    const CflReport r = cfl_report(grid, params);
    if (r.ok) return;
    if (mode == PhysicsMode::Rollout) {
        throw NumericError("diffusion_tendency: CFL guard violated, nu_max=" + std::to_string(r.nu_max) +
                           " dt_sub=" + std::to_string(r.dt_sub) + " ratio=" + std::to_string(r.ratio) +
                           " > 0.25");
    }
    if (!params.cfl_warned) {
        std::fprintf(stderr, "[warn] CFL guard exceeded in training mode: nu_max=%g dt_sub=%g ratio=%g > 0.25\n",
                     r.nu_max, r.dt_sub, r.ratio);
        params.cfl_warned = true;
    }
}

} // namespace

Field advection_tendency(const Field& state, const StateChannels& layout) {
    check_layout("advection_tendency", state, layout);
    const Field gx = ddx(state);
    const Field gy = ddy(state);
    std::vector<ad::Var> tendencies;
    for (int c = 0; c < layout.count(); ++c) {
        const auto [ui, vi] = layout.advecting_velocity(c);
        ad::Var u = channel(state, ui);
        ad::Var v = channel(state, vi);
        ad::Var adv = ad::neg(ad::add(ad::mul(u, ad::slice(gx.value, 0, c, 1)),
                                      ad::mul(v, ad::slice(gy.value, 0, c, 1))));
        tendencies.push_back(adv);
    }
    return Field{ad::concat(tendencies, 0), state.grid};
}

Field coriolis_tendency(const Field& state, const StateChannels& layout) {
    check_layout("coriolis_tendency", state, layout);
    ad::Tape& t = *state.value.tape;
    const GridSpec& g = *state.grid;
    Tensor f_row = g.row_field(g.coriolis_f);
    Tensor f3(Shape{1, g.n_lat, g.n_lon}, f_row.vec());
    ad::Var f = t.constant(std::move(f3));
    std::vector<ad::Var> tendencies;
    for (int c = 0; c < layout.count(); ++c) {
        const ChannelInfo& info = layout.channels[static_cast<size_t>(c)];
        if (info.kind == VarKind::ZonalVelocity) {
            const int vi = layout.index_of(VarKind::MeridionalVelocity, info.level);
            if (vi < 0) throw Error("coriolis_tendency: missing V channel for level " + std::to_string(info.level));
            tendencies.push_back(ad::mul(f, channel(state, vi)));
        } else if (info.kind == VarKind::MeridionalVelocity) {
            const int ui = layout.index_of(VarKind::ZonalVelocity, info.level);
            if (ui < 0) throw Error("coriolis_tendency: missing U channel for level " + std::to_string(info.level));
            tendencies.push_back(ad::neg(ad::mul(f, channel(state, ui))));
        } else {
            tendencies.push_back(t.constant(Tensor(Shape{1, g.n_lat, g.n_lon})));
        }
    }
    return Field{ad::concat(tendencies, 0), state.grid};
}

Field diffusion_tendency(const Field& state, const PhysicsVars& vars, const PhysicsParams& params,
                         const StateChannels& layout, PhysicsMode mode) {
    check_layout("diffusion_tendency", state, layout);
    enforce_cfl(*state.grid, params, mode);
    const Field lap = laplacian(state);
    ad::Var nu_m = ad::softplus(vars.raw_nu_momentum);
    ad::Var nu_t = ad::softplus(vars.raw_nu_tracer);
    std::vector<ad::Var> tendencies;
    for (int c = 0; c < layout.count(); ++c) {
        ad::Var lap_c = ad::slice(lap.value, 0, c, 1);
        tendencies.push_back(ad::smul(lap_c, layout.is_velocity(c) ? nu_m : nu_t));
    }
    return Field{ad::concat(tendencies, 0), state.grid};
}

Field physics_step(const Field& state_physical, const PhysicsVars& vars, const PhysicsParams& params,
                   const StateChannels& layout, PhysicsMode mode) {
    check_layout("physics_step", state_physical, layout);
    auto total_tendency = [&](const Field& y) {
        Field adv = advection_tendency(y, layout);
        Field cor = coriolis_tendency(y, layout);
        Field dif = diffusion_tendency(y, vars, params, layout, mode);
        return Field{ad::add(ad::add(adv.value, cor.value), dif.value), y.grid};
    };
    if (params.n_substeps == 1) {
        return total_tendency(state_physical);
    }
    const double dt_sub = params.dt_total / params.n_substeps;
    ad::Var y = state_physical.value;
    for (int k = 0; k < params.n_substeps; ++k) {
        Field cur{y, state_physical.grid};
        Field tend = total_tendency(cur);
        y = ad::add(y, ad::scale(tend.value, dt_sub));
        if (!y.val().all_finite()) {
            const Tensor& v = y.val();
            const int64_t hw = v.dim(1) * v.dim(2);
            int bad = -1;
            for (int c = 0; c < layout.count() && bad < 0; ++c) {
                for (int64_t i = 0; i < hw; ++i) {
                    if (!std::isfinite(v[c * hw + i])) {
                        bad = c;
                        break;
                    }
                }
            }
            throw NumericError("physics_step: non-finite value at substep " + std::to_string(k) + " in channel " +
                               std::to_string(bad) + " (" +
                               layout.channels[static_cast<size_t>(bad)].name + ")");
        }
    }
    ad::Var g_eff = ad::scale(ad::sub(y, state_physical.value), 1.0 / params.dt_total);
    return Field{g_eff, state_physical.grid};
}

} // namespace ocn
