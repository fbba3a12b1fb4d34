#include "ocn/integrator.hpp"

namespace ocn {

std::vector<ParamRef> HybridModel::trainable(bool include_physics, bool include_corrector) {
    std::vector<ParamRef> refs;
    if (include_physics) {
        refs.push_back({"physics.raw_nu_momentum", &physics.raw_nu_momentum});
        refs.push_back({"physics.raw_nu_tracer", &physics.raw_nu_tracer});
    }
    if (include_corrector) corrector.collect(refs);
    return refs;
}

HybridModel HybridModel::create(GridSpec grid, StateChannels layout, PhysicsParams physics,
                                CorrectorConfig corr_cfg, NormStats stats, uint64_t init_seed) {
    corr_cfg.validate(grid.n_lat, grid.n_lon);
    HybridModel m;
    m.grid = std::move(grid);
    m.layout = std::move(layout);
    m.physics = std::move(physics);
    m.corr_cfg = corr_cfg;
    m.stats = std::move(stats);
    Rng rng(Rng::derive(init_seed, 0xC0FFEE));
    m.corrector = CorrectorWeights::init(corr_cfg, m.layout.count() + 4, m.layout.count(), rng);
    return m;
}

StepVars lift_model(ad::Tape& tape, const HybridModel& model, bool train_physics, bool train_corrector) {
    StepVars v;
    v.physics = lift_physics(tape, model.physics, train_physics);
    v.corrector = lift_corrector(tape, model.corrector, train_corrector);
    return v;
}

namespace {

// [C,H,W] constants for the normalization bridge at a given day.
struct NormFields {
    Tensor sigma, mu_clim, dt_over_sigma;
};

NormFields norm_fields(const HybridModel& model, int day_of_year) {
    const int C = model.layout.count(), H = model.grid.n_lat, W = model.grid.n_lon;
    NormFields nf{Tensor(Shape{C, H, W}), Tensor(Shape{C, H, W}), Tensor(Shape{C, H, W})};
    for (int c = 0; c < C; ++c) {
        const double sigma = model.stats.ocean_std[static_cast<size_t>(c)];
        const double mu = model.stats.ocean_mean[static_cast<size_t>(c)];
        const bool per = model.stats.is_periodic(c);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                nf.sigma.at3(c, i, j) = sigma;
                nf.mu_clim.at3(c, i, j) = mu + (per ? model.stats.clim_at(c, day_of_year, i, j) : 0.0);
                nf.dt_over_sigma.at3(c, i, j) = model.dt() / sigma;
            }
    }
    return nf;
}

} // namespace

ad::Var hybrid_step(ad::Tape& tape, ad::Var y_norm, ad::Var f_norm, const HybridModel& model,
                    const StepVars& vars, int day_of_year, PhysicsMode mode) {
    const int C = model.layout.count();
    if (y_norm.val().dim(0) != C) {
        throw ShapeError("hybrid_step: state " + shape_str(y_norm.val().shape()) + " vs layout with " +
                         std::to_string(C) + " channels");
    }
    const Tensor& mask_c = model.grid.mask_channels(C);

    ad::Var y_next = y_norm;
    ad::Var g_p_norm, g_n;
    if (model.physics_enabled) {
        const NormFields nf = norm_fields(model, day_of_year);
        ad::Var y_phys = ad::masked_fill(
            ad::add(ad::mul(y_norm, tape.constant(nf.sigma)), tape.constant(nf.mu_clim)), mask_c, 0.0);
        Field g_p = physics_step(Field{y_phys, &model.grid}, vars.physics, model.physics, model.layout, mode);
        g_p_norm = ad::mul(g_p.value, tape.constant(nf.dt_over_sigma));
        y_next = ad::add(y_next, g_p_norm);
    }
    if (model.corrector_enabled) {
        g_n = corrector_forward(Field{y_norm, &model.grid}, Field{f_norm, &model.grid}, vars.corrector,
                                model.corr_cfg).value;
        y_next = ad::add(y_next, g_n);
    }
    y_next = ad::masked_fill(y_next, mask_c, 0.0);

    if (!y_next.val().all_finite()) {
        const bool physics_bad = g_p_norm.valid() && !g_p_norm.val().all_finite();
        const bool neural_bad = g_n.valid() && !g_n.val().all_finite();
        std::string branch = physics_bad ? "physics" : neural_bad ? "neural" : "combined";
        throw NumericError("hybrid_step: " + branch + " branch produced a non-finite contribution");
    }
    return y_next;
}

} // namespace ocn
