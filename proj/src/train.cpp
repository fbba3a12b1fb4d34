#include "ocn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ocn/binio.hpp"

namespace ocn {

void OptimState::init(const std::vector<ParamRef>& params) {
    m.clear();
    v.clear();
    for (const ParamRef& p : params) {
        m.emplace_back(p.tensor->shape());
        v.emplace_back(p.tensor->shape());
    }
    t = 0;
}

bool OptimState::matches(const std::vector<ParamRef>& params) const {
    if (m.size() != params.size() || v.size() != params.size()) return false;
    for (size_t i = 0; i < params.size(); ++i) {
        if (!m[i].same_shape(*params[i].tensor)) return false;
    }
    return true;
}

bool adamw_update(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads, OptimState& opt,
                  const AdamWConfig& cfg) {
    if (params.size() != grads.size() || !opt.matches(params)) {
        throw Error("adamw_update: parameter/gradient/state mismatch");
    }
    for (const Tensor& g : grads) {
        if (!g.all_finite()) return false; // skip the update, report to caller
    }
    opt.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.t));
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& theta = *params[p].tensor;
        Tensor& m = opt.m[p];
        Tensor& v = opt.v[p];
        const Tensor& g = grads[p];
        for (int64_t i = 0; i < theta.numel(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            theta[i] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta[i]);
        }
    }
    return true;
}

ad::Var mse_loss(ad::Tape& tape, ad::Var pred, ad::Var target, const Tensor& mask_channels) {
    if (!pred.val().same_shape(target.val()) || !pred.val().same_shape(mask_channels)) {
        throw ShapeError("mse_loss: shape mismatch " + shape_str(pred.val().shape()) + " vs " +
                         shape_str(target.val().shape()));
    }
    int64_t count = 0;
    for (int64_t i = 0; i < mask_channels.numel(); ++i) count += mask_channels[i] != 0.0 ? 1 : 0;
    if (count == 0) throw Error("mse_loss: all-land mask, empty mean");
    ad::Var sq = ad::square(ad::sub(pred, target));
    ad::Var masked = ad::mul(sq, tape.constant(mask_channels));
    return ad::scale(ad::sum(masked), 1.0 / static_cast<double>(count));
}

namespace {

struct SamplePrep {
    Tensor y_norm, f_norm, target_norm;
    int day = 1;
};

SamplePrep prep_pair(const HybridModel& model, const Dataset& ds, int t) {
    SamplePrep s;
    s.day = ds.day_of_year(t);
    s.y_norm = normalize_ocean(ds.ocean_frame(t), model.stats, s.day, ds.mask);
    s.f_norm = normalize_forcing(ds.forcing_frame(t), model.stats, ds.mask);
    s.target_norm = normalize_ocean(ds.ocean_frame(t + 1), model.stats, ds.day_of_year(t + 1), ds.mask);
    return s;
}

double pair_loss_and_grads(HybridModel& model, const Dataset& ds, int t, bool train_physics,
                           bool train_corrector, std::vector<Tensor>* grads_out) {
    const SamplePrep s = prep_pair(model, ds, t);
    ad::Tape tape;
    StepVars vars = lift_model(tape, model, train_physics, train_corrector);
    ad::Var y = tape.leaf(s.y_norm);
    ad::Var f = tape.leaf(s.f_norm);
    ad::Var pred = hybrid_step(tape, y, f, model, vars, s.day, PhysicsMode::Training);
    ad::Var loss = mse_loss(tape, pred, tape.constant(s.target_norm),
                            model.grid.mask_channels(model.layout.count()));
    if (grads_out != nullptr) {
        tape.backward(loss);
        grads_out->clear();
        // leaf order equals trainable() order by construction of lift_model
        std::vector<ad::Var> leaves;
        for (int32_t id = 0; id < tape.size(); ++id) {
            if (tape.parents(id).empty() && tape.needs_grad(id)) leaves.push_back(ad::Var{&tape, id});
        }
        for (ad::Var l : leaves) grads_out->push_back(tape.grad(l));
    }
    return loss.val()[0];
}

void clip_global_norm(std::vector<Tensor>& grads, double clip) {
    if (clip <= 0.0) return;
    double sq = 0.0;
    for (const Tensor& g : grads)
        for (int64_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
    const double norm = std::sqrt(sq);
    if (norm <= clip) return;
    const double s = clip / norm;
    for (Tensor& g : grads)
        for (int64_t i = 0; i < g.numel(); ++i) g[i] *= s;
}

} // namespace

double single_pair_loss(const HybridModel& model, const Dataset& ds, int t) {
    return pair_loss_and_grads(const_cast<HybridModel&>(model), ds, t, false, false, nullptr);
}

TrainResult train_steps(HybridModel& model, const Dataset& ds, Range train_range, OptimState& opt,
                        const TrainConfig& cfg, int64_t start_step, const StepCallback& callback) {
    const int n_pairs = train_range.size() - 1;
    if (n_pairs < 1) throw Error("train_steps: training split has no (t, t+1) pairs");
    const int batch = std::max(1, cfg.batch_size);
    const int steps_per_epoch = std::max(1, n_pairs / batch);
    std::vector<ParamRef> params = model.trainable(cfg.train_physics, cfg.train_corrector);
    if (params.empty()) throw Error("train_steps: nothing to train");
    if (!opt.matches(params)) opt.init(params);

    std::vector<int> epoch_perm;
    int64_t perm_epoch = -1;
    auto pair_for = [&](int64_t step, int b) {
        const int64_t epoch = step / steps_per_epoch;
        const int pos = static_cast<int>(step % steps_per_epoch);
        if (epoch != perm_epoch) {
            epoch_perm.resize(static_cast<size_t>(n_pairs));
            std::iota(epoch_perm.begin(), epoch_perm.end(), 0);
            Rng r(Rng::derive(cfg.seed, 1000 + static_cast<uint64_t>(epoch)));
            r.shuffle(epoch_perm);
            perm_epoch = epoch;
        }
        const int k = (pos * batch + b) % n_pairs;
        return train_range.begin + epoch_perm[static_cast<size_t>(k)];
    };

    TrainResult res;
    std::vector<Tensor> grads_sum, grads;
    for (int64_t step = start_step; step < cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        grads_sum.clear();
        for (int b = 0; b < batch; ++b) {
            const int t = pair_for(step, b);
            const double loss = pair_loss_and_grads(model, ds, t, cfg.train_physics, cfg.train_corrector, &grads);
            if (!std::isfinite(loss)) {
                throw NumericError("train_steps: non-finite loss at step " + std::to_string(step + 1) +
                                   " (pair t=" + std::to_string(t) + ")");
            }
            loss_sum += loss;
            if (grads_sum.empty()) {
                grads_sum = grads;
            } else {
                for (size_t p = 0; p < grads.size(); ++p)
                    for (int64_t i = 0; i < grads[p].numel(); ++i) grads_sum[p][i] += grads[p][i];
            }
        }
        const double inv_b = 1.0 / static_cast<double>(batch);
        for (Tensor& g : grads_sum)
            for (int64_t i = 0; i < g.numel(); ++i) g[i] *= inv_b;
        clip_global_norm(grads_sum, cfg.clip_norm);
        if (!adamw_update(params, grads_sum, opt, cfg.opt)) {
            std::fprintf(stderr, "[warn] step %lld: non-finite gradients, update skipped\n",
                         static_cast<long long>(step + 1));
        }
        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        StepRecord rec;
        rec.step = step + 1;
        rec.loss = loss_sum * inv_b;
        rec.nu_momentum = model.physics.nu_momentum();
        rec.nu_tracer = model.physics.nu_tracer();
        rec.wall_ms = wall_ms;
        if (callback) callback(rec);
        res.steps_done = rec.step;
        res.final_loss = rec.loss;
    }
    return res;
}

GradCheckReport gradcheck(HybridModel& model, const Dataset& ds, int sample_t, int n_corrector_weights,
                          uint64_t seed, double fd_step) {
    GradCheckReport rep;
    const bool physics = model.physics_enabled;
    const bool corrector = model.corrector_enabled;
    std::vector<ParamRef> params = model.trainable(physics, corrector);

    auto loss_at = [&] { return single_pair_loss(model, ds, sample_t); };

    // analytic gradients once
    const SamplePrep s = prep_pair(model, ds, sample_t);
    ad::Tape tape;
    StepVars vars = lift_model(tape, model, physics, corrector);
    ad::Var pred = hybrid_step(tape, tape.leaf(s.y_norm), tape.leaf(s.f_norm), model, vars, s.day,
                               PhysicsMode::Training);
    ad::Var loss = mse_loss(tape, pred, tape.constant(s.target_norm),
                            model.grid.mask_channels(model.layout.count()));
    tape.backward(loss);
    std::vector<ad::Var> leaves;
    for (int32_t id = 0; id < tape.size(); ++id) {
        if (tape.parents(id).empty() && tape.needs_grad(id)) leaves.push_back(ad::Var{&tape, id});
    }
    if (leaves.size() != params.size()) throw Error("gradcheck: leaf/parameter order mismatch");

    auto check_entry = [&](size_t pi, int64_t idx) {
        const double analytic = tape.grad(leaves[pi])[idx];
        Tensor& master = *params[pi].tensor;
        const double saved = master[idx];
        master[idx] = saved + fd_step;
        const double fp = loss_at();
        master[idx] = saved - fd_step;
        const double fm = loss_at();
        master[idx] = saved;
        const double fd = (fp - fm) / (2.0 * fd_step);
        const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-3});
        GradCheckEntry e{params[pi].name, idx, analytic, fd, std::abs(analytic - fd) / denom};
        return e;
    };

    std::vector<GradCheckEntry> entries;
    size_t first_corrector = 0;
    if (physics) {
        entries.push_back(check_entry(0, 0)); // raw_nu_momentum
        entries.push_back(check_entry(1, 0)); // raw_nu_tracer
        rep.n_physics = 2;
        first_corrector = 2;
    }
    if (corrector && params.size() > first_corrector) {
        Rng pick(Rng::derive(seed, 77));
        int64_t total = 0;
        for (size_t p = first_corrector; p < params.size(); ++p) total += params[p].tensor->numel();
        for (int k = 0; k < n_corrector_weights; ++k) {
            int64_t flat = pick.below(total);
            size_t pi = first_corrector;
            while (flat >= params[pi].tensor->numel()) {
                flat -= params[pi].tensor->numel();
                ++pi;
            }
            entries.push_back(check_entry(pi, flat));
            rep.n_corrector += 1;
        }
    }

    for (size_t i = 0; i < entries.size(); ++i) {
        const bool is_physics = physics && i < 2;
        if (is_physics)
            rep.max_rel_physics = std::max(rep.max_rel_physics, entries[i].rel_err);
        else
            rep.max_rel_corrector = std::max(rep.max_rel_corrector, entries[i].rel_err);
    }
    std::sort(entries.begin(), entries.end(),
              [](const GradCheckEntry& a, const GradCheckEntry& b) { return a.rel_err > b.rel_err; });
    rep.worst.assign(entries.begin(), entries.begin() + std::min<size_t>(5, entries.size()));
    return rep;
}

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'N', 'O', 'C', 'P'};
constexpr uint32_t kCkptVersion = 1;
} // namespace

void save_checkpoint(const std::string& path, HybridModel& model, const OptimState& opt,
                     const CheckpointInfo& info) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_checkpoint: cannot open " + path);
    os.write(kCkptMagic, 4);
    io::put_u32(os, kCkptVersion);
    io::put_u64(os, info.config_hash);
    io::put_i64(os, info.step);
    io::put_u64(os, info.seed);
    // physics
    io::put_f64(os, model.physics.raw_nu_momentum[0]);
    io::put_f64(os, model.physics.raw_nu_tracer[0]);
    io::put_u32(os, static_cast<uint32_t>(model.physics.n_substeps));
    io::put_f64(os, model.physics.dt_total);
    io::put_u32(os, model.physics_enabled ? 1 : 0);
    io::put_u32(os, model.corrector_enabled ? 1 : 0);
    // corrector weights
    std::vector<ParamRef> cw;
    model.corrector.collect(cw);
    io::put_u32(os, static_cast<uint32_t>(cw.size()));
    for (const ParamRef& p : cw) {
        io::put_str(os, p.name);
        io::put_tensor(os, *p.tensor);
    }
    // norm stats
    io::put_u32(os, static_cast<uint32_t>(model.stats.year_length));
    io::put_u32(os, static_cast<uint32_t>(model.stats.ocean_mean.size()));
    for (double x : model.stats.ocean_mean) io::put_f64(os, x);
    for (double x : model.stats.ocean_std) io::put_f64(os, x);
    io::put_u32(os, static_cast<uint32_t>(model.stats.forcing_mean.size()));
    for (double x : model.stats.forcing_mean) io::put_f64(os, x);
    for (double x : model.stats.forcing_std) io::put_f64(os, x);
    io::put_u32(os, static_cast<uint32_t>(model.stats.periodic.size()));
    for (int p : model.stats.periodic) io::put_u32(os, static_cast<uint32_t>(p));
    io::put_tensor(os, model.stats.climatology);
    // optimizer
    io::put_i64(os, opt.t);
    io::put_u32(os, static_cast<uint32_t>(opt.m.size()));
    for (const Tensor& m : opt.m) io::put_tensor(os, m);
    for (const Tensor& v : opt.v) io::put_tensor(os, v);
    if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

CheckpointInfo load_checkpoint(const std::string& path, HybridModel& model, OptimState& opt) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != std::string(kCkptMagic, 4)) {
        throw IoError("load_checkpoint: bad magic in " + path);
    }
    if (io::get_u32(is) != kCkptVersion) throw IoError("load_checkpoint: unsupported version");
    CheckpointInfo info;
    info.config_hash = io::get_u64(is);
    info.step = io::get_i64(is);
    info.seed = io::get_u64(is);
    model.physics.raw_nu_momentum = Tensor::scalar(io::get_f64(is));
    model.physics.raw_nu_tracer = Tensor::scalar(io::get_f64(is));
    model.physics.n_substeps = static_cast<int>(io::get_u32(is));
    model.physics.dt_total = io::get_f64(is);
    model.physics_enabled = io::get_u32(is) != 0;
    model.corrector_enabled = io::get_u32(is) != 0;
    std::vector<ParamRef> cw;
    model.corrector.collect(cw);
    const uint32_t n = io::get_u32(is);
    if (n != cw.size()) {
        throw IoError("load_checkpoint: corrector has " + std::to_string(cw.size()) + " tensors, file has " +
                      std::to_string(n));
    }
    for (ParamRef& p : cw) {
        const std::string name = io::get_str(is);
        Tensor t = io::get_tensor(is);
        if (name != p.name || !t.same_shape(*p.tensor)) {
            throw IoError("load_checkpoint: tensor mismatch at '" + name + "' (expected '" + p.name + "' " +
                          shape_str(p.tensor->shape()) + ")");
        }
        *p.tensor = std::move(t);
    }
    model.stats.year_length = static_cast<int>(io::get_u32(is));
    const uint32_t co = io::get_u32(is);
    model.stats.ocean_mean.resize(co);
    model.stats.ocean_std.resize(co);
    for (double& x : model.stats.ocean_mean) x = io::get_f64(is);
    for (double& x : model.stats.ocean_std) x = io::get_f64(is);
    const uint32_t cf = io::get_u32(is);
    model.stats.forcing_mean.resize(cf);
    model.stats.forcing_std.resize(cf);
    for (double& x : model.stats.forcing_mean) x = io::get_f64(is);
    for (double& x : model.stats.forcing_std) x = io::get_f64(is);
    const uint32_t np = io::get_u32(is);
    model.stats.periodic.resize(np);
    for (int& p : model.stats.periodic) p = static_cast<int>(io::get_u32(is));
    model.stats.climatology = io::get_tensor(is);
    opt.t = io::get_i64(is);
    const uint32_t nopt = io::get_u32(is);
    opt.m.resize(nopt);
    opt.v.resize(nopt);
    for (Tensor& m : opt.m) m = io::get_tensor(is);
    for (Tensor& v : opt.v) v = io::get_tensor(is);
    if (!is) throw IoError("load_checkpoint: truncated file " + path);
    return info;
}

} // namespace ocn
