#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ocn/integrator.hpp"

namespace ocn {

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moments per parameter tensor plus the shared step count.
struct OptimState {
    std::vector<Tensor> m, v;
    int64_t t = 0;

    void init(const std::vector<ParamRef>& params);
    bool matches(const std::vector<ParamRef>& params) const;
};

/// Decoupled-weight-decay Adam:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
/// Returns false (update skipped) when any gradient is non-finite.
bool adamw_update(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads, OptimState& opt,
                  const AdamWConfig& cfg);

/// Mean squared error over ocean points and channels; land is excluded from
/// both the numerator and the denominator.
ad::Var mse_loss(ad::Tape& tape, ad::Var pred, ad::Var target, const Tensor& mask_channels);

struct TrainConfig {
    AdamWConfig opt;
    int batch_size = 2;
    int64_t steps = 1000;
    uint64_t seed = 1;
    double clip_norm = 1.0; // global-norm gradient clip; <= 0 disables
    bool train_physics = true;
    bool train_corrector = true;
};

struct StepRecord {
    int64_t step = 0;   // 1-based, cumulative across resume
    double loss = 0.0;  // batch loss at the pre-update parameters
    double nu_momentum = 0.0, nu_tracer = 0.0; // post-update effective values
    double wall_ms = 0.0;
};

using StepCallback = std::function<void(const StepRecord&)>;

struct TrainResult {
    int64_t steps_done = 0;
    double final_loss = 0.0;
};

/// Deterministic single-step training loop over (y_t, F_t, y_{t+dt}) pairs.
/// Pair order is an epoch permutation drawn from a stream derived from
/// (seed, epoch), so resuming at any step reproduces the uninterrupted run.
/// Batch gradients are averaged sequentially in batch-index order.
TrainResult train_steps(HybridModel& model, const Dataset& ds, Range train_range, OptimState& opt,
                        const TrainConfig& cfg, int64_t start_step, const StepCallback& callback);

/// One-sample loss at the current parameters (no update); test/diagnostic hook.
double single_pair_loss(const HybridModel& model, const Dataset& ds, int t);

struct GradCheckEntry {
    std::string param;
    int64_t index = 0;
    double analytic = 0.0, fd = 0.0, rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_physics = 0.0;
    double max_rel_corrector = 0.0;
    int n_physics = 0, n_corrector = 0;
    std::vector<GradCheckEntry> worst; // a few largest offenders for diagnostics
    bool pass(double tol_physics, double tol_corrector) const {
        return max_rel_physics <= tol_physics && max_rel_corrector <= tol_corrector;
    }
};

/// Central finite differences (pinned step) vs tape gradients of the one-step
/// masked MSE loss. Relative error uses an absolute denominator floor of 1e-3
/// so gradients below the finite-difference resolution are compared
/// absolutely (at tol * floor).
GradCheckReport gradcheck(HybridModel& model, const Dataset& ds, int sample_t, int n_corrector_weights,
                          uint64_t seed, double fd_step = 1e-5);

// ---------------------------------------------------------------------------
// checkpoint: versioned binary header plus raw little-endian arrays; reload
// reproduces forward outputs bit-identically.
// ---------------------------------------------------------------------------

struct CheckpointInfo {
    int64_t step = 0;
    uint64_t seed = 0;
    uint64_t config_hash = 0;
};

void save_checkpoint(const std::string& path, HybridModel& model, const OptimState& opt,
                     const CheckpointInfo& info);
CheckpointInfo load_checkpoint(const std::string& path, HybridModel& model, OptimState& opt);

} // namespace ocn
