#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ocn/integrator.hpp"

namespace ocn {

struct RolloutResult {
    std::vector<Tensor> trajectory;  // T_lead+1 normalized frames; [0] is y0
    std::optional<int> blowup_step;  // first step whose state went non-finite
};

/// Autoregressive rollout: the model feeds on its own ocean prediction while
/// forcing frames come from the dataset (teacher-forced forcing). A
/// non-finite state ends the rollout early and is recorded, not thrown.
RolloutResult rollout(const HybridModel& model, const Tensor& y0_norm, const Dataset& ds, int t0, int t_lead,
                      PhysicsMode mode = PhysicsMode::Rollout);

/// Root mean squared error over ocean points and all channels (normalized space).
double rmse(const Tensor& pred, const Tensor& truth, const Tensor& mask);

struct LeadRow {
    int lead = 0;
    double mean = 0.0;
    double stddev = 0.0;
    int n_starts = 0;
};

/// For every valid start in the test range (evenly subsampled down to
/// max_starts when positive), roll out to max(leads) and record the RMSE at
/// each requested lead; rows report mean and population std across starts.
/// Leads past a blowup count as +infinity.
std::vector<LeadRow> evaluate_leads(const HybridModel& model, const Dataset& ds, Range test,
                                    const std::vector<int>& leads, int max_starts);

/// Tab-delimited table: lead, mean RMSE, std, n_starts.
std::string lead_table_text(const std::vector<LeadRow>& rows);

} // namespace ocn
