#include "ocn/eval.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace ocn {

RolloutResult rollout(const HybridModel& model, const Tensor& y0_norm, const Dataset& ds, int t0, int t_lead,
                      PhysicsMode mode) {
    RolloutResult res;
    res.trajectory.push_back(y0_norm);
    Tensor y = y0_norm;
    for (int k = 0; k < t_lead; ++k) {
        const int t = t0 + k;
        const Tensor f_norm = normalize_forcing(ds.forcing_frame(t), model.stats, ds.mask);
        ad::Tape tape;
        StepVars vars = lift_model(tape, model, false, false);
        Tensor next;
        try {
            ad::Var pred = hybrid_step(tape, tape.leaf(y), tape.leaf(f_norm), model, vars, ds.day_of_year(t), mode);
            next = pred.val();
        } catch (const NumericError& e) {
            const std::string what = e.what();
            if (what.find("non-finite") == std::string::npos) throw; // CFL guard etc. stays fatal
            res.blowup_step = k + 1;
            break;
        }
        if (!next.all_finite()) {
            res.blowup_step = k + 1;
            break;
        }
        res.trajectory.push_back(next);
        y = std::move(next);
    }
    return res;
}

double rmse(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
    if (!pred.same_shape(truth)) {
        throw ShapeError("rmse: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
    }
    const int64_t C = pred.dim(0);
    const int64_t HW = pred.dim(1) * pred.dim(2);
    int64_t ocean = 0;
    for (int64_t i = 0; i < HW; ++i) ocean += mask[i] != 0.0 ? 1 : 0;
    if (ocean == 0) throw Error("rmse: all-land mask");
    double acc = 0.0;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < HW; ++i) {
            if (mask[i] == 0.0) continue;
            const double d = pred[c * HW + i] - truth[c * HW + i];
            acc += d * d;
        }
    return std::sqrt(acc / static_cast<double>(ocean * C));
}

std::vector<LeadRow> evaluate_leads(const HybridModel& model, const Dataset& ds, Range test,
                                    const std::vector<int>& leads, int max_starts) {
    if (leads.empty()) throw Error("evaluate_leads: no leads requested");
    int max_lead = 0;
    for (int l : leads) max_lead = std::max(max_lead, l);
    const int n_valid = test.size() - max_lead;
    if (n_valid < 1) {
        throw Error("evaluate_leads: need " + std::to_string(max_lead + 1) + " frames per start, test split has " +
                    std::to_string(test.size()));
    }
    std::vector<int> starts;
    if (max_starts > 0 && n_valid > max_starts) {
        for (int k = 0; k < max_starts; ++k) starts.push_back(test.begin + k * n_valid / max_starts);
    } else {
        for (int k = 0; k < n_valid; ++k) starts.push_back(test.begin + k);
    }

    std::vector<std::vector<double>> per_lead(leads.size());
    for (const int t0 : starts) {
        const Tensor y0 = normalize_ocean(ds.ocean_frame(t0), model.stats, ds.day_of_year(t0), ds.mask);
        const RolloutResult r = rollout(model, y0, ds, t0, max_lead);
        for (size_t li = 0; li < leads.size(); ++li) {
            const int lead = leads[li];
            double v = std::numeric_limits<double>::infinity();
            if (lead < static_cast<int>(r.trajectory.size())) {
                const Tensor truth =
                    normalize_ocean(ds.ocean_frame(t0 + lead), model.stats, ds.day_of_year(t0 + lead), ds.mask);
                v = rmse(r.trajectory[static_cast<size_t>(lead)], truth, ds.mask);
            }
            per_lead[li].push_back(v);
        }
    }

    std::vector<LeadRow> rows;
    for (size_t li = 0; li < leads.size(); ++li) {
        LeadRow row;
        row.lead = leads[li];
        row.n_starts = static_cast<int>(per_lead[li].size());
        double sum = 0.0;
        for (double v : per_lead[li]) sum += v;
        row.mean = sum / row.n_starts;
        double var = 0.0;
        for (double v : per_lead[li]) var += (v - row.mean) * (v - row.mean);
        row.stddev = std::isfinite(row.mean) ? std::sqrt(var / row.n_starts) : 0.0;
        rows.push_back(row);
    }
    return rows;
}

std::string lead_table_text(const std::vector<LeadRow>& rows) {
    std::string out = "lead\tmean_rmse\tstd\tn_starts\n";
    char buf[128];
    for (const LeadRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d\t%.17g\t%.17g\t%d\n", r.lead, r.mean, r.stddev, r.n_starts);
        out += buf;
    }
    return out;
}

} // namespace ocn
