#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ocn/grid.hpp"
#include "ocn/physics.hpp"
#include "ocn/rng.hpp"
#include "ocn/tensor.hpp"

namespace ocn {

/// In-memory dataset: ocean state frames, atmospheric forcing frames, land-sea
/// mask, and channel metadata. Immutable after load; land points hold zero.
struct Dataset {
    int n_time = 0;
    int H = 0, W = 0;
    int year_length = 365; // days per (synthetic) year, for day-of-year lookups
    double lat_min_deg = -80.0, lat_max_deg = 80.0;
    std::vector<int64_t> times; // absolute day indices, strictly increasing
    std::vector<ChannelInfo> ocean_channels;
    std::vector<ChannelInfo> forcing_channels;
    Tensor mask;                // [H,W]
    std::vector<double> ocean;  // [T, C_o, H, W] row-major, time-major
    std::vector<double> forcing; // [T, C_a, H, W]

    int c_ocean() const { return static_cast<int>(ocean_channels.size()); }
    int c_forcing() const { return static_cast<int>(forcing_channels.size()); }
    Tensor ocean_frame(int t) const;
    Tensor forcing_frame(int t) const;
    int day_of_year(int t) const; // 1-based
    StateChannels layout() const;
    GridConfig grid_config() const;
    void validate() const;
};

/// Per-channel normalization statistics plus day-of-year climatology for the
/// periodic channels. Computed from the training split only.
struct NormStats {
    int year_length = 365;
    std::vector<double> ocean_mean, ocean_std;     // per ocean channel
    std::vector<double> forcing_mean, forcing_std; // per forcing channel
    std::vector<int> periodic;                     // ocean channel indices with climatology
    Tensor climatology;                            // [year_length, P, H, W]

    /// 0-based climatology row; day-of-year beyond year_length clamps to the
    /// last day (leap day 366 reuses day 365).
    int clim_day_index(int day_of_year) const;
    double clim_at(int ocean_channel, int day_of_year, int i, int j) const;
    bool is_periodic(int ocean_channel) const;
};

struct Range {
    int begin = 0, end = 0;
    int size() const { return end - begin; }
};

struct Splits {
    Range train, val, test;
};

NormStats compute_norm_stats(const Dataset& ds, Range train);

/// Index-range chronological split; no shuffling across boundaries.
Splits chronological_split(const Dataset& ds, double train_frac, double val_frac);
Splits chronological_split(const Dataset& ds, int n_train, int n_val, int n_test);

/// (x - clim(d) - mu)/sigma for periodic channels, (x - mu)/sigma otherwise;
/// land is zeroed after the transform. denormalize is the exact inverse.
Tensor normalize_ocean(const Tensor& frame, const NormStats& stats, int day_of_year, const Tensor& mask);
Tensor denormalize_ocean(const Tensor& frame_norm, const NormStats& stats, int day_of_year, const Tensor& mask);
Tensor normalize_forcing(const Tensor& frame, const NormStats& stats, const Tensor& mask);

// ---------------------------------------------------------------------------
// On-disk container: magic "NOGC", version, dimension header, channel table,
// little-endian float64 arrays in time-major order. A human-readable JSON
// sidecar (<path>.meta.json) mirrors the header.
// ---------------------------------------------------------------------------

void write_dataset(const std::string& path, const Dataset& ds);

struct IngestReport {
    int64_t nan_zeroed = 0;  // values replaced by zero
    int64_t cells_masked = 0; // mask entries switched to land
};

Dataset read_dataset(const std::string& path, IngestReport* report = nullptr);

// ---------------------------------------------------------------------------
// Synthetic data generator: runs the physics core with known coefficients
// from smooth band-limited initial states under prescribed smooth forcing,
// optionally with a known subgrid term the corrector has to learn.
// ---------------------------------------------------------------------------

struct SubgridConfig {
    bool enabled = false;
    double kappa_per_day = 0.05; // relaxation rate toward the reference state
    double wind_gain = 2.0e-6;   // (m/s^2) per (m/s) of 10 m wind, level-0 velocities
};

struct SynthConfig {
    GridConfig grid;
    int levels = 1;
    int n_time = 256;
    int year_length = 100;
    double dt_seconds = 86400.0;
    int n_substeps = 2;
    double nu_momentum = 1000.0; // generator truth, m^2/s
    double nu_tracer = 500.0;
    double velocity_amp = 0.25;  // initial velocity amplitude, m/s
    double seasonal_amp = 0.0;   // K; scaled variants apply to S and SSH
    SubgridConfig subgrid;
};

Dataset generate_synthetic(const SynthConfig& config, uint64_t seed);

/// Rectangular-ish idealized continent covering roughly the given fraction.
Tensor idealized_land_mask(int H, int W, double land_fraction);

} // namespace ocn
