#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "ocn/tape.hpp"
#include "ocn/tensor.hpp"

namespace ocn {

inline constexpr double kEarthRadius = 6.371e6;  // m
inline constexpr double kEarthOmega = 7.2921e-5; // rad/s

struct GridConfig {
    int n_lat = 0;
    int n_lon = 0;
    double lat_min_deg = -80.0;
    double lat_max_deg = 80.0;
    double radius = kEarthRadius;
    double omega = kEarthOmega;
    std::optional<Tensor> mask; // [H,W], nonzero = ocean; all-ocean when absent
};

/// Immutable spherical lat-lon geometry. Latitude rows are cell centers,
/// equally spaced over [lat_min, lat_max]; longitude covers the full circle
/// periodically. All operator coefficient fields are precomputed here so the
/// differential operators are pure functions of the input field.
///
/// Stencil evaluation order contract (mirrored by the brute-force test
/// oracles, so these expressions are bit-exact specifications):
///   ddx  = mask * ((ce*xe - cw*xw) + c0*x)
///   ddy  = mask * (wn*(xn - x) + ws*(x - xs))
///   lap  = mask * ((fe - fw)*zc + (cn*gn - cs*gs)*mc)
///            with fe = me*(xe - x), fw = mw*(x - xw),
///                 gn = mn*(xn - x), gs = ms*(x - xs)
/// where xe/xw are periodic east/west neighbours, xn/xs replicate-padded
/// north/south neighbours, and the m* factors zero out any contribution from
/// a land neighbour (zero-gradient coast) or from beyond the lat boundary
/// rows (zero meridional flux).
struct GridSpec {
    int n_lat = 0;
    int n_lon = 0;
    double d_lat = 0.0; // radians
    double d_lon = 0.0; // radians
    double radius = kEarthRadius;
    double omega = kEarthOmega;
    std::vector<double> lat_centers; // radians, strictly increasing
    std::vector<double> cos_lat;     // per row, > 0
    std::vector<double> coriolis_f;  // 2*omega*sin(lat), per row

    Tensor mask; // [H,W], 1 = ocean, 0 = land

    // [H,W] coefficient fields, see the contract above.
    Tensor ddx_ce, ddx_cw, ddx_c0;
    Tensor ddy_wn, ddy_ws;
    Tensor lap_me, lap_mw, lap_mn, lap_ms;
    Tensor lap_zc, lap_cn, lap_cs, lap_mc;

    Tensor area_weights; // R^2 cos(lat) dlat dlon, per cell (land included)
    int64_t ocean_count = 0;

    bool all_ocean() const { return ocean_count == static_cast<int64_t>(n_lat) * n_lon; }
    /// Mask tiled to C channels, cached per channel count.
    const Tensor& mask_channels(int channels) const;
    /// A per-row vector broadcast to [H,W].
    Tensor row_field(const std::vector<double>& v) const;

private:
    mutable std::map<int, Tensor> mask_cache_;
};

GridSpec build_grid(const GridConfig& config);

/// A channel-stacked field on a grid; value has shape [C,H,W].
struct Field {
    ad::Var value;
    const GridSpec* grid = nullptr;
};

Field ddx(const Field& f);       // d/dx with periodic wrap in longitude
Field ddy(const Field& f);       // d/dy, one-sided at the boundary rows
Field laplacian(const Field& f); // spherical Laplacian in flux form
Field apply_mask(const Field& f);

} // namespace ocn
