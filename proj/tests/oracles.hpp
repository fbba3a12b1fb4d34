#pragma once

// Brute-force nested-loop implementations of the grid stencils, written
// directly from the discrete formulas (periodic wrap in longitude, one-sided
// meridional differences at the boundary rows, zero-gradient coast). These
// stay independent of the tape-op composition they are checked against.

#include <cmath>

#include "ocn/grid.hpp"
#include "ocn/rng.hpp"
#include "ocn/tensor.hpp"

namespace ocn::test {

inline Tensor oracle_ddx(const Tensor& x, const GridSpec& g) {
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out(x.shape());
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H; ++i) {
            const double coef = 1.0 / (2.0 * g.radius * g.cos_lat[static_cast<size_t>(i)] * g.d_lon);
            for (int64_t j = 0; j < W; ++j) {
                const int64_t je = (j + 1) % W, jw = (j - 1 + W) % W;
                const double me = g.mask.at2(i, je), mw = g.mask.at2(i, jw);
                const double ce = me * coef, cw = mw * coef, c0 = (mw - me) * coef;
                const double v = ((x.at3(c, i, je) * ce) - (x.at3(c, i, jw) * cw)) + (x.at3(c, i, j) * c0);
                out.at3(c, i, j) = v * g.mask.at2(i, j);
            }
        }
    return out;
}

inline Tensor oracle_ddy(const Tensor& x, const GridSpec& g) {
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const double centered = 1.0 / (2.0 * g.radius * g.d_lat);
    const double onesided = 1.0 / (g.radius * g.d_lat);
    Tensor out(x.shape());
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                const double mn = i + 1 < H ? g.mask.at2(i + 1, j) : 0.0;
                const double ms = i > 0 ? g.mask.at2(i - 1, j) : 0.0;
                double wn, ws;
                if (i == 0) {
                    wn = mn * onesided;
                    ws = 0.0;
                } else if (i + 1 == H) {
                    wn = 0.0;
                    ws = ms * onesided;
                } else {
                    wn = mn * centered;
                    ws = ms * centered;
                }
                const double xn = i + 1 < H ? x.at3(c, i + 1, j) : x.at3(c, i, j);
                const double xs = i > 0 ? x.at3(c, i - 1, j) : x.at3(c, i, j);
                const double xc = x.at3(c, i, j);
                const double v = ((xn - xc) * wn) + ((xc - xs) * ws);
                out.at3(c, i, j) = v * g.mask.at2(i, j);
            }
    return out;
}

inline Tensor oracle_laplacian(const Tensor& x, const GridSpec& g) {
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const double R = g.radius;
    Tensor out(x.shape());
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H; ++i) {
            const double cosl = g.cos_lat[static_cast<size_t>(i)];
            const double zc = 1.0 / (R * R * cosl * cosl * g.d_lon * g.d_lon);
            const double mc = 1.0 / (R * R * cosl * g.d_lat * g.d_lat);
            const double cn = std::cos(g.lat_centers[static_cast<size_t>(i)] + 0.5 * g.d_lat);
            const double cs = std::cos(g.lat_centers[static_cast<size_t>(i)] - 0.5 * g.d_lat);
            for (int64_t j = 0; j < W; ++j) {
                const int64_t je = (j + 1) % W, jw = (j - 1 + W) % W;
                const double me = g.mask.at2(i, je), mw = g.mask.at2(i, jw);
                const double mn = i + 1 < H ? g.mask.at2(i + 1, j) : 0.0;
                const double ms = i > 0 ? g.mask.at2(i - 1, j) : 0.0;
                const double xc = x.at3(c, i, j);
                const double xn = i + 1 < H ? x.at3(c, i + 1, j) : xc;
                const double xs = i > 0 ? x.at3(c, i - 1, j) : xc;
                const double fe = (x.at3(c, i, je) - xc) * me;
                const double fw = (xc - x.at3(c, i, jw)) * mw;
                const double zonal = (fe - fw) * zc;
                const double gn = (xn - xc) * mn;
                const double gs = (xc - xs) * ms;
                const double merid = ((gn * cn) - (gs * cs)) * mc;
                out.at3(c, i, j) = (zonal + merid) * g.mask.at2(i, j);
            }
        }
    return out;
}

/// Random 0/1 mask with roughly the given ocean fraction.
inline Tensor random_mask(int H, int W, Rng& rng, double ocean_fraction = 0.7) {
    Tensor m(Shape{H, W});
    for (int64_t i = 0; i < m.numel(); ++i) m[i] = rng.uniform() < ocean_fraction ? 1.0 : 0.0;
    // guarantee at least one ocean cell
    m[0] = 1.0;
    return m;
}

} // namespace ocn::test
