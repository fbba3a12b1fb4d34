#include "ocn/grid.hpp"

#include <cmath>
#include <string>

namespace ocn {

namespace {

constexpr double kDegToRad = M_PI / 180.0;

Tensor tile_channels(const Tensor& hw, int channels) {
    const int64_t hwn = hw.numel();
    Tensor out(Shape{channels, hw.dim(0), hw.dim(1)});
    for (int c = 0; c < channels; ++c) {
        double* dst = out.data() + static_cast<int64_t>(c) * hwn;
        const double* src = hw.data();
        for (int64_t i = 0; i < hwn; ++i) dst[i] = src[i];
    }
    return out;
}

struct Shifts {
    ad::Var e, w, n, s;
};

// Neighbour fields via periodic (lon) / replicate (lat) padding and fixed
// one-hot correlation kernels. Boundary rows of the replicate pad never
// contribute: the lat-edge mask factors are zero there.
Shifts neighbour_shifts(ad::Var x, bool lon_only = false) {
    static const Tensor k_east(Shape{1, 3}, {0.0, 0.0, 1.0});
    static const Tensor k_west(Shape{1, 3}, {1.0, 0.0, 0.0});
    static const Tensor k_north(Shape{3, 1}, {0.0, 0.0, 1.0});
    static const Tensor k_south(Shape{3, 1}, {1.0, 0.0, 0.0});
    const int lat_axis = x.val().rank() - 2;
    const int lon_axis = x.val().rank() - 1;
    Shifts s;
    ad::Var plon = ad::pad_periodic(x, lon_axis);
    s.e = ad::correlate(plon, k_east);
    s.w = ad::correlate(plon, k_west);
    if (!lon_only) {
        ad::Var plat = ad::pad_replicate(x, lat_axis);
        s.n = ad::correlate(plat, k_north);
        s.s = ad::correlate(plat, k_south);
    }
    return s;
}

void require_field(const char* op, const Field& f) {
    if (f.grid == nullptr || !f.value.valid()) throw Error(std::string(op) + ": field not attached to a grid");
    const Tensor& v = f.value.val();
    if (v.rank() != 3 || v.dim(1) != f.grid->n_lat || v.dim(2) != f.grid->n_lon) {
        throw ShapeError(std::string(op) + ": field " + shape_str(v.shape()) + " does not match grid [" +
                         std::to_string(f.grid->n_lat) + "," + std::to_string(f.grid->n_lon) + "]");
    }
}

} // namespace

const Tensor& GridSpec::mask_channels(int channels) const {
    auto it = mask_cache_.find(channels);
    if (it == mask_cache_.end()) it = mask_cache_.emplace(channels, tile_channels(mask, channels)).first;
    return it->second;
}

Tensor GridSpec::row_field(const std::vector<double>& v) const {
    Tensor out(Shape{n_lat, n_lon});
    for (int i = 0; i < n_lat; ++i)
        for (int j = 0; j < n_lon; ++j) out.at2(i, j) = v[static_cast<size_t>(i)];
    return out;
}

GridSpec build_grid(const GridConfig& config) {
    if (config.n_lat < 3 || config.n_lon < 4) {
        throw ConfigError("build_grid: need n_lat >= 3 and n_lon >= 4, got " + std::to_string(config.n_lat) +
                          "x" + std::to_string(config.n_lon));
    }
    if (!(config.lat_min_deg < config.lat_max_deg)) {
        throw ConfigError("build_grid: latitude span must be increasing");
    }
    GridSpec g;
    g.n_lat = config.n_lat;
    g.n_lon = config.n_lon;
    g.radius = config.radius;
    g.omega = config.omega;
    g.d_lat = (config.lat_max_deg - config.lat_min_deg) * kDegToRad / (config.n_lat - 1);
    g.d_lon = 2.0 * M_PI / config.n_lon;

    const int H = g.n_lat, W = g.n_lon;
    g.lat_centers.resize(static_cast<size_t>(H));
    g.cos_lat.resize(static_cast<size_t>(H));
    g.coriolis_f.resize(static_cast<size_t>(H));
    for (int i = 0; i < H; ++i) {
        const double lat = (config.lat_min_deg + (config.lat_max_deg - config.lat_min_deg) * i / (H - 1)) *
                           kDegToRad;
        if (std::abs(lat) >= 90.0 * kDegToRad) {
            throw ConfigError("build_grid: cell-center latitude at or beyond a pole (row " + std::to_string(i) +
                              "); metric factors are singular there");
        }
        g.lat_centers[static_cast<size_t>(i)] = lat;
        g.cos_lat[static_cast<size_t>(i)] = std::cos(lat);
        g.coriolis_f[static_cast<size_t>(i)] = 2.0 * g.omega * std::sin(lat);
    }

    if (config.mask.has_value()) {
        const Tensor& m = *config.mask;
        if (m.rank() != 2 || m.dim(0) != H || m.dim(1) != W) {
            throw ShapeError("build_grid: mask " + shape_str(m.shape()) + " does not match grid [" +
                             std::to_string(H) + "," + std::to_string(W) + "]");
        }
        g.mask = Tensor(Shape{H, W});
        for (int64_t i = 0; i < m.numel(); ++i) g.mask[i] = m[i] != 0.0 ? 1.0 : 0.0;
    } else {
        g.mask = Tensor::full(Shape{H, W}, 1.0);
    }
    g.ocean_count = 0;
    for (int64_t i = 0; i < g.mask.numel(); ++i) g.ocean_count += g.mask[i] != 0.0 ? 1 : 0;

    auto hw = [&] { return Tensor(Shape{H, W}); };
    g.ddx_ce = hw();
    g.ddx_cw = hw();
    g.ddx_c0 = hw();
    g.ddy_wn = hw();
    g.ddy_ws = hw();
    g.lap_me = hw();
    g.lap_mw = hw();
    g.lap_mn = hw();
    g.lap_ms = hw();
    g.lap_zc = hw();
    g.lap_cn = hw();
    g.lap_cs = hw();
    g.lap_mc = hw();
    g.area_weights = hw();

    const double R = g.radius;
    for (int i = 0; i < H; ++i) {
        const double cosl = g.cos_lat[static_cast<size_t>(i)];
        const double ddx_coef = 1.0 / (2.0 * R * cosl * g.d_lon);
        const double ddy_centered = 1.0 / (2.0 * R * g.d_lat);
        const double ddy_onesided = 1.0 / (R * g.d_lat);
        const double zc = 1.0 / (R * R * cosl * cosl * g.d_lon * g.d_lon);
        const double mc = 1.0 / (R * R * cosl * g.d_lat * g.d_lat);
        const double cn = std::cos(g.lat_centers[static_cast<size_t>(i)] + 0.5 * g.d_lat);
        const double cs = std::cos(g.lat_centers[static_cast<size_t>(i)] - 0.5 * g.d_lat);
        for (int j = 0; j < W; ++j) {
            const double me = g.mask.at2(i, (j + 1) % W);
            const double mw = g.mask.at2(i, (j - 1 + W) % W);
            const double mn = i + 1 < H ? g.mask.at2(i + 1, j) : 0.0;
            const double ms = i > 0 ? g.mask.at2(i - 1, j) : 0.0;
            g.ddx_ce.at2(i, j) = me * ddx_coef;
            g.ddx_cw.at2(i, j) = mw * ddx_coef;
            g.ddx_c0.at2(i, j) = (mw - me) * ddx_coef;
            if (i == 0) {
                g.ddy_wn.at2(i, j) = mn * ddy_onesided;
                g.ddy_ws.at2(i, j) = 0.0;
            } else if (i + 1 == H) {
                g.ddy_wn.at2(i, j) = 0.0;
                g.ddy_ws.at2(i, j) = ms * ddy_onesided;
            } else {
                g.ddy_wn.at2(i, j) = mn * ddy_centered;
                g.ddy_ws.at2(i, j) = ms * ddy_centered;
            }
            g.lap_me.at2(i, j) = me;
            g.lap_mw.at2(i, j) = mw;
            g.lap_mn.at2(i, j) = mn;
            g.lap_ms.at2(i, j) = ms;
            g.lap_zc.at2(i, j) = zc;
            g.lap_cn.at2(i, j) = cn;
            g.lap_cs.at2(i, j) = cs;
            g.lap_mc.at2(i, j) = mc;
            g.area_weights.at2(i, j) = R * R * cosl * g.d_lat * g.d_lon;
        }
    }
    return g;
}

Field ddx(const Field& f) {
    require_field("ddx", f);
    const GridSpec& g = *f.grid;
    ad::Tape& t = *f.value.tape;
    const int C = static_cast<int>(f.value.val().dim(0));
    Shifts sh = neighbour_shifts(f.value, /*lon_only=*/true);
    ad::Var ce = t.constant(tile_channels(g.ddx_ce, C));
    ad::Var cw = t.constant(tile_channels(g.ddx_cw, C));
    ad::Var c0 = t.constant(tile_channels(g.ddx_c0, C));
    ad::Var m = t.constant(g.mask_channels(C));
    ad::Var out = ad::mul(ad::add(ad::sub(ad::mul(sh.e, ce), ad::mul(sh.w, cw)), ad::mul(f.value, c0)), m);
    return Field{out, f.grid};
}

Field ddy(const Field& f) {
    require_field("ddy", f);
    const GridSpec& g = *f.grid;
    ad::Tape& t = *f.value.tape;
    const int C = static_cast<int>(f.value.val().dim(0));
    static const Tensor k_north(Shape{3, 1}, {0.0, 0.0, 1.0});
    static const Tensor k_south(Shape{3, 1}, {1.0, 0.0, 0.0});
    ad::Var plat = ad::pad_replicate(f.value, f.value.val().rank() - 2);
    ad::Var xn = ad::correlate(plat, k_north);
    ad::Var xs = ad::correlate(plat, k_south);
    ad::Var wn = t.constant(tile_channels(g.ddy_wn, C));
    ad::Var ws = t.constant(tile_channels(g.ddy_ws, C));
    ad::Var m = t.constant(g.mask_channels(C));
    ad::Var out =
        ad::mul(ad::add(ad::mul(ad::sub(xn, f.value), wn), ad::mul(ad::sub(f.value, xs), ws)), m);
    return Field{out, f.grid};
}

Field laplacian(const Field& f) {
    require_field("laplacian", f);
    const GridSpec& g = *f.grid;
    ad::Tape& t = *f.value.tape;
    const int C = static_cast<int>(f.value.val().dim(0));
    Shifts sh = neighbour_shifts(f.value);
    ad::Var me = t.constant(tile_channels(g.lap_me, C));
    ad::Var mw = t.constant(tile_channels(g.lap_mw, C));
    ad::Var mn = t.constant(tile_channels(g.lap_mn, C));
    ad::Var ms = t.constant(tile_channels(g.lap_ms, C));
    ad::Var zc = t.constant(tile_channels(g.lap_zc, C));
    ad::Var cn = t.constant(tile_channels(g.lap_cn, C));
    ad::Var cs = t.constant(tile_channels(g.lap_cs, C));
    ad::Var mc = t.constant(tile_channels(g.lap_mc, C));
    ad::Var m = t.constant(g.mask_channels(C));

    ad::Var fe = ad::mul(ad::sub(sh.e, f.value), me);
    ad::Var fw = ad::mul(ad::sub(f.value, sh.w), mw);
    ad::Var zonal = ad::mul(ad::sub(fe, fw), zc);
    ad::Var gn = ad::mul(ad::sub(sh.n, f.value), mn);
    ad::Var gs = ad::mul(ad::sub(f.value, sh.s), ms);
    ad::Var merid = ad::mul(ad::sub(ad::mul(gn, cn), ad::mul(gs, cs)), mc);
    ad::Var out = ad::mul(ad::add(zonal, merid), m);
    return Field{out, f.grid};
}

Field apply_mask(const Field& f) {
    require_field("apply_mask", f);
    const int C = static_cast<int>(f.value.val().dim(0));
    return Field{ad::masked_fill(f.value, f.grid->mask_channels(C), 0.0), f.grid};
}

} // namespace ocn
