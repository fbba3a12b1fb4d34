#include "ocn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

#include "ocn/binio.hpp"

namespace ocn {

// ---------------------------------------------------------------------------
// Dataset accessors
// ---------------------------------------------------------------------------

Tensor Dataset::ocean_frame(int t) const {
    const int64_t frame = static_cast<int64_t>(c_ocean()) * H * W;
    Tensor out(Shape{c_ocean(), H, W});
    const double* src = ocean.data() + static_cast<int64_t>(t) * frame;
    for (int64_t i = 0; i < frame; ++i) out[i] = src[i];
    return out;
}

Tensor Dataset::forcing_frame(int t) const {
    const int64_t frame = static_cast<int64_t>(c_forcing()) * H * W;
    Tensor out(Shape{c_forcing(), H, W});
    const double* src = forcing.data() + static_cast<int64_t>(t) * frame;
    for (int64_t i = 0; i < frame; ++i) out[i] = src[i];
    return out;
}

int Dataset::day_of_year(int t) const {
    return static_cast<int>(times[static_cast<size_t>(t)] % year_length) + 1;
}

StateChannels Dataset::layout() const {
    StateChannels sc;
    sc.channels = ocean_channels;
    int max_level = 0;
    for (const ChannelInfo& c : ocean_channels) max_level = std::max(max_level, c.level);
    sc.levels = max_level + 1;
    return sc;
}

GridConfig Dataset::grid_config() const {
    GridConfig g;
    g.n_lat = H;
    g.n_lon = W;
    g.lat_min_deg = lat_min_deg;
    g.lat_max_deg = lat_max_deg;
    g.mask = mask;
    return g;
}

void Dataset::validate() const {
    if (static_cast<int>(times.size()) != n_time) throw Error("dataset: times length mismatch");
    for (size_t t = 1; t < times.size(); ++t) {
        if (times[t] <= times[t - 1]) throw Error("dataset: times must be strictly increasing");
    }
    const int64_t no = static_cast<int64_t>(n_time) * c_ocean() * H * W;
    const int64_t nf = static_cast<int64_t>(n_time) * c_forcing() * H * W;
    if (static_cast<int64_t>(ocean.size()) != no || static_cast<int64_t>(forcing.size()) != nf) {
        throw Error("dataset: array sizes do not match the header");
    }
    for (double v : ocean)
        if (!std::isfinite(v)) throw NumericError("dataset: non-finite ocean value after ingest");
    for (double v : forcing)
        if (!std::isfinite(v)) throw NumericError("dataset: non-finite forcing value after ingest");
}

// ---------------------------------------------------------------------------
// Normalization statistics
// ---------------------------------------------------------------------------

int NormStats::clim_day_index(int day_of_year) const {
    int d = day_of_year;
    if (d < 1) throw Error("clim_day_index: day_of_year must be >= 1");
    if (d > year_length) d = year_length; // leap day reuses the last day
    return d - 1;
}

bool NormStats::is_periodic(int ocean_channel) const {
    return std::find(periodic.begin(), periodic.end(), ocean_channel) != periodic.end();
}

double NormStats::clim_at(int ocean_channel, int day_of_year, int i, int j) const {
    const auto it = std::find(periodic.begin(), periodic.end(), ocean_channel);
    if (it == periodic.end()) return 0.0;
    const int p = static_cast<int>(it - periodic.begin());
    const int d = clim_day_index(day_of_year);
    const int64_t P = static_cast<int64_t>(periodic.size());
    const int64_t HW = climatology.dim(2) * climatology.dim(3);
    return climatology[((d * P + p) * HW) + i * climatology.dim(3) + j];
}

NormStats compute_norm_stats(const Dataset& ds, Range train) {
    if (train.size() < 2) throw Error("compute_norm_stats: training split too small");
    NormStats st;
    st.year_length = ds.year_length;
    const int C = ds.c_ocean(), H = ds.H, W = ds.W;
    const int64_t HW = static_cast<int64_t>(H) * W;
    const int64_t frame = static_cast<int64_t>(C) * HW;

    for (int c = 0; c < C; ++c) {
        if (ds.ocean_channels[static_cast<size_t>(c)].periodic) st.periodic.push_back(c);
    }
    const int P = static_cast<int>(st.periodic.size());

    // climatology: per-day-of-year mean over the training samples
    st.climatology = Tensor(Shape{ds.year_length, std::max(P, 1), H, W});
    if (P > 0) {
        std::vector<int64_t> counts(static_cast<size_t>(ds.year_length), 0);
        for (int t = train.begin; t < train.end; ++t) {
            const int d = st.clim_day_index(ds.day_of_year(t));
            counts[static_cast<size_t>(d)] += 1;
            for (int p = 0; p < P; ++p) {
                const int c = st.periodic[static_cast<size_t>(p)];
                const double* src = ds.ocean.data() + static_cast<int64_t>(t) * frame + c * HW;
                double* dst = st.climatology.data() + (static_cast<int64_t>(d) * P + p) * HW;
                for (int64_t i = 0; i < HW; ++i) dst[i] += src[i];
            }
        }
        // Days never observed in training fall back to the all-train mean of
        // the channel, filled in a second pass below.
        std::vector<std::vector<double>> day_mean_fallback(static_cast<size_t>(P),
                                                           std::vector<double>(static_cast<size_t>(HW), 0.0));
        int64_t n_train_frames = 0;
        for (int t = train.begin; t < train.end; ++t) {
            ++n_train_frames;
            for (int p = 0; p < P; ++p) {
                const int c = st.periodic[static_cast<size_t>(p)];
                const double* src = ds.ocean.data() + static_cast<int64_t>(t) * frame + c * HW;
                for (int64_t i = 0; i < HW; ++i) day_mean_fallback[static_cast<size_t>(p)][static_cast<size_t>(i)] += src[i];
            }
        }
        for (int d = 0; d < ds.year_length; ++d) {
            for (int p = 0; p < P; ++p) {
                double* dst = st.climatology.data() + (static_cast<int64_t>(d) * P + p) * HW;
                if (counts[static_cast<size_t>(d)] > 0) {
                    for (int64_t i = 0; i < HW; ++i) dst[i] /= static_cast<double>(counts[static_cast<size_t>(d)]);
                } else {
                    for (int64_t i = 0; i < HW; ++i)
                        dst[i] = day_mean_fallback[static_cast<size_t>(p)][static_cast<size_t>(i)] /
                                 static_cast<double>(n_train_frames);
                }
            }
        }
    }

    // per-channel mean/std over training samples and ocean points, anomalies
    // for the periodic channels
    st.ocean_mean.assign(static_cast<size_t>(C), 0.0);
    st.ocean_std.assign(static_cast<size_t>(C), 0.0);
    int64_t ocean_points = 0;
    for (int64_t i = 0; i < HW; ++i) ocean_points += ds.mask[i] != 0.0 ? 1 : 0;
    if (ocean_points == 0) throw Error("compute_norm_stats: all-land mask");
    const double n_samples = static_cast<double>(ocean_points) * train.size();

    for (int c = 0; c < C; ++c) {
        double sum = 0.0, sum_sq = 0.0;
        for (int t = train.begin; t < train.end; ++t) {
            const int doy = ds.day_of_year(t);
            const double* src = ds.ocean.data() + static_cast<int64_t>(t) * frame + c * HW;
            for (int64_t i = 0; i < HW; ++i) {
                if (ds.mask[i] == 0.0) continue;
                const double v = src[i] - st.clim_at(c, doy, static_cast<int>(i / W), static_cast<int>(i % W));
                sum += v;
                sum_sq += v * v;
            }
        }
        const double mean = sum / n_samples;
        const double var = std::max(0.0, sum_sq / n_samples - mean * mean);
        st.ocean_mean[static_cast<size_t>(c)] = mean;
        st.ocean_std[static_cast<size_t>(c)] = std::sqrt(var);
        if (st.ocean_std[static_cast<size_t>(c)] < 1e-8) {
            throw NumericError("compute_norm_stats: degenerate ocean channel '" +
                               ds.ocean_channels[static_cast<size_t>(c)].name + "' (std < 1e-8)");
        }
    }

    const int Cf = ds.c_forcing();
    st.forcing_mean.assign(static_cast<size_t>(Cf), 0.0);
    st.forcing_std.assign(static_cast<size_t>(Cf), 0.0);
    const int64_t fframe = static_cast<int64_t>(Cf) * HW;
    for (int c = 0; c < Cf; ++c) {
        double sum = 0.0, sum_sq = 0.0;
        for (int t = train.begin; t < train.end; ++t) {
            const double* src = ds.forcing.data() + static_cast<int64_t>(t) * fframe + c * HW;
            for (int64_t i = 0; i < HW; ++i) {
                if (ds.mask[i] == 0.0) continue;
                sum += src[i];
                sum_sq += src[i] * src[i];
            }
        }
        const double mean = sum / n_samples;
        const double var = std::max(0.0, sum_sq / n_samples - mean * mean);
        st.forcing_mean[static_cast<size_t>(c)] = mean;
        st.forcing_std[static_cast<size_t>(c)] = std::sqrt(var);
        if (st.forcing_std[static_cast<size_t>(c)] < 1e-8) {
            throw NumericError("compute_norm_stats: degenerate forcing channel '" +
                               ds.forcing_channels[static_cast<size_t>(c)].name + "' (std < 1e-8)");
        }
    }
    return st;
}

Splits chronological_split(const Dataset& ds, int n_train, int n_val, int n_test) {
    if (n_train <= 0 || n_val <= 0 || n_test <= 0) {
        throw Error("chronological_split: every split must be non-empty");
    }
    if (n_train + n_val + n_test > ds.n_time) {
        throw Error("chronological_split: splits exceed dataset length " + std::to_string(ds.n_time));
    }
    Splits s;
    s.train = Range{0, n_train};
    s.val = Range{n_train, n_train + n_val};
    s.test = Range{n_train + n_val, n_train + n_val + n_test};
    return s;
}

Splits chronological_split(const Dataset& ds, double train_frac, double val_frac) {
    if (!(train_frac > 0.0) || !(val_frac > 0.0) || train_frac + val_frac >= 1.0) {
        throw Error("chronological_split: fractions must be positive and sum below 1");
    }
    const int n_train = static_cast<int>(ds.n_time * train_frac);
    const int n_val = static_cast<int>(ds.n_time * val_frac);
    const int n_test = ds.n_time - n_train - n_val;
    return chronological_split(ds, n_train, n_val, n_test);
}

// ---------------------------------------------------------------------------
// normalize / denormalize
// ---------------------------------------------------------------------------

Tensor normalize_ocean(const Tensor& frame, const NormStats& stats, int day_of_year, const Tensor& mask) {
    const int C = static_cast<int>(frame.dim(0));
    const int H = static_cast<int>(frame.dim(1)), W = static_cast<int>(frame.dim(2));
    Tensor out(frame.shape());
    for (int c = 0; c < C; ++c) {
        const double mu = stats.ocean_mean[static_cast<size_t>(c)];
        const double inv_sigma = 1.0 / stats.ocean_std[static_cast<size_t>(c)];
        const bool per = stats.is_periodic(c);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                if (mask.at2(i, j) == 0.0) {
                    out.at3(c, i, j) = 0.0;
                    continue;
                }
                const double clim = per ? stats.clim_at(c, day_of_year, i, j) : 0.0;
                out.at3(c, i, j) = (frame.at3(c, i, j) - clim - mu) * inv_sigma;
            }
    }
    return out;
}

Tensor denormalize_ocean(const Tensor& frame_norm, const NormStats& stats, int day_of_year, const Tensor& mask) {
    const int C = static_cast<int>(frame_norm.dim(0));
    const int H = static_cast<int>(frame_norm.dim(1)), W = static_cast<int>(frame_norm.dim(2));
    Tensor out(frame_norm.shape());
    for (int c = 0; c < C; ++c) {
        const double mu = stats.ocean_mean[static_cast<size_t>(c)];
        const double sigma = stats.ocean_std[static_cast<size_t>(c)];
        const bool per = stats.is_periodic(c);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                if (mask.at2(i, j) == 0.0) {
                    out.at3(c, i, j) = 0.0;
                    continue;
                }
                const double clim = per ? stats.clim_at(c, day_of_year, i, j) : 0.0;
                out.at3(c, i, j) = frame_norm.at3(c, i, j) * sigma + mu + clim;
            }
    }
    return out;
}

Tensor normalize_forcing(const Tensor& frame, const NormStats& stats, const Tensor& mask) {
    const int C = static_cast<int>(frame.dim(0));
    const int H = static_cast<int>(frame.dim(1)), W = static_cast<int>(frame.dim(2));
    Tensor out(frame.shape());
    for (int c = 0; c < C; ++c) {
        const double mu = stats.forcing_mean[static_cast<size_t>(c)];
        const double inv_sigma = 1.0 / stats.forcing_std[static_cast<size_t>(c)];
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                out.at3(c, i, j) = mask.at2(i, j) == 0.0 ? 0.0 : (frame.at3(c, i, j) - mu) * inv_sigma;
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// binary container
// ---------------------------------------------------------------------------

namespace {

using io::get_f64;
using io::get_i64;
using io::get_u32;
using io::put_f64;
using io::put_i64;
using io::put_u32;

constexpr char kMagic[4] = {'N', 'O', 'G', 'C'};
constexpr uint32_t kVersion = 1;

void put_channel(std::ostream& os, const ChannelInfo& c) {
    put_u32(os, static_cast<uint32_t>(c.name.size()));
    os.write(c.name.data(), static_cast<std::streamsize>(c.name.size()));
    const unsigned char kind = static_cast<unsigned char>(c.kind);
    os.write(reinterpret_cast<const char*>(&kind), 1);
    put_u32(os, static_cast<uint32_t>(c.level));
    const unsigned char per = c.periodic ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&per), 1);
}

ChannelInfo get_channel(std::istream& is) {
    ChannelInfo c;
    const uint32_t len = get_u32(is);
    if (len > 256) throw IoError("dataset: corrupt channel name length");
    c.name.resize(len);
    is.read(c.name.data(), len);
    unsigned char kind = 0, per = 0;
    is.read(reinterpret_cast<char*>(&kind), 1);
    c.kind = static_cast<VarKind>(kind);
    c.level = static_cast<int>(get_u32(is));
    is.read(reinterpret_cast<char*>(&per), 1);
    c.periodic = per != 0;
    return c;
}

nlohmann::json channel_json(const ChannelInfo& c) {
    return nlohmann::json{{"name", c.name},
                          {"kind", static_cast<int>(c.kind)},
                          {"level", c.level},
                          {"periodic", c.periodic}};
}

} // namespace

void write_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_dataset: cannot open " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(ds.H));
    put_u32(os, static_cast<uint32_t>(ds.W));
    put_u32(os, static_cast<uint32_t>(ds.n_time));
    put_u32(os, static_cast<uint32_t>(ds.c_ocean()));
    put_u32(os, static_cast<uint32_t>(ds.c_forcing()));
    put_u32(os, static_cast<uint32_t>(ds.year_length));
    put_f64(os, ds.lat_min_deg);
    put_f64(os, ds.lat_max_deg);
    for (const ChannelInfo& c : ds.ocean_channels) put_channel(os, c);
    for (const ChannelInfo& c : ds.forcing_channels) put_channel(os, c);
    for (int64_t i = 0; i < ds.mask.numel(); ++i) {
        const unsigned char b = ds.mask[i] != 0.0 ? 1 : 0;
        os.write(reinterpret_cast<const char*>(&b), 1);
    }
    for (int64_t t : ds.times) put_i64(os, t);
    for (double v : ds.ocean) put_f64(os, v);
    for (double v : ds.forcing) put_f64(os, v);
    if (!os) throw IoError("write_dataset: write failed for " + path);
    os.close();

    nlohmann::json meta;
    meta["format"] = "NOGC";
    meta["version"] = kVersion;
    meta["n_time"] = ds.n_time;
    meta["h"] = ds.H;
    meta["w"] = ds.W;
    meta["year_length"] = ds.year_length;
    meta["lat_min_deg"] = ds.lat_min_deg;
    meta["lat_max_deg"] = ds.lat_max_deg;
    nlohmann::json oc = nlohmann::json::array(), fc = nlohmann::json::array();
    for (const ChannelInfo& c : ds.ocean_channels) oc.push_back(channel_json(c));
    for (const ChannelInfo& c : ds.forcing_channels) fc.push_back(channel_json(c));
    meta["ocean_channels"] = oc;
    meta["forcing_channels"] = fc;
    int64_t ocean_cells = 0;
    for (int64_t i = 0; i < ds.mask.numel(); ++i) ocean_cells += ds.mask[i] != 0.0 ? 1 : 0;
    meta["ocean_fraction"] = static_cast<double>(ocean_cells) / static_cast<double>(ds.mask.numel());
    std::ofstream ms(path + ".meta.json");
    if (!ms) throw IoError("write_dataset: cannot open " + path + ".meta.json");
    ms << meta.dump(2) << "\n";
}

Dataset read_dataset(const std::string& path, IngestReport* report) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("read_dataset: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != std::string(kMagic, 4)) {
        throw IoError("read_dataset: bad magic in " + path);
    }
    const uint32_t version = get_u32(is);
    if (version != kVersion) throw IoError("read_dataset: unsupported version " + std::to_string(version));
    Dataset ds;
    ds.H = static_cast<int>(get_u32(is));
    ds.W = static_cast<int>(get_u32(is));
    ds.n_time = static_cast<int>(get_u32(is));
    const int c_ocean = static_cast<int>(get_u32(is));
    const int c_forcing = static_cast<int>(get_u32(is));
    ds.year_length = static_cast<int>(get_u32(is));
    ds.lat_min_deg = get_f64(is);
    ds.lat_max_deg = get_f64(is);
    for (int c = 0; c < c_ocean; ++c) ds.ocean_channels.push_back(get_channel(is));
    for (int c = 0; c < c_forcing; ++c) ds.forcing_channels.push_back(get_channel(is));
    const int64_t HW = static_cast<int64_t>(ds.H) * ds.W;
    ds.mask = Tensor(Shape{ds.H, ds.W});
    for (int64_t i = 0; i < HW; ++i) {
        unsigned char b = 0;
        is.read(reinterpret_cast<char*>(&b), 1);
        ds.mask[i] = b != 0 ? 1.0 : 0.0;
    }
    ds.times.resize(static_cast<size_t>(ds.n_time));
    for (int t = 0; t < ds.n_time; ++t) ds.times[static_cast<size_t>(t)] = get_i64(is);
    ds.ocean.resize(static_cast<size_t>(ds.n_time) * c_ocean * HW);
    for (double& v : ds.ocean) v = get_f64(is);
    ds.forcing.resize(static_cast<size_t>(ds.n_time) * c_forcing * HW);
    for (double& v : ds.forcing) v = get_f64(is);
    if (!is) throw IoError("read_dataset: truncated file " + path);

    // NaN policy: zero the value and mark the cell as land.
    IngestReport rep;
    std::vector<bool> newly_land(static_cast<size_t>(HW), false);
    for (int t = 0; t < ds.n_time; ++t) {
        for (int c = 0; c < c_ocean; ++c) {
            double* fr = ds.ocean.data() + (static_cast<int64_t>(t) * c_ocean + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
                if (!std::isfinite(fr[i])) {
                    fr[i] = 0.0;
                    ++rep.nan_zeroed;
                    newly_land[static_cast<size_t>(i)] = true;
                }
            }
        }
        for (int c = 0; c < c_forcing; ++c) {
            double* fr = ds.forcing.data() + (static_cast<int64_t>(t) * c_forcing + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
                if (!std::isfinite(fr[i])) {
                    fr[i] = 0.0;
                    ++rep.nan_zeroed;
                }
            }
        }
    }
    for (int64_t i = 0; i < HW; ++i) {
        if (newly_land[static_cast<size_t>(i)] && ds.mask[i] != 0.0) {
            ds.mask[i] = 0.0;
            ++rep.cells_masked;
        }
    }
    if (rep.cells_masked > 0) {
        // keep the land-zero invariant on the enlarged land mask
        for (int t = 0; t < ds.n_time; ++t)
            for (int c = 0; c < c_ocean; ++c) {
                double* fr = ds.ocean.data() + (static_cast<int64_t>(t) * c_ocean + c) * HW;
                for (int64_t i = 0; i < HW; ++i)
                    if (ds.mask[i] == 0.0) fr[i] = 0.0;
            }
    }
    if (rep.nan_zeroed > 0) {
        std::fprintf(stderr, "[ingest] zeroed %lld non-finite values, masked %lld cells as land\n",
                     static_cast<long long>(rep.nan_zeroed), static_cast<long long>(rep.cells_masked));
    }
    if (report != nullptr) *report = rep;
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// synthetic generator
// ---------------------------------------------------------------------------

namespace {

struct KindScales {
    double base = 0.0, amp = 1.0;
};

KindScales scales_for(VarKind kind, double velocity_amp) {
    switch (kind) {
        case VarKind::Temperature: return {15.0, 2.5};
        case VarKind::Salinity: return {35.0, 0.4};
        case VarKind::SeaSurfaceHeight: return {0.0, 0.35};
        case VarKind::ZonalVelocity:
        case VarKind::MeridionalVelocity: return {0.0, velocity_amp};
        default: return {0.0, 1.0};
    }
}

/// Sum of a few low-wavenumber zonal modes shaped by latitude envelopes.
Tensor band_limited_field(const GridSpec& g, double base, double amp, Rng& rng) {
    Tensor out(Shape{g.n_lat, g.n_lon});
    struct Mode {
        int m, n;
        double a, phase, tilt;
    };
    std::vector<Mode> modes;
    for (int k = 0; k < 4; ++k) {
        modes.push_back(Mode{1 + static_cast<int>(rng.below(3)), 1 + static_cast<int>(rng.below(2)),
                             rng.uniform(0.3, 1.0), rng.uniform(0.0, 2.0 * M_PI), rng.uniform(0.0, 2.0 * M_PI)});
    }
    for (int i = 0; i < g.n_lat; ++i) {
        const double lat01 = static_cast<double>(i) / (g.n_lat - 1);
        for (int j = 0; j < g.n_lon; ++j) {
            const double lon = 2.0 * M_PI * j / g.n_lon;
            double v = 0.0;
            for (const Mode& md : modes) {
                v += md.a * std::sin(md.m * lon + md.phase) * std::cos(md.n * M_PI * lat01 + md.tilt);
            }
            out.at2(i, j) = base + amp * 0.5 * v;
        }
    }
    return out;
}

double seasonal_reference(VarKind kind, double seasonal_amp, int doy, int year_length, double lat01) {
    if (seasonal_amp == 0.0) return scales_for(kind, 0.0).base;
    const double phase = 2.0 * M_PI * (doy - 1) / year_length;
    const double shape = std::cos(M_PI * (lat01 - 0.5)); // strongest at mid-grid
    switch (kind) {
        case VarKind::Temperature: return 15.0 + seasonal_amp * shape * std::cos(phase);
        case VarKind::Salinity: return 35.0 + 0.15 * seasonal_amp * shape * std::cos(phase + M_PI / 3.0);
        case VarKind::SeaSurfaceHeight: return 0.25 * seasonal_amp * shape * std::cos(phase + M_PI / 5.0);
        default: return scales_for(kind, 0.0).base;
    }
}

} // namespace

Tensor idealized_land_mask(int H, int W, double land_fraction) {
    Tensor m = Tensor::full(Shape{H, W}, 1.0);
    // elliptical continent centred off-middle
    const double ci = 0.45 * H, cj = 0.3 * W;
    const double ri = std::sqrt(land_fraction / M_PI) * H * 1.2;
    const double rj = std::sqrt(land_fraction / M_PI) * W * 1.2;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double di = (i - ci) / ri, dj = (j - cj) / rj;
            if (di * di + dj * dj < 1.0) m.at2(i, j) = 0.0;
        }
    return m;
}

Dataset generate_synthetic(const SynthConfig& config, uint64_t seed) {
    const GridSpec grid = build_grid(config.grid);
    const StateChannels layout = StateChannels::standard(config.levels, config.seasonal_amp > 0.0);
    const int C = layout.count();
    const int H = grid.n_lat, W = grid.n_lon;
    const int64_t HW = static_cast<int64_t>(H) * W;

    PhysicsParams params;
    params.raw_nu_momentum = Tensor::scalar(PhysicsParams::inverse_softplus(config.nu_momentum));
    params.raw_nu_tracer = Tensor::scalar(PhysicsParams::inverse_softplus(config.nu_tracer));
    params.n_substeps = config.n_substeps;
    params.dt_total = config.dt_seconds;
    const CflReport cfl = cfl_report(grid, params);
    if (!cfl.ok) {
        throw NumericError("generate_synthetic: requested diffusivities violate the CFL guard (ratio " +
                           std::to_string(cfl.ratio) + " > 0.25)");
    }

    Dataset ds;
    ds.n_time = config.n_time;
    ds.H = H;
    ds.W = W;
    ds.year_length = config.year_length;
    ds.lat_min_deg = config.grid.lat_min_deg;
    ds.lat_max_deg = config.grid.lat_max_deg;
    ds.ocean_channels = layout.channels;
    ds.forcing_channels = {ChannelInfo{"U10M", VarKind::Forcing, 0, false},
                           ChannelInfo{"V10M", VarKind::Forcing, 0, false},
                           ChannelInfo{"T2M", VarKind::Forcing, 0, false},
                           ChannelInfo{"MSLP", VarKind::Forcing, 0, false}};
    ds.mask = grid.mask;
    ds.times.resize(static_cast<size_t>(config.n_time));
    for (int t = 0; t < config.n_time; ++t) ds.times[static_cast<size_t>(t)] = t;
    ds.ocean.assign(static_cast<size_t>(config.n_time) * C * HW, 0.0);
    ds.forcing.assign(static_cast<size_t>(config.n_time) * 4 * HW, 0.0);

    // initial state
    Tensor state(Shape{C, H, W});
    {
        Rng rng(Rng::derive(seed, 1));
        for (int c = 0; c < C; ++c) {
            const KindScales ks = scales_for(layout.channels[static_cast<size_t>(c)].kind, config.velocity_amp);
            const Tensor f = band_limited_field(grid, ks.base, ks.amp, rng);
            for (int64_t i = 0; i < HW; ++i) state[c * HW + i] = grid.mask[i] != 0.0 ? f[i] : 0.0;
        }
    }

    // forcing: smooth fields with slowly drifting phases
    struct ForcingMode {
        int m;
        double a, phase, speed, tilt, base;
    };
    std::vector<std::vector<ForcingMode>> fmodes(4);
    {
        Rng rng(Rng::derive(seed, 2));
        const double bases[4] = {0.0, 0.0, 288.0, 1.013e5};
        const double amps[4] = {5.0, 4.0, 8.0, 800.0};
        for (int c = 0; c < 4; ++c) {
            for (int k = 0; k < 3; ++k) {
                fmodes[static_cast<size_t>(c)].push_back(
                    ForcingMode{1 + static_cast<int>(rng.below(3)), amps[c] * rng.uniform(0.3, 1.0),
                                rng.uniform(0.0, 2.0 * M_PI), rng.uniform(-0.25, 0.25), rng.uniform(0.0, 2.0 * M_PI),
                                bases[c]});
            }
        }
    }
    auto forcing_at = [&](int c, int t, int i, int j) {
        const double lat01 = static_cast<double>(i) / (H - 1);
        const double lon = 2.0 * M_PI * j / W;
        double v = fmodes[static_cast<size_t>(c)][0].base;
        for (const ForcingMode& md : fmodes[static_cast<size_t>(c)]) {
            v += md.a * std::sin(md.m * lon + md.phase + md.speed * t) * std::cos(M_PI * lat01 + md.tilt);
        }
        return v;
    };

    const double kappa = config.subgrid.kappa_per_day / 86400.0;
    for (int t = 0; t < config.n_time; ++t) {
        // record current frames
        for (int64_t i = 0; i < static_cast<int64_t>(C) * HW; ++i)
            ds.ocean[static_cast<int64_t>(t) * C * HW + i] = state[i];
        for (int c = 0; c < 4; ++c)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const double v = grid.mask.at2(i, j) != 0.0 ? forcing_at(c, t, i, j) : 0.0;
                    ds.forcing[(static_cast<int64_t>(t) * 4 + c) * HW + i * W + j] = v;
                }
        if (t + 1 == config.n_time) break;

        // physics tendency via the solver itself
        ad::Tape tape;
        PhysicsVars vars = lift_physics(tape, params, false);
        Field f{tape.leaf(state), &grid};
        const Tensor g_phys = physics_step(f, vars, params, layout, PhysicsMode::Rollout).value.val();

        // known subgrid term: state-dependent relaxation plus wind coupling
        Tensor g_total = g_phys;
        if (config.subgrid.enabled) {
            const int doy = ds.day_of_year(t);
            for (int c = 0; c < C; ++c) {
                const ChannelInfo& info = layout.channels[static_cast<size_t>(c)];
                for (int i = 0; i < H; ++i) {
                    const double lat01 = static_cast<double>(i) / (H - 1);
                    for (int j = 0; j < W; ++j) {
                        if (grid.mask.at2(i, j) == 0.0) continue;
                        double sub = 0.0;
                        if (layout.is_velocity(c)) {
                            sub = -kappa * state.at3(c, i, j);
                            if (info.level == 0) {
                                const int wind_c = info.kind == VarKind::ZonalVelocity ? 0 : 1;
                                sub += config.subgrid.wind_gain *
                                       ds.forcing[(static_cast<int64_t>(t) * 4 + wind_c) * HW + i * W + j];
                            }
                        } else {
                            const double ref = seasonal_reference(info.kind, config.seasonal_amp, doy,
                                                                  config.year_length, lat01);
                            sub = -kappa * (state.at3(c, i, j) - ref);
                        }
                        g_total.at3(c, i, j) += sub;
                    }
                }
            }
        }

        for (int64_t i = 0; i < static_cast<int64_t>(C) * HW; ++i) {
            const int64_t cell = i % HW;
            state[i] = grid.mask[cell] != 0.0 ? state[i] + config.dt_seconds * g_total[i] : 0.0;
        }
        if (!state.all_finite()) {
            throw NumericError("generate_synthetic: trajectory blew up at step " + std::to_string(t + 1));
        }
    }
    ds.validate();
    return ds;
}

} // namespace ocn
