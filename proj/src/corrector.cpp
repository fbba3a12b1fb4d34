#include "ocn/corrector.hpp"

#include <cmath>

namespace ocn {

void CorrectorConfig::validate(int height, int width) const {
    if (n_heads <= 0 || d_model % n_heads != 0) {
        throw ConfigError("corrector: d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    }
    const int f = 1 << n_down;
    if (height % f != 0 || width % f != 0) {
        throw ConfigError("corrector: grid " + std::to_string(height) + "x" + std::to_string(width) +
                          " not divisible by 2^n_down = " + std::to_string(f));
    }
    if (base_channels <= 0 || n_down <= 0) throw ConfigError("corrector: base_channels and n_down must be positive");
}

namespace {

Tensor init_uniform(Shape shape, int64_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

} // namespace

CorrectorWeights CorrectorWeights::init(const CorrectorConfig& cfg, int c_in, int c_out, Rng& rng) {
    CorrectorWeights w;
    int in_ch = c_in;
    for (int k = 0; k < cfg.n_down; ++k) {
        const int width = cfg.stage_width(k);
        const int down_out = k + 1 == cfg.n_down ? cfg.d_model : cfg.stage_width(k + 1);
        w.enc_conv.push_back({init_uniform(Shape{width, in_ch, 3, 3}, static_cast<int64_t>(in_ch) * 9, rng),
                              Tensor(Shape{width})});
        w.enc_down.push_back({init_uniform(Shape{down_out, width, 3, 3}, static_cast<int64_t>(width) * 9, rng),
                              Tensor(Shape{down_out})});
        in_ch = down_out;
    }
    for (int i = 0; i < cfg.n_heads; ++i) {
        w.wq.push_back(init_uniform(Shape{cfg.d_model, cfg.d_k()}, cfg.d_model, rng));
        w.wk.push_back(init_uniform(Shape{cfg.d_model, cfg.d_k()}, cfg.d_model, rng));
        w.wv.push_back(init_uniform(Shape{cfg.d_model, cfg.d_k()}, cfg.d_model, rng));
    }
    w.wo = init_uniform(Shape{cfg.d_model, cfg.d_model}, cfg.d_model, rng);
    int cur = cfg.d_model;
    for (int j = 0; j < cfg.n_down; ++j) {
        const int k = cfg.n_down - 1 - j;
        const int width = cfg.stage_width(k);
        w.dec_up.push_back({init_uniform(Shape{cur, width, 3, 3}, static_cast<int64_t>(cur) * 9, rng),
                            Tensor(Shape{width})});
        w.dec_conv.push_back({init_uniform(Shape{width, 2 * width, 3, 3}, static_cast<int64_t>(2 * width) * 9, rng),
                              Tensor(Shape{width})});
        cur = width;
    }
    w.dec_out = {init_uniform(Shape{c_out, cur, 1, 1}, cur, rng), Tensor(Shape{c_out})};
    return w;
}

CorrectorWeights CorrectorWeights::zeros(const CorrectorConfig& cfg, int c_in, int c_out) {
    Rng rng(0);
    CorrectorWeights w = init(cfg, c_in, c_out, rng);
    std::vector<ParamRef> refs;
    w.collect(refs);
    for (ParamRef& r : refs)
        for (int64_t i = 0; i < r.tensor->numel(); ++i) (*r.tensor)[i] = 0.0;
    return w;
}

void CorrectorWeights::collect(std::vector<ParamRef>& out) {
    for (size_t k = 0; k < enc_conv.size(); ++k) {
        out.push_back({"enc_conv" + std::to_string(k) + ".w", &enc_conv[k].w});
        out.push_back({"enc_conv" + std::to_string(k) + ".b", &enc_conv[k].b});
        out.push_back({"enc_down" + std::to_string(k) + ".w", &enc_down[k].w});
        out.push_back({"enc_down" + std::to_string(k) + ".b", &enc_down[k].b});
    }
    for (size_t i = 0; i < wq.size(); ++i) {
        out.push_back({"ste.wq" + std::to_string(i), &wq[i]});
        out.push_back({"ste.wk" + std::to_string(i), &wk[i]});
        out.push_back({"ste.wv" + std::to_string(i), &wv[i]});
    }
    out.push_back({"ste.wo", &wo});
    for (size_t j = 0; j < dec_up.size(); ++j) {
        out.push_back({"dec_up" + std::to_string(j) + ".w", &dec_up[j].w});
        out.push_back({"dec_up" + std::to_string(j) + ".b", &dec_up[j].b});
        out.push_back({"dec_conv" + std::to_string(j) + ".w", &dec_conv[j].w});
        out.push_back({"dec_conv" + std::to_string(j) + ".b", &dec_conv[j].b});
    }
    out.push_back({"dec_out.w", &dec_out.w});
    out.push_back({"dec_out.b", &dec_out.b});
}

int64_t CorrectorWeights::parameter_count() const {
    std::vector<ParamRef> refs;
    const_cast<CorrectorWeights*>(this)->collect(refs);
    int64_t n = 0;
    for (const ParamRef& r : refs) n += r.tensor->numel();
    return n;
}

// Leaf insertion follows CorrectorWeights::collect() order exactly, so tape
// leaves, optimizer state, and checkpoints all index parameters identically.
CorrectorVars lift_corrector(ad::Tape& tape, const CorrectorWeights& w, bool trainable) {
    CorrectorVars v;
    auto lift_layer = [&](const CorrectorWeights::ConvLayer& l) {
        return CorrectorVars::ConvLayer{tape.leaf(l.w, trainable), tape.leaf(l.b, trainable)};
    };
    for (size_t k = 0; k < w.enc_conv.size(); ++k) {
        v.enc_conv.push_back(lift_layer(w.enc_conv[k]));
        v.enc_down.push_back(lift_layer(w.enc_down[k]));
    }
    for (size_t i = 0; i < w.wq.size(); ++i) {
        v.wq.push_back(tape.leaf(w.wq[i], trainable));
        v.wk.push_back(tape.leaf(w.wk[i], trainable));
        v.wv.push_back(tape.leaf(w.wv[i], trainable));
    }
    v.wo = tape.leaf(w.wo, trainable);
    for (size_t j = 0; j < w.dec_up.size(); ++j) {
        v.dec_up.push_back(lift_layer(w.dec_up[j]));
        v.dec_conv.push_back(lift_layer(w.dec_conv[j]));
    }
    v.dec_out = lift_layer(w.dec_out);
    return v;
}

EncodeResult encode(ad::Var y_norm, ad::Var f_norm, const CorrectorVars& vars, const CorrectorConfig& cfg) {
    const Tensor& yv = y_norm.val();
    cfg.validate(static_cast<int>(yv.dim(1)), static_cast<int>(yv.dim(2)));
    EncodeResult res;
    ad::Var x = ad::concat({y_norm, f_norm}, 0);
    for (size_t k = 0; k < vars.enc_conv.size(); ++k) {
        ad::Var a = ad::relu(ad::conv2d(x, vars.enc_conv[k].w, vars.enc_conv[k].b, 1, 1));
        res.skips.push_back(a);
        x = ad::conv2d(a, vars.enc_down[k].w, vars.enc_down[k].b, 2, 1);
    }
    res.z = x;
    return res;
}

ad::Var ste(ad::Var z, const CorrectorVars& vars, const CorrectorConfig& cfg) {
    const Shape z_shape = z.val().shape();
    if (z_shape.size() != 3 || z_shape[0] != cfg.d_model) {
        throw ShapeError("ste: expected [d_model,H,W] with d_model=" + std::to_string(cfg.d_model) + ", got " +
                         shape_str(z_shape));
    }
    const int64_t n_tokens = z_shape[1] * z_shape[2];
    ad::Var x = ad::transpose2d(ad::reshape(z, Shape{cfg.d_model, n_tokens})); // [N, d_model]
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.d_k()));
    std::vector<ad::Var> heads;
    for (int i = 0; i < cfg.n_heads; ++i) {
        ad::Var q = ad::matmul(x, vars.wq[static_cast<size_t>(i)]);
        ad::Var k = ad::matmul(x, vars.wk[static_cast<size_t>(i)]);
        ad::Var v = ad::matmul(x, vars.wv[static_cast<size_t>(i)]);
        ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose2d(k)), inv_sqrt_dk));
        heads.push_back(ad::matmul(attn, v));
    }
    ad::Var out = ad::matmul(ad::concat(heads, 1), vars.wo);
    if (cfg.residual) out = ad::add(out, x);
    return ad::reshape(ad::transpose2d(out), z_shape);
}

Field decode(ad::Var z_prime, const std::vector<ad::Var>& skips, const CorrectorVars& vars,
             const CorrectorConfig& cfg, const GridSpec& grid) {
    if (static_cast<int>(skips.size()) != cfg.n_down) {
        throw ShapeError("decode: expected " + std::to_string(cfg.n_down) + " skips, got " +
                         std::to_string(skips.size()));
    }
    ad::Var x = z_prime;
    for (int j = 0; j < cfg.n_down; ++j) {
        const int k = cfg.n_down - 1 - j;
        ad::Var up = ad::conv2d_transpose(x, vars.dec_up[static_cast<size_t>(j)].w,
                                          vars.dec_up[static_cast<size_t>(j)].b, 2, 1, 1);
        const ad::Var skip = skips[static_cast<size_t>(k)];
        if (!(up.val().dim(1) == skip.val().dim(1) && up.val().dim(2) == skip.val().dim(2))) {
            throw ShapeError("decode: stage " + std::to_string(j) + " upsample " + shape_str(up.val().shape()) +
                             " does not match skip " + shape_str(skip.val().shape()));
        }
        x = ad::relu(ad::conv2d(ad::concat({up, skip}, 0), vars.dec_conv[static_cast<size_t>(j)].w,
                                vars.dec_conv[static_cast<size_t>(j)].b, 1, 1));
    }
    ad::Var out = ad::conv2d(x, vars.dec_out.w, vars.dec_out.b, 1, 0);
    return apply_mask(Field{out, &grid});
}

Field corrector_forward(const Field& y_norm, const Field& f_norm, const CorrectorVars& vars,
                        const CorrectorConfig& cfg) {
    EncodeResult enc = encode(y_norm.value, f_norm.value, vars, cfg);
    ad::Var z_prime = ste(enc.z, vars, cfg);
    return decode(z_prime, enc.skips, vars, cfg, *y_norm.grid);
}

} // namespace ocn
