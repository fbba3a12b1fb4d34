#pragma once

#include <string>
#include <vector>

#include "ocn/grid.hpp"
#include "ocn/rng.hpp"
#include "ocn/tape.hpp"

namespace ocn {

/// Named reference to a learnable tensor; the enumeration order is the
/// optimizer-state and checkpoint order, so it must stay stable.
struct ParamRef {
    std::string name;
    Tensor* tensor;
};

struct CorrectorConfig {
    int base_channels = 32;
    int n_down = 2;
    int n_heads = 4;
    int d_model = 64;
    bool residual = false; // optional residual connection inside the attention module

    int d_k() const { return d_model / n_heads; }
    int stage_width(int k) const { return base_channels << k; }
    void validate(int height, int width) const;
};

/// Weights of the encoder / attention bottleneck / decoder.
struct CorrectorWeights {
    struct ConvLayer {
        Tensor w, b;
    };
    std::vector<ConvLayer> enc_conv; // 3x3 stride 1, per stage
    std::vector<ConvLayer> enc_down; // 3x3 stride 2, per stage
    std::vector<Tensor> wq, wk, wv;  // per head, [d_model, d_k]
    Tensor wo;                       // [d_model, d_model]
    std::vector<ConvLayer> dec_up;   // 3x3 stride 2 transposed, per stage
    std::vector<ConvLayer> dec_conv; // 3x3 stride 1 after skip concat
    ConvLayer dec_out;               // 1x1 projection to the output channels

    /// Uniform +-sqrt(1/fan_in) kernels and projections, zero biases.
    static CorrectorWeights init(const CorrectorConfig& cfg, int c_in, int c_out, Rng& rng);
    static CorrectorWeights zeros(const CorrectorConfig& cfg, int c_in, int c_out);

    void collect(std::vector<ParamRef>& out);
    int64_t parameter_count() const;
};

/// Tape handles mirroring CorrectorWeights for one forward/backward pass.
struct CorrectorVars {
    struct ConvLayer {
        ad::Var w, b;
    };
    std::vector<ConvLayer> enc_conv, enc_down;
    std::vector<ad::Var> wq, wk, wv;
    ad::Var wo;
    std::vector<ConvLayer> dec_up, dec_conv;
    ConvLayer dec_out;
};

CorrectorVars lift_corrector(ad::Tape& tape, const CorrectorWeights& w, bool trainable);

struct EncodeResult {
    ad::Var z;                  // [d_model, H/2^n, W/2^n]
    std::vector<ad::Var> skips; // pre-downsample activations, one per stage
};

/// Channel-concatenates (y, F), then n_down stages of conv3x3 + ReLU (the
/// skip) followed by a stride-2 conv.
EncodeResult encode(ad::Var y_norm, ad::Var f_norm, const CorrectorVars& vars, const CorrectorConfig& cfg);

/// Multi-head scaled dot-product self-attention over the flattened token
/// sequence. No positional encoding and no normalization; with the residual
/// flag off this is exactly projections + attention + output projection,
/// hence permutation-equivariant over tokens.
ad::Var ste(ad::Var z, const CorrectorVars& vars, const CorrectorConfig& cfg);

/// Transposed-conv upsampling with skip concatenation, then a 1x1 projection
/// to C_o channels; output is masked to ocean.
Field decode(ad::Var z_prime, const std::vector<ad::Var>& skips, const CorrectorVars& vars,
             const CorrectorConfig& cfg, const GridSpec& grid);

Field corrector_forward(const Field& y_norm, const Field& f_norm, const CorrectorVars& vars,
                        const CorrectorConfig& cfg);

} // namespace ocn
