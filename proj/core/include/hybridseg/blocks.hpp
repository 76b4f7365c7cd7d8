#pragma once

#include <vector>

#include "hybridseg/rng.hpp"
#include "hybridseg/tensor.hpp"

namespace hseg {

// Reusable architectural blocks. All spatial blocks take batched [N,C,H,W]
// inputs; token blocks take [n, d_model]. Parameter structs hold shared
// tensor handles, so a ParameterStore can register the same tensors the
// forward functions read.

/// He-uniform initialized leaf: uniform in ±sqrt(6/fan_in), requires_grad.
Tensor he_uniform(Shape shape, std::int64_t fan_in, Rng& rng);

// --- squeeze-and-excitation ---------------------------------------------------

struct SeBlockParams {
    Tensor w1;  // [C/r, C]
    Tensor w2;  // [C, C/r]
    int reduction = 16;
};

SeBlockParams make_se_params(int channels, int reduction, Rng& rng);
/// x ⊙ sigmoid(W2·relu(W1·GAP(x))) per channel.
Tensor se_forward(const Tensor& x, const SeBlockParams& p);

// --- convolutional block attention ---------------------------------------------

struct CbamParams {
    Tensor mlp_w1;     // [C/r, C], shared over avg/max descriptors
    Tensor mlp_w2;     // [C, C/r]
    Tensor spatial_w;  // [1, 2, k, k]
    Tensor spatial_b;  // [1]
    int reduction = 16;
    int spatial_kernel = 7;
};

CbamParams make_cbam_params(int channels, int reduction, int spatial_kernel, Rng& rng);
/// Channel attention (shared MLP over avg+max descriptors), then spatial
/// attention (k x k conv over channelwise avg+max maps).
Tensor cbam_forward(const Tensor& x, const CbamParams& p);

// --- additive attention gate ----------------------------------------------------

struct AttnGateParams {
    Tensor theta_w, theta_b;  // 1x1: skip C -> C_int
    Tensor phi_w, phi_b;      // 1x1: gate C_g -> C_int
    Tensor psi_w, psi_b;      // 1x1: C_int -> 1
};

AttnGateParams make_attn_gate_params(int skip_channels, int gate_channels, int inter_channels,
                                     Rng& rng);
/// skip ⊙ sigmoid(psi(relu(theta(skip) + phi(gate)))), coefficient map
/// broadcast over skip channels. Skip and gate must share spatial size.
Tensor attention_gate(const Tensor& skip, const Tensor& gate, const AttnGateParams& p);

// --- attention / transformer ------------------------------------------------------

/// softmax(Q Kᵀ / sqrt(d_k)) V with Q [n x d_k], K [m x d_k], V [m x d_v].
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v);

struct TransformerBlockParams {
    std::vector<Tensor> wq, wk, wv;  // per head, each [d_model, d_k]
    Tensor wo;                       // [d_model, d_model]
    Tensor ffn_w1;                   // [d_model, d_ffn]
    Tensor ffn_w2;                   // [d_ffn, d_model]
    Tensor ln1_gamma, ln1_beta;
    Tensor ln2_gamma, ln2_beta;
    float dropout_p = 0.1f;
};

TransformerBlockParams make_transformer_block_params(int d_model, int heads, int d_ffn,
                                                     float dropout_p, Rng& rng);
/// Concatenated per-head attention projected by Wo. Deterministic; the rng
/// and mode arguments keep the block-family signature (dropout lives in
/// transformer_block).
Tensor mhsa(const Tensor& x, const TransformerBlockParams& p, Rng& rng, Mode mode);
/// Post-norm: h = LN1(x + Drop(MHSA(x))); out = LN2(h + Drop(FFN(h))).
Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p, Rng& rng, Mode mode);

// --- resnext block -------------------------------------------------------------------

struct ResNeXtBlockParams {
    Tensor reduce_w, reduce_b;      // 1x1: C -> C/2
    Tensor dw_w, dw_b;              // depthwise 3x3, groups = C/2
    Tensor expand_w, expand_b;      // 1x1: C/2 -> C_out
    Tensor shortcut_w, shortcut_b;  // 1x1 when C != C_out, else undefined
};

ResNeXtBlockParams make_resnext_params(int in_channels, int out_channels, Rng& rng);
/// relu(shortcut(x) + expand(dw3x3(relu(reduce(x))))), spatial-preserving.
Tensor resnext_block(const Tensor& x, const ResNeXtBlockParams& p);

// --- conv + batch norm (+ relu) --------------------------------------------------------

struct ConvBnParams {
    Tensor w;  // conv weight; no bias (batch norm follows)
    Tensor bn_scale, bn_shift, bn_mean, bn_var;
    ConvSpec spec;
    // Asymmetric zero padding applied before the conv (top/left get pad,
    // bottom/right get pad + extra) and an optional bottom/right crop;
    // together these express the exact-output downsampling used by the model.
    int pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;
    int crop = 0;
};

ConvBnParams make_conv_bn_params(int in_c, int out_c, int kernel, int stride, int padding,
                                 Rng& rng);
Tensor conv_bn(const Tensor& x, const ConvBnParams& p, Mode mode);
/// conv2d -> batch_norm -> relu.
Tensor conv_norm_act(const Tensor& x, const ConvBnParams& p, Mode mode);

}  // namespace hseg
