#include "hybridseg/blocks.hpp"

#include <cmath>
#include <string>

#include "hybridseg/errors.hpp"

namespace hseg {

namespace {

Tensor param_zeros(Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
}

Tensor param_ones(Shape shape) {
    Tensor t = Tensor::full(std::move(shape), 1.0f);
    t.set_requires_grad(true);
    return t;
}

// Channel-attention reduction: clamp to the channel count so narrow layers
// keep a non-empty hidden width, then require divisibility.
int effective_reduction(int channels, int reduction, const char* where) {
    if (channels < 1 || reduction < 1) {
        throw ConfigError(std::string(where) + ": channels and reduction must be positive");
    }
    int r = reduction < channels ? reduction : channels;
    if (channels % r != 0) {
        throw ConfigError(std::string(where) + ": channels (" + std::to_string(channels) +
                          ") not divisible by reduction (" + std::to_string(r) + ")");
    }
    return r;
}

ConvSpec one_by_one(int in_c, int out_c) {
    return ConvSpec{in_c, out_c, 1, 1, 1, 0, 1};
}

}  // namespace

Tensor he_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
    if (fan_in < 1) throw ConfigError("he_uniform: fan_in must be positive");
    const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
    std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = rng.uniform(-bound, bound);
    Tensor t = Tensor::from_data(std::move(shape), std::move(data));
    t.set_requires_grad(true);
    return t;
}

// --- squeeze-and-excitation ---------------------------------------------------

SeBlockParams make_se_params(int channels, int reduction, Rng& rng) {
    const int r = effective_reduction(channels, reduction, "se");
    const int mid = channels / r;
    SeBlockParams p;
    p.reduction = r;
    p.w1 = he_uniform({mid, channels}, channels, rng);
    p.w2 = he_uniform({channels, mid}, mid, rng);
    return p;
}

Tensor se_forward(const Tensor& x, const SeBlockParams& p) {
    if (x.rank() != 4) throw DimensionError("se_forward: expected [N,C,H,W], got " + shape_str(x.shape()));
    const std::int64_t n = x.shape()[0];
    const std::int64_t c = x.shape()[1];
    if (c != p.w2.shape()[0]) {
        throw DimensionError("se_forward: input has " + std::to_string(c) + " channels, block expects " +
                             std::to_string(p.w2.shape()[0]));
    }
    Tensor z = reduce_mean_spatial(x);                 // [N, C]
    Tensor h = relu(matmul(z, p.w1, false, true));     // [N, C/r]
    Tensor s = sigmoid(matmul(h, p.w2, false, true));  // [N, C]
    return mul(x, reshape(s, {n, c, 1, 1}));
}

// --- convolutional block attention ---------------------------------------------

CbamParams make_cbam_params(int channels, int reduction, int spatial_kernel, Rng& rng) {
    if (spatial_kernel < 1 || spatial_kernel % 2 == 0) {
        throw ConfigError("cbam: spatial kernel must be odd and positive");
    }
    const int r = effective_reduction(channels, reduction, "cbam");
    const int mid = channels / r;
    CbamParams p;
    p.reduction = r;
    p.spatial_kernel = spatial_kernel;
    p.mlp_w1 = he_uniform({mid, channels}, channels, rng);
    p.mlp_w2 = he_uniform({channels, mid}, mid, rng);
    p.spatial_w = he_uniform({1, 2, spatial_kernel, spatial_kernel},
                             2ll * spatial_kernel * spatial_kernel, rng);
    p.spatial_b = param_zeros({1});
    return p;
}

Tensor cbam_forward(const Tensor& x, const CbamParams& p) {
    if (x.rank() != 4) throw DimensionError("cbam_forward: expected [N,C,H,W], got " + shape_str(x.shape()));
    const std::int64_t n = x.shape()[0];
    const std::int64_t c = x.shape()[1];
    if (c != p.mlp_w2.shape()[0]) {
        throw DimensionError("cbam_forward: input has " + std::to_string(c) + " channels, block expects " +
                             std::to_string(p.mlp_w2.shape()[0]));
    }
    auto mlp = [&](const Tensor& d) {
        return matmul(relu(matmul(d, p.mlp_w1, false, true)), p.mlp_w2, false, true);
    };
    Tensor mc = sigmoid(add(mlp(reduce_mean_spatial(x)), mlp(reduce_max_spatial(x))));  // [N, C]
    Tensor xc = mul(x, reshape(mc, {n, c, 1, 1}));

    Tensor stacked = concat({reduce_mean_channels(xc), reduce_max_channels(xc)}, 1);  // [N, 2, H, W]
    const int k = p.spatial_kernel;
    ConvSpec spec{2, 1, k, k, 1, (k - 1) / 2, 1};
    Tensor ms = sigmoid(conv2d(stacked, p.spatial_w, p.spatial_b, spec));  // [N, 1, H, W]
    return mul(xc, ms);
}

// --- additive attention gate ----------------------------------------------------

AttnGateParams make_attn_gate_params(int skip_channels, int gate_channels, int inter_channels,
                                     Rng& rng) {
    if (skip_channels < 1 || gate_channels < 1 || inter_channels < 1) {
        throw ConfigError("attention_gate: channel counts must be positive");
    }
    AttnGateParams p;
    p.theta_w = he_uniform({inter_channels, skip_channels, 1, 1}, skip_channels, rng);
    p.theta_b = param_zeros({inter_channels});
    p.phi_w = he_uniform({inter_channels, gate_channels, 1, 1}, gate_channels, rng);
    p.phi_b = param_zeros({inter_channels});
    p.psi_w = he_uniform({1, inter_channels, 1, 1}, inter_channels, rng);
    p.psi_b = param_zeros({1});
    return p;
}

Tensor attention_gate(const Tensor& skip, const Tensor& gate, const AttnGateParams& p) {
    if (skip.rank() != 4 || gate.rank() != 4) {
        throw DimensionError("attention_gate: expected [N,C,H,W] inputs");
    }
    if (skip.shape()[2] != gate.shape()[2] || skip.shape()[3] != gate.shape()[3]) {
        throw DimensionError("attention_gate: skip " + shape_str(skip.shape()) + " and gate " +
                             shape_str(gate.shape()) + " disagree on spatial size");
    }
    const int skip_c = static_cast<int>(skip.shape()[1]);
    const int gate_c = static_cast<int>(gate.shape()[1]);
    const int inter_c = static_cast<int>(p.theta_w.shape()[0]);
    Tensor tx = conv2d(skip, p.theta_w, p.theta_b, one_by_one(skip_c, inter_c));
    Tensor pg = conv2d(gate, p.phi_w, p.phi_b, one_by_one(gate_c, inter_c));
    Tensor psi = sigmoid(conv2d(relu(add(tx, pg)), p.psi_w, p.psi_b, one_by_one(inter_c, 1)));
    return mul(skip, psi);  // [N,1,H,W] coefficients broadcast over channels
}

// --- attention / transformer ------------------------------------------------------

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
        throw DimensionError("scaled_dot_product_attention: expected rank-2 Q, K, V");
    }
    if (q.shape()[1] != k.shape()[1]) {
        throw DimensionError("scaled_dot_product_attention: Q depth " + std::to_string(q.shape()[1]) +
                             " != K depth " + std::to_string(k.shape()[1]));
    }
    if (k.shape()[0] != v.shape()[0]) {
        throw DimensionError("scaled_dot_product_attention: K rows " + std::to_string(k.shape()[0]) +
                             " != V rows " + std::to_string(v.shape()[0]));
    }
    const double dk = static_cast<double>(q.shape()[1]);
    Tensor logits = scale(matmul(q, k, false, true), static_cast<float>(1.0 / std::sqrt(dk)));
    return matmul(softmax(logits, 1), v);
}

TransformerBlockParams make_transformer_block_params(int d_model, int heads, int d_ffn,
                                                     float dropout_p, Rng& rng) {
    if (heads < 1 || d_model < 1 || d_ffn < 1) {
        throw ConfigError("transformer_block: dimensions must be positive");
    }
    if (d_model % heads != 0) {
        throw ConfigError("transformer_block: d_model (" + std::to_string(d_model) +
                          ") not divisible by head count (" + std::to_string(heads) + ")");
    }
    const int dk = d_model / heads;
    TransformerBlockParams p;
    p.dropout_p = dropout_p;
    p.wq.reserve(heads);
    p.wk.reserve(heads);
    p.wv.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        p.wq.push_back(he_uniform({d_model, dk}, d_model, rng));
        p.wk.push_back(he_uniform({d_model, dk}, d_model, rng));
        p.wv.push_back(he_uniform({d_model, dk}, d_model, rng));
    }
    p.wo = he_uniform({d_model, d_model}, d_model, rng);
    p.ffn_w1 = he_uniform({d_model, d_ffn}, d_model, rng);
    p.ffn_w2 = he_uniform({d_ffn, d_model}, d_ffn, rng);
    p.ln1_gamma = param_ones({d_model});
    p.ln1_beta = param_zeros({d_model});
    p.ln2_gamma = param_ones({d_model});
    p.ln2_beta = param_zeros({d_model});
    return p;
}

Tensor mhsa(const Tensor& x, const TransformerBlockParams& p, Rng&, Mode) {
    if (x.rank() != 2) throw DimensionError("mhsa: expected [n, d_model], got " + shape_str(x.shape()));
    if (x.shape()[1] != p.wo.shape()[0]) {
        throw DimensionError("mhsa: token width " + std::to_string(x.shape()[1]) +
                             " != d_model " + std::to_string(p.wo.shape()[0]));
    }
    std::vector<Tensor> heads;
    heads.reserve(p.wq.size());
    for (std::size_t h = 0; h < p.wq.size(); ++h) {
        Tensor q = matmul(x, p.wq[h]);
        Tensor k = matmul(x, p.wk[h]);
        Tensor v = matmul(x, p.wv[h]);
        heads.push_back(scaled_dot_product_attention(q, k, v));
    }
    Tensor merged = heads.size() == 1 ? heads[0] : concat(heads, 1);
    return matmul(merged, p.wo);
}

Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p, Rng& rng, Mode mode) {
    Tensor a = dropout(mhsa(x, p, rng, mode), p.dropout_p, mode, rng);
    Tensor h = layer_norm(add(x, a), p.ln1_gamma, p.ln1_beta);
    Tensor f = matmul(relu(matmul(h, p.ffn_w1)), p.ffn_w2);
    return layer_norm(add(h, dropout(f, p.dropout_p, mode, rng)), p.ln2_gamma, p.ln2_beta);
}

// --- resnext block -------------------------------------------------------------------

ResNeXtBlockParams make_resnext_params(int in_channels, int out_channels, Rng& rng) {
    if (in_channels < 2 || in_channels % 2 != 0) {
        throw ConfigError("resnext_block: input channels must be even and >= 2, got " +
                          std::to_string(in_channels));
    }
    if (out_channels < 1) throw ConfigError("resnext_block: output channels must be positive");
    const int mid = in_channels / 2;
    ResNeXtBlockParams p;
    p.reduce_w = he_uniform({mid, in_channels, 1, 1}, in_channels, rng);
    p.reduce_b = param_zeros({mid});
    p.dw_w = he_uniform({mid, 1, 3, 3}, 9, rng);
    p.dw_b = param_zeros({mid});
    p.expand_w = he_uniform({out_channels, mid, 1, 1}, mid, rng);
    p.expand_b = param_zeros({out_channels});
    if (in_channels != out_channels) {
        p.shortcut_w = he_uniform({out_channels, in_channels, 1, 1}, in_channels, rng);
        p.shortcut_b = param_zeros({out_channels});
    }
    return p;
}

Tensor resnext_block(const Tensor& x, const ResNeXtBlockParams& p) {
    if (x.rank() != 4) throw DimensionError("resnext_block: expected [N,C,H,W], got " + shape_str(x.shape()));
    const int in_c = static_cast<int>(p.reduce_w.shape()[1]);
    const int mid = static_cast<int>(p.reduce_w.shape()[0]);
    const int out_c = static_cast<int>(p.expand_w.shape()[0]);
    if (x.shape()[1] != in_c) {
        throw DimensionError("resnext_block: input has " + std::to_string(x.shape()[1]) +
                             " channels, block expects " + std::to_string(in_c));
    }
    Tensor r = relu(conv2d(x, p.reduce_w, p.reduce_b, one_by_one(in_c, mid)));
    ConvSpec dw{mid, mid, 3, 3, 1, 1, mid};
    Tensor d = conv2d(r, p.dw_w, p.dw_b, dw);
    Tensor e = conv2d(d, p.expand_w, p.expand_b, one_by_one(mid, out_c));
    Tensor s = p.shortcut_w.defined() ? conv2d(x, p.shortcut_w, p.shortcut_b, one_by_one(in_c, out_c))
                                      : x;
    return relu(add(s, e));
}

// --- conv + batch norm (+ relu) --------------------------------------------------------

ConvBnParams make_conv_bn_params(int in_c, int out_c, int kernel, int stride, int padding,
                                 Rng& rng) {
    ConvBnParams p;
    p.spec = ConvSpec{in_c, out_c, kernel, kernel, stride, padding, 1};
    p.spec.validate();
    p.w = he_uniform({out_c, in_c, kernel, kernel}, static_cast<std::int64_t>(in_c) * kernel * kernel,
                     rng);
    p.bn_scale = param_ones({out_c});
    p.bn_shift = param_zeros({out_c});
    p.bn_mean = Tensor::zeros({out_c});
    p.bn_var = Tensor::full({out_c}, 1.0f);
    return p;
}

Tensor conv_bn(const Tensor& x, const ConvBnParams& p, Mode mode) {
    Tensor h = x;
    if (p.crop > 0) {
        const int axis_h = static_cast<int>(h.rank()) - 2;
        h = narrow(h, axis_h, 0, h.shape()[axis_h] - p.crop);
        h = narrow(h, axis_h + 1, 0, h.shape()[axis_h + 1] - p.crop);
    }
    if (p.pad_top || p.pad_bottom || p.pad_left || p.pad_right) {
        h = pad2d(h, p.pad_top, p.pad_bottom, p.pad_left, p.pad_right);
    }
    h = conv2d(h, p.w, std::nullopt, p.spec);
    return batch_norm(h, p.bn_scale, p.bn_shift, p.bn_mean, p.bn_var, mode);
}

Tensor conv_norm_act(const Tensor& x, const ConvBnParams& p, Mode mode) {
    return relu(conv_bn(x, p, mode));
}

}  // namespace hseg
