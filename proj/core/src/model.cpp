#include "hybridseg/model.hpp"

#include <algorithm>
#include <cstdio>

#include "hybridseg/errors.hpp"
#include "json.hpp"

namespace hseg {

namespace {

std::string fmt_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", static_cast<double>(v));
    return buf;
}

template <std::size_t N>
std::string join(const std::array<int, N>& a) {
    std::string s;
    for (std::size_t i = 0; i < N; ++i) {
        if (i) s += ',';
        s += std::to_string(a[i]);
    }
    return s;
}

}  // namespace

// --- configuration -----------------------------------------------------------

std::string variant_name(ModelVariant v) {
    switch (v) {
        case ModelVariant::Baseline: return "baseline";
        case ModelVariant::BottleneckOnly: return "bottleneck_only";
        case ModelVariant::Hybrid: return "hybrid";
    }
    throw ConfigError("unknown model variant");
}

ModelVariant variant_from_name(const std::string& name) {
    if (name == "baseline") return ModelVariant::Baseline;
    if (name == "bottleneck_only") return ModelVariant::BottleneckOnly;
    if (name == "hybrid") return ModelVariant::Hybrid;
    throw ConfigError("unknown model variant '" + name +
                      "' (expected baseline, bottleneck_only, or hybrid)");
}

ModelConfig ModelConfig::full(ModelVariant v) {
    ModelConfig c;
    c.apply_variant(v);
    return c;
}

ModelConfig ModelConfig::desk(ModelVariant v) {
    ModelConfig c;
    c.input_size = 64;
    c.tap_channels = {8, 32, 64, 128};
    c.d_model = 128;
    c.ffn_dim = 128;
    c.decoder_channels = {64, 32, 16, 8};
    c.apply_variant(v);
    return c;
}

void ModelConfig::apply_variant(ModelVariant v) {
    const bool hybrid = v == ModelVariant::Hybrid;
    use_se = hybrid;
    use_cbam = hybrid;
    use_gates = hybrid;
    use_resnext = hybrid;
    use_bottleneck = hybrid || v == ModelVariant::BottleneckOnly;
}

void ModelConfig::validate() const {
    if (input_size < 32) throw ConfigError("model config: input_size must be >= 32");
    if (input_size % 16 != 0) throw ConfigError("model config: input_size must be divisible by 16");
    for (int c : tap_channels) {
        if (c < 1) throw ConfigError("model config: tap channels must be positive");
    }
    for (std::size_t i = 1; i < tap_channels.size(); ++i) {
        if (tap_channels[i] % 4 != 0) {
            throw ConfigError("model config: stage output channels must be divisible by 4 "
                              "(4x bottleneck expansion)");
        }
    }
    for (int b : stage_blocks) {
        if (b < 1) throw ConfigError("model config: stage depths must be positive");
    }
    if (d_model != tap_channels[3]) {
        throw ConfigError("model config: d_model (" + std::to_string(d_model) +
                          ") must equal the deepest tap width (" + std::to_string(tap_channels[3]) +
                          ")");
    }
    if (heads < 1) throw ConfigError("model config: head count must be positive");
    if (d_model % heads != 0) {
        throw ConfigError("model config: d_model must be divisible by the head count");
    }
    if (ffn_dim < 1) throw ConfigError("model config: ffn_dim must be positive");
    if (bottleneck_blocks < 1) throw ConfigError("model config: bottleneck_blocks must be positive");
    if (!(dropout >= 0.0f && dropout < 1.0f)) {
        throw ConfigError("model config: dropout must lie in [0, 1)");
    }
    for (int c : decoder_channels) {
        if (c < 2 || c % 2 != 0) {
            throw ConfigError("model config: decoder channels must be even and >= 2 "
                              "(aggregation blocks halve them internally)");
        }
    }
}

std::string ModelConfig::canonical_string() const {
    std::string s;
    s += "input=" + std::to_string(input_size);
    s += ";taps=" + join(tap_channels);
    s += ";stages=" + join(stage_blocks);
    s += ";dmodel=" + std::to_string(d_model);
    s += ";blocks=" + std::to_string(bottleneck_blocks);
    s += ";heads=" + std::to_string(heads);
    s += ";ffn=" + std::to_string(ffn_dim);
    s += ";dropout=" + fmt_float(dropout);
    s += ";dec=" + join(decoder_channels);
    s += ";se=" + std::to_string(use_se ? 1 : 0);
    s += ";cbam=" + std::to_string(use_cbam ? 1 : 0);
    s += ";gates=" + std::to_string(use_gates ? 1 : 0);
    s += ";resnext=" + std::to_string(use_resnext ? 1 : 0);
    s += ";bottleneck=" + std::to_string(use_bottleneck ? 1 : 0);
    s += ";pos=" + std::to_string(positional_embedding ? 1 : 0);
    return s;
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["input_size"] = input_size;
    j["tap_channels"] = tap_channels;
    j["stage_blocks"] = stage_blocks;
    j["d_model"] = d_model;
    j["bottleneck_blocks"] = bottleneck_blocks;
    j["heads"] = heads;
    j["ffn_dim"] = ffn_dim;
    j["dropout"] = dropout;
    j["decoder_channels"] = decoder_channels;
    j["use_se"] = use_se;
    j["use_cbam"] = use_cbam;
    j["use_gates"] = use_gates;
    j["use_resnext"] = use_resnext;
    j["use_bottleneck"] = use_bottleneck;
    j["positional_embedding"] = positional_embedding;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    ModelConfig c;
    try {
        const auto j = nlohmann::json::parse(text);
        j.at("input_size").get_to(c.input_size);
        j.at("tap_channels").get_to(c.tap_channels);
        j.at("stage_blocks").get_to(c.stage_blocks);
        j.at("d_model").get_to(c.d_model);
        j.at("bottleneck_blocks").get_to(c.bottleneck_blocks);
        j.at("heads").get_to(c.heads);
        j.at("ffn_dim").get_to(c.ffn_dim);
        j.at("dropout").get_to(c.dropout);
        j.at("decoder_channels").get_to(c.decoder_channels);
        j.at("use_se").get_to(c.use_se);
        j.at("use_cbam").get_to(c.use_cbam);
        j.at("use_gates").get_to(c.use_gates);
        j.at("use_resnext").get_to(c.use_resnext);
        j.at("use_bottleneck").get_to(c.use_bottleneck);
        j.at("positional_embedding").get_to(c.positional_embedding);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model config json: ") + e.what());
    }
    c.validate();
    return c;
}

// --- parameter store ----------------------------------------------------------

Tensor ParameterStore::add(const std::string& name, Tensor t, bool trainable) {
    if (name.empty()) throw UsageError("parameter name must be non-empty");
    if (!t.defined()) throw UsageError("parameter '" + name + "' is undefined");
    t.set_requires_grad(trainable);
    auto [it, inserted] = entries_.emplace(name, Entry{t, trainable});
    (void)it;
    if (!inserted) throw UsageError("parameter '" + name + "' registered twice");
    return t;
}

bool ParameterStore::contains(const std::string& name) const { return entries_.count(name) != 0; }

Tensor ParameterStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw UsageError("no parameter named '" + name + "'");
    return it->second.tensor;
}

std::vector<std::pair<std::string, Tensor>> ParameterStore::trainable() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, e] : entries_) {
        if (e.trainable) out.emplace_back(name, e.tensor);
    }
    return out;
}

std::int64_t ParameterStore::parameter_count(bool trainable_only) const {
    std::int64_t n = 0;
    for (const auto& [name, e] : entries_) {
        if (!trainable_only || e.trainable) n += e.tensor.numel();
    }
    return n;
}

void ParameterStore::zero_grads() const {
    for (const auto& [name, e] : entries_) {
        if (!e.trainable) continue;
        Tensor t = e.tensor;
        t.zero_grad();
    }
}

// --- model construction ---------------------------------------------------------

namespace {

void reg_conv_bn(ParameterStore& ps, const std::string& prefix, ConvBnParams& p) {
    ps.add(prefix + ".weight", p.w);
    ps.add(prefix + ".scale", p.bn_scale);
    ps.add(prefix + ".shift", p.bn_shift);
    ps.add(prefix + ".running_mean", p.bn_mean, false);
    ps.add(prefix + ".running_var", p.bn_var, false);
}

void reg_se(ParameterStore& ps, const std::string& prefix, SeBlockParams& p) {
    ps.add(prefix + ".w1", p.w1);
    ps.add(prefix + ".w2", p.w2);
}

void reg_cbam(ParameterStore& ps, const std::string& prefix, CbamParams& p) {
    ps.add(prefix + ".mlp_w1", p.mlp_w1);
    ps.add(prefix + ".mlp_w2", p.mlp_w2);
    ps.add(prefix + ".spatial.weight", p.spatial_w);
    ps.add(prefix + ".spatial.bias", p.spatial_b);
}

void reg_gate(ParameterStore& ps, const std::string& prefix, AttnGateParams& p) {
    ps.add(prefix + ".theta.weight", p.theta_w);
    ps.add(prefix + ".theta.bias", p.theta_b);
    ps.add(prefix + ".phi.weight", p.phi_w);
    ps.add(prefix + ".phi.bias", p.phi_b);
    ps.add(prefix + ".psi.weight", p.psi_w);
    ps.add(prefix + ".psi.bias", p.psi_b);
}

void reg_transformer(ParameterStore& ps, const std::string& prefix, TransformerBlockParams& p) {
    for (std::size_t h = 0; h < p.wq.size(); ++h) {
        const std::string head = prefix + ".head" + std::to_string(h + 1);
        ps.add(head + ".wq", p.wq[h]);
        ps.add(head + ".wk", p.wk[h]);
        ps.add(head + ".wv", p.wv[h]);
    }
    ps.add(prefix + ".wo", p.wo);
    ps.add(prefix + ".ffn.w1", p.ffn_w1);
    ps.add(prefix + ".ffn.w2", p.ffn_w2);
    ps.add(prefix + ".ln1.gamma", p.ln1_gamma);
    ps.add(prefix + ".ln1.beta", p.ln1_beta);
    ps.add(prefix + ".ln2.gamma", p.ln2_gamma);
    ps.add(prefix + ".ln2.beta", p.ln2_beta);
}

void reg_resnext(ParameterStore& ps, const std::string& prefix, ResNeXtBlockParams& p) {
    ps.add(prefix + ".reduce.weight", p.reduce_w);
    ps.add(prefix + ".reduce.bias", p.reduce_b);
    ps.add(prefix + ".dw.weight", p.dw_w);
    ps.add(prefix + ".dw.bias", p.dw_b);
    ps.add(prefix + ".expand.weight", p.expand_w);
    ps.add(prefix + ".expand.bias", p.expand_b);
    if (p.shortcut_w.defined()) {
        ps.add(prefix + ".shortcut.weight", p.shortcut_w);
        ps.add(prefix + ".shortcut.bias", p.shortcut_b);
    }
}

ResidualBlockParams make_residual_block(int in_c, int width, int out_c, int stride, Rng& rng) {
    ResidualBlockParams b;
    b.c1 = make_conv_bn_params(in_c, width, 1, 1, 0, rng);
    b.c2 = make_conv_bn_params(width, width, 3, stride, stride == 1 ? 1 : 0, rng);
    if (stride == 2) {
        b.c2.pad_bottom = 1;
        b.c2.pad_right = 1;
    }
    b.c3 = make_conv_bn_params(width, out_c, 1, 1, 0, rng);
    if (in_c != out_c || stride != 1) {
        b.down = make_conv_bn_params(in_c, out_c, 1, stride, 0, rng);
        if (stride == 2) b.down->crop = 1;
    }
    return b;
}

void reg_residual(ParameterStore& ps, const std::string& prefix, ResidualBlockParams& b) {
    reg_conv_bn(ps, prefix + ".conv1", b.c1);
    reg_conv_bn(ps, prefix + ".conv2", b.c2);
    reg_conv_bn(ps, prefix + ".conv3", b.c3);
    if (b.down) reg_conv_bn(ps, prefix + ".down", *b.down);
}

Tensor residual_forward(const Tensor& x, const ResidualBlockParams& b, Mode mode) {
    Tensor h = relu(conv_bn(x, b.c1, mode));
    h = relu(conv_bn(h, b.c2, mode));
    h = conv_bn(h, b.c3, mode);
    Tensor s = b.down ? conv_bn(x, *b.down, mode) : x;
    return relu(add(s, h));
}

}  // namespace

Model build_model(const ModelConfig& config, Rng& rng) {
    config.validate();
    Model m;
    m.config = config;
    auto& ps = m.params;

    // Encoder stem: 7x7 stride-2 conv, exact half-size output.
    m.stem = make_conv_bn_params(3, config.tap_channels[0], 7, 2, 0, rng);
    m.stem.pad_top = 2;
    m.stem.pad_bottom = 3;
    m.stem.pad_left = 2;
    m.stem.pad_right = 3;
    reg_conv_bn(ps, "encoder.stem", m.stem);

    // Residual stages (depths 3/4/6); the first keeps resolution, the rest halve it.
    m.stages.resize(3);
    int in_c = config.tap_channels[0];
    for (int s = 0; s < 3; ++s) {
        const int out_c = config.tap_channels[s + 1];
        const int width = out_c / 4;
        const int blocks = config.stage_blocks[static_cast<std::size_t>(s)];
        for (int bi = 0; bi < blocks; ++bi) {
            const int stride = (bi == 0 && s > 0) ? 2 : 1;
            auto block = make_residual_block(bi == 0 ? in_c : out_c, width, out_c, stride, rng);
            reg_residual(ps, "encoder.stage" + std::to_string(s + 2) + ".block" + std::to_string(bi + 1),
                         block);
            m.stages[static_cast<std::size_t>(s)].push_back(std::move(block));
        }
        in_c = out_c;
    }

    // Channel/spatial attention on each tap.
    for (int t = 0; t < 4; ++t) {
        const std::string prefix = "encoder.tap" + std::to_string(t + 1);
        const int c = config.tap_channels[static_cast<std::size_t>(t)];
        if (config.use_se) {
            m.tap_se.push_back(make_se_params(c, 16, rng));
            reg_se(ps, prefix + ".se", m.tap_se.back());
        }
        if (config.use_cbam) {
            m.tap_cbam.push_back(make_cbam_params(c, 16, 7, rng));
            reg_cbam(ps, prefix + ".cbam", m.tap_cbam.back());
        }
    }

    // Transformer bottleneck over the deepest tap's token sequence.
    if (config.use_bottleneck) {
        if (config.positional_embedding) {
            m.pos_embedding = ps.add("bottleneck.pos_embedding",
                                     Tensor::zeros({config.token_count(), config.d_model}));
        }
        for (int b = 0; b < config.bottleneck_blocks; ++b) {
            auto block = make_transformer_block_params(config.d_model, config.heads, config.ffn_dim,
                                                       config.dropout, rng);
            reg_transformer(ps, "bottleneck.block" + std::to_string(b + 1), block);
            m.bottleneck.push_back(std::move(block));
        }
    }

    // Decoder: three skip-fusing stages and one plain upsampling stage.
    int dec_in = config.tap_channels[3];
    for (int s = 0; s < 4; ++s) {
        const std::string prefix = "decoder.stage" + std::to_string(s + 1);
        const int dec_out = config.decoder_channels[static_cast<std::size_t>(s)];
        DecoderStageParams st;
        st.has_skip = s < 3;
        st.up_w = ps.add(prefix + ".up.weight",
                         he_uniform({dec_in, dec_out, 2, 2}, static_cast<std::int64_t>(dec_in) * 4, rng));
        int fuse_in = dec_out;
        if (st.has_skip) {
            const int skip_c = config.tap_channels[static_cast<std::size_t>(2 - s)];
            if (config.use_cbam) {
                st.skip_cbam = make_cbam_params(skip_c, 16, 7, rng);
                reg_cbam(ps, prefix + ".cbam", *st.skip_cbam);
            }
            if (config.use_gates) {
                const int inter_c = std::max(skip_c / 2, 16);
                st.gate = make_attn_gate_params(skip_c, dec_out, inter_c, rng);
                reg_gate(ps, prefix + ".gate", *st.gate);
            }
            fuse_in += skip_c;
        }
        st.fuse = make_conv_bn_params(fuse_in, dec_out, 3, 1, 1, rng);
        reg_conv_bn(ps, prefix + ".fuse", st.fuse);
        if (config.use_se) {
            st.se = make_se_params(dec_out, 16, rng);
            reg_se(ps, prefix + ".se", *st.se);
        }
        if (config.use_resnext) {
            st.resnext = make_resnext_params(dec_out, dec_out, rng);
            reg_resnext(ps, prefix + ".resnext", *st.resnext);
        }
        m.decoder.push_back(std::move(st));
        dec_in = dec_out;
    }

    m.head_w = ps.add("head.weight", he_uniform({1, dec_in, 1, 1}, dec_in, rng));
    m.head_b = ps.add("head.bias", Tensor::zeros({1}));
    return m;
}

// --- forward passes --------------------------------------------------------------

namespace {

Tensor check_model_input(const Model& m, const Tensor& x) {
    Tensor xb = x;
    if (x.rank() == 3) {
        xb = reshape(x, {1, x.shape()[0], x.shape()[1], x.shape()[2]});
    }
    if (xb.rank() != 4 || xb.shape()[1] != 3) {
        throw DimensionError("model input must be [3,H,W] or [N,3,H,W], got " + shape_str(x.shape()));
    }
    const int s = m.config.input_size;
    if (xb.shape()[2] != s || xb.shape()[3] != s) {
        throw DimensionError("model expects " + std::to_string(s) + "x" + std::to_string(s) +
                             " inputs, got " + shape_str(x.shape()));
    }
    return xb;
}

Tensor apply_tap_attention(const Model& m, const Tensor& t, int tap) {
    Tensor out = t;
    if (m.config.use_se) out = se_forward(out, m.tap_se[static_cast<std::size_t>(tap)]);
    if (m.config.use_cbam) out = cbam_forward(out, m.tap_cbam[static_cast<std::size_t>(tap)]);
    return out;
}

}  // namespace

std::array<Tensor, 4> encoder_forward(const Model& m, const Tensor& x, Mode mode) {
    Tensor xb = check_model_input(m, x);
    std::array<Tensor, 4> taps;

    Tensor t = conv_norm_act(xb, m.stem, mode);
    t = apply_tap_attention(m, t, 0);
    taps[0] = t;

    t = pool2d(PoolKind::Max, pad2d(t, 0, 1, 0, 1), 3, 2);
    for (int s = 0; s < 3; ++s) {
        for (const auto& block : m.stages[static_cast<std::size_t>(s)]) {
            t = residual_forward(t, block, mode);
        }
        t = apply_tap_attention(m, t, s + 1);
        taps[static_cast<std::size_t>(s + 1)] = t;
    }
    return taps;
}

Tensor bottleneck_forward(const Model& m, const Tensor& tap4, Rng& rng, Mode mode) {
    if (tap4.rank() != 4) {
        throw DimensionError("bottleneck expects [N,C,h,w], got " + shape_str(tap4.shape()));
    }
    const std::int64_t n = tap4.shape()[0];
    const std::int64_t c = tap4.shape()[1];
    const std::int64_t h = tap4.shape()[2];
    const std::int64_t w = tap4.shape()[3];
    if (c != m.config.d_model) {
        throw DimensionError("bottleneck expects " + std::to_string(m.config.d_model) +
                             " channels, got " + std::to_string(c));
    }
    if (m.pos_embedding.defined() && h * w != m.pos_embedding.shape()[0]) {
        throw DimensionError("bottleneck expects " + std::to_string(m.pos_embedding.shape()[0]) +
                             " tokens, got " + std::to_string(h * w));
    }

    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        Tensor xi = n == 1 ? tap4 : narrow(tap4, 0, i, 1);
        Tensor tokens = transpose2d(reshape(xi, {c, h * w}));  // [h*w, d_model]
        if (m.pos_embedding.defined()) tokens = add(tokens, m.pos_embedding);
        for (const auto& block : m.bottleneck) {
            tokens = transformer_block(tokens, block, rng, mode);
        }
        outs.push_back(reshape(transpose2d(tokens), {1, c, h, w}));
    }
    return outs.size() == 1 ? outs[0] : concat(outs, 0);
}

Tensor decoder_forward(const Model& m, const Tensor& bottom, const std::array<Tensor, 4>& taps,
                       Mode mode) {
    Tensor x = bottom;
    for (int s = 0; s < 4; ++s) {
        const auto& st = m.decoder[static_cast<std::size_t>(s)];
        const int up_in = static_cast<int>(st.up_w.shape()[0]);
        const int up_out = static_cast<int>(st.up_w.shape()[1]);
        ConvSpec up{up_in, up_out, 2, 2, 2, 0, 1};
        x = transpose_conv2d(x, st.up_w, up);
        if (st.has_skip) {
            Tensor skip = taps[static_cast<std::size_t>(2 - s)];
            if (st.skip_cbam) skip = cbam_forward(skip, *st.skip_cbam);
            if (st.gate) skip = attention_gate(skip, x, *st.gate);
            x = concat({x, skip}, 1);
        }
        x = conv_norm_act(x, st.fuse, mode);
        if (st.se) x = se_forward(x, *st.se);
        if (st.resnext) x = resnext_block(x, *st.resnext);
    }
    const int head_in = static_cast<int>(m.head_w.shape()[1]);
    return sigmoid(conv2d(x, m.head_w, m.head_b, ConvSpec{head_in, 1, 1, 1, 1, 0, 1}));
}

Tensor model_forward(const Model& m, const Tensor& x, Rng& rng, Mode mode) {
    const bool single = x.rank() == 3;
    Tensor xb = check_model_input(m, x);
    auto taps = encoder_forward(m, xb, mode);
    Tensor bottom = m.config.use_bottleneck ? bottleneck_forward(m, taps[3], rng, mode) : taps[3];
    Tensor y = decoder_forward(m, bottom, taps, mode);
    if (single) return reshape(y, {1, y.shape()[2], y.shape()[3]});
    return y;
}

// --- weight import / export -------------------------------------------------------

ImportReport import_weights(ParameterStore& params, const NtaArchive& archive, ImportPolicy policy) {
    const std::string prefix = "model/";
    ImportReport report;

    for (const auto& [name, entry] : params.entries()) {
        const std::string key = prefix + name;
        if (!archive.contains(key)) {
            if (policy == ImportPolicy::Strict) {
                throw LoadError("archive is missing tensor '" + name + "'");
            }
            continue;
        }
        const NtaEntry& e = archive.get(key);
        if (e.dtype != NtaDtype::F32) {
            throw LoadError("tensor '" + name + "' has a non-f32 payload");
        }
        if (e.dims != entry.tensor.shape()) {
            if (policy == ImportPolicy::Strict) {
                throw LoadError("tensor '" + name + "' shape mismatch: archive " + shape_str(e.dims) +
                                " vs model " + shape_str(entry.tensor.shape()));
            }
            report.mismatched.push_back(name);
            continue;
        }
        const auto values = e.as_f32();
        Tensor t = entry.tensor;
        auto dst = t.mutable_data();
        std::copy(values.begin(), values.end(), dst.begin());
        report.loaded.push_back(name);
    }

    for (const auto& [key, e] : archive.entries()) {
        if (key.rfind(prefix, 0) != 0) continue;
        const std::string name = key.substr(prefix.size());
        if (!params.contains(name)) {
            if (policy == ImportPolicy::Strict) {
                throw LoadError("archive tensor '" + name + "' has no matching model tensor");
            }
            report.skipped.push_back(name);
        }
    }
    return report;
}

NtaArchive export_weights(const Model& m) {
    NtaArchive a;
    for (const auto& [name, e] : m.params.entries()) {
        a.add("model/" + name, NtaEntry::from_tensor(e.tensor));
    }
    a.add("meta/config", NtaEntry::from_bytes(m.config.to_json()));
    return a;
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace hseg
