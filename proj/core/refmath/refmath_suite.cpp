#include <algorithm>
#include <functional>
#include <memory>

#include "hybridseg/blocks.hpp"
#include "hybridseg/loss.hpp"
#include "hybridseg/model.hpp"
#include "hybridseg/rng.hpp"
#include "refmath.hpp"

namespace hseg::refmath {

namespace {

// One concrete fixture: leaf tensors, the production forward over them, and
// the reference forward over perturbed copies of their values (same order).
struct Case {
    std::vector<Tensor> leaves;
    std::function<Tensor()> prod;
    std::function<RTensor(const std::vector<RTensor>&)> ref;
};

struct Fix {
    Rng rng;
    std::vector<Tensor> leaves;

    explicit Fix(std::uint64_t seed) : rng(seed) {}

    Tensor leaf(Shape s, float lo = -1.0f, float hi = 1.0f) {
        std::vector<float> v(static_cast<std::size_t>(shape_numel(s)));
        for (auto& x : v) x = rng.uniform(lo, hi);
        Tensor t = Tensor::from_data(std::move(s), std::move(v), true);
        leaves.push_back(t);
        return t;
    }

    /// Values bounded away from zero, so relu applied directly to the leaf
    /// cannot sit on its kink.
    Tensor leaf_off_origin(Shape s, float margin = 0.05f) {
        std::vector<float> v(static_cast<std::size_t>(shape_numel(s)));
        for (auto& x : v) {
            const float m = rng.uniform(margin, 1.0f);
            x = rng.next_float() < 0.5f ? -m : m;
        }
        Tensor t = Tensor::from_data(std::move(s), std::move(v), true);
        leaves.push_back(t);
        return t;
    }

    Tensor adopt(Tensor t) {
        leaves.push_back(t);
        return t;
    }
};

using CaseMaker = std::function<Case(int, std::uint64_t)>;

GradCheckReport run_entry(const SuiteOptions& so, const std::string& name, double tol, double h,
                          std::int64_t sample, int variants, const CaseMaker& make,
                          bool plain_sum = false) {
    GradCheckReport merged;
    merged.name = name;
    merged.tol = tol;
    for (int v = 0; v < variants; ++v) {
        Case c = make(v, derive_seed(fnv1a64(name), static_cast<std::uint64_t>(v)));
        GradCheckOptions o;
        o.tol = tol;
        o.h = h;
        o.sample_total = sample;
        o.plain_sum = plain_sum;
        o.seed = derive_seed(fnv1a64(name) ^ 0x9e3779b97f4a7c15ULL, static_cast<std::uint64_t>(v));
        o.flip_sign = so.inject_fault == name;
        GradCheckReport r = check_gradients(name, c.leaves, c.prod, c.ref, o);
        merged.max_rel_err = std::max(merged.max_rel_err, r.max_rel_err);
        merged.checked += r.checked;
        merged.skipped += r.skipped;
    }
    return merged;
}

// --- op fixtures -----------------------------------------------------------------

Case case_binary(int v, std::uint64_t seed, int which) {
    Fix f(seed);
    static const std::vector<std::vector<Shape>> shapes{
        {{2, 3, 4}, {2, 3, 4}},        // same shape
        {{2, 3, 4, 4}, {2, 3, 1, 1}},  // per-channel broadcast
        {{2, 3, 4, 4}, {2, 1, 4, 4}},  // per-plane broadcast
    };
    Tensor a = f.leaf(shapes[static_cast<std::size_t>(v)][0]);
    Tensor b = f.leaf(shapes[static_cast<std::size_t>(v)][1]);
    Case c;
    c.leaves = f.leaves;
    c.prod = [a, b, which] {
        return which == 0 ? hseg::add(a, b) : which == 1 ? hseg::sub(a, b) : hseg::mul(a, b);
    };
    c.ref = [which](const std::vector<RTensor>& x) {
        return which == 0 ? add(x[0], x[1]) : which == 1 ? sub(x[0], x[1]) : mul(x[0], x[1]);
    };
    return c;
}

Case case_unary(int v, std::uint64_t seed, int which) {
    Fix f(seed);
    static const std::vector<Shape> shapes{{3, 5}, {2, 3, 4}, {1, 2, 5, 5}};
    static const std::vector<float> consts{0.37f, -1.25f, 0.70710678f};
    const float c0 = consts[static_cast<std::size_t>(v)];
    Tensor x = which == 1 ? f.leaf_off_origin(shapes[static_cast<std::size_t>(v)])
                          : f.leaf(shapes[static_cast<std::size_t>(v)]);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, which, c0] {
        switch (which) {
            case 0: return hseg::scale(x, c0);
            case 1: return hseg::relu(x);
            default: return hseg::sigmoid(x);
        }
    };
    c.ref = [which, c0](const std::vector<RTensor>& xs) {
        switch (which) {
            case 0: return scale(xs[0], static_cast<double>(c0));
            case 1: return relu(xs[0]);
            default: return sigmoid(xs[0]);
        }
    };
    return c;
}

Case case_reshape(int v, std::uint64_t seed) {
    Fix f(seed);
    static const std::vector<std::pair<Shape, Shape>> shapes{
        {{2, 3, 4}, {4, 6}}, {{8, 2}, {2, 2, 4}}, {{1, 3, 4, 4}, {3, 16}}};
    const auto& [in, out] = shapes[static_cast<std::size_t>(v)];
    Tensor x = f.leaf(in);
    Shape target = out;
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, target] { return hseg::reshape(x, target); };
    c.ref = [target](const std::vector<RTensor>& xs) { return reshape(xs[0], target); };
    return c;
}

Case case_transpose2d(int v, std::uint64_t seed) {
    Fix f(seed);
    static const std::vector<Shape> shapes{{3, 5}, {7, 2}, {4, 4}};
    Tensor x = f.leaf(shapes[static_cast<std::size_t>(v)]);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x] { return hseg::transpose2d(x); };
    c.ref = [](const std::vector<RTensor>& xs) { return transpose2d(xs[0]); };
    return c;
}

Case case_concat(int v, std::uint64_t seed) {
    Fix f(seed);
    Case c;
    if (v == 0) {
        Tensor a = f.leaf({2, 3}), b = f.leaf({4, 3});
        c.prod = [a, b] { return hseg::concat({a, b}, 0); };
        c.ref = [](const std::vector<RTensor>& x) { return concat({x[0], x[1]}, 0); };
    } else if (v == 1) {
        Tensor a = f.leaf({1, 2, 3, 3}), b = f.leaf({1, 4, 3, 3});
        c.prod = [a, b] { return hseg::concat({a, b}, 1); };
        c.ref = [](const std::vector<RTensor>& x) { return concat({x[0], x[1]}, 1); };
    } else {
        Tensor a = f.leaf({2, 3}), b = f.leaf({2, 2}), d = f.leaf({2, 1});
        c.prod = [a, b, d] { return hseg::concat({a, b, d}, 1); };
        c.ref = [](const std::vector<RTensor>& x) { return concat({x[0], x[1], x[2]}, 1); };
    }
    c.leaves = f.leaves;
    return c;
}

Case case_narrow(int v, std::uint64_t seed) {
    Fix f(seed);
    struct Spec {
        Shape shape;
        int axis;
        std::int64_t start, len;
    };
    static const std::vector<Spec> specs{
        {{4, 5}, 0, 1, 2}, {{2, 3, 4, 4}, 2, 0, 3}, {{2, 3, 4, 4}, 0, 1, 1}};
    const Spec& s = specs[static_cast<std::size_t>(v)];
    Tensor x = f.leaf(s.shape);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, s] { return hseg::narrow(x, s.axis, s.start, s.len); };
    c.ref = [s](const std::vector<RTensor>& xs) { return narrow(xs[0], s.axis, s.start, s.len); };
    return c;
}

Case case_pad2d(int v, std::uint64_t seed) {
    Fix f(seed);
    struct Spec {
        Shape shape;
        int t, b, l, r;
    };
    static const std::vector<Spec> specs{
        {{2, 3, 3}, 1, 2, 0, 1}, {{1, 2, 4, 4}, 0, 1, 0, 1}, {{1, 1, 5, 5}, 2, 3, 2, 3}};
    const Spec& s = specs[static_cast<std::size_t>(v)];
    Tensor x = f.leaf(s.shape);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, s] { return hseg::pad2d(x, s.t, s.b, s.l, s.r); };
    c.ref = [s](const std::vector<RTensor>& xs) { return pad2d(xs[0], s.t, s.b, s.l, s.r); };
    return c;
}

Case case_matmul(int v, std::uint64_t seed) {
    Fix f(seed);
    const bool ta = v == 1 || v == 3;
    const bool tb = v == 2 || v == 3;
    Tensor a = f.leaf(ta ? Shape{4, 3} : Shape{3, 4});
    Tensor b = f.leaf(tb ? Shape{5, 4} : Shape{4, 5});
    Case c;
    c.leaves = f.leaves;
    c.prod = [a, b, ta, tb] { return hseg::matmul(a, b, ta, tb); };
    c.ref = [ta, tb](const std::vector<RTensor>& x) { return matmul(x[0], x[1], ta, tb); };
    return c;
}

Case case_conv2d(int v, std::uint64_t seed) {
    Fix f(seed);
    Case c;
    if (v == 0) {  // 3x3, stride 1, pad 1, bias
        ConvSpec spec{4, 6, 3, 3, 1, 1, 1};
        Tensor x = f.leaf({1, 4, 6, 6}), w = f.leaf({6, 4, 3, 3}), b = f.leaf({6});
        c.prod = [=] { return hseg::conv2d(x, w, b, spec); };
        c.ref = [spec](const std::vector<RTensor>& t) { return conv2d(t[0], t[1], &t[2], spec); };
    } else if (v == 1) {  // 3x3, stride 2, no bias
        ConvSpec spec{4, 8, 3, 3, 2, 1, 1};
        Tensor x = f.leaf({2, 4, 5, 5}), w = f.leaf({8, 4, 3, 3});
        c.prod = [=] { return hseg::conv2d(x, w, std::nullopt, spec); };
        c.ref = [spec](const std::vector<RTensor>& t) { return conv2d(t[0], t[1], nullptr, spec); };
    } else {  // grouped 3x3 with bias
        ConvSpec spec{6, 6, 3, 3, 1, 1, 2};
        Tensor x = f.leaf({1, 6, 5, 5}), w = f.leaf({6, 3, 3, 3}), b = f.leaf({6});
        c.prod = [=] { return hseg::conv2d(x, w, b, spec); };
        c.ref = [spec](const std::vector<RTensor>& t) { return conv2d(t[0], t[1], &t[2], spec); };
    }
    c.leaves = f.leaves;
    return c;
}

Case case_tconv(int v, std::uint64_t seed) {
    Fix f(seed);
    Case c;
    if (v == 0) {  // 2x2 stride 2 (decoder upsample shape)
        ConvSpec spec{4, 6, 2, 2, 2, 0, 1};
        Tensor x = f.leaf({1, 4, 3, 3}), w = f.leaf({4, 6, 2, 2});
        c.prod = [=] { return hseg::transpose_conv2d(x, w, spec); };
        c.ref = [spec](const std::vector<RTensor>& t) { return transpose_conv2d(t[0], t[1], spec); };
    } else if (v == 1) {  // 3x3 stride 1 pad 1
        ConvSpec spec{3, 5, 3, 3, 1, 1, 1};
        Tensor x = f.leaf({2, 3, 4, 4}), w = f.leaf({3, 5, 3, 3});
        c.prod = [=] { return hseg::transpose_conv2d(x, w, spec); };
        c.ref = [spec](const std::vector<RTensor>& t) { return transpose_conv2d(t[0], t[1], spec); };
    } else {  // grouped 2x2 stride 2
        ConvSpec spec{4, 4, 2, 2, 2, 0, 2};
        Tensor x = f.leaf({1, 4, 3, 3}), w = f.leaf({4, 2, 2, 2});
        c.prod = [=] { return hseg::transpose_conv2d(x, w, spec); };
        c.ref = [spec](const std::vector<RTensor>& t) { return transpose_conv2d(t[0], t[1], spec); };
    }
    c.leaves = f.leaves;
    return c;
}

Case case_pool(int v, std::uint64_t seed, PoolKind kind) {
    Fix f(seed);
    struct Spec {
        Shape shape;
        int w, s;
    };
    static const std::vector<Spec> specs{
        {{1, 3, 5, 5}, 3, 1}, {{2, 2, 6, 6}, 2, 2}, {{3, 6, 6}, 2, 2}};
    const Spec& s = specs[static_cast<std::size_t>(v)];
    Tensor x = f.leaf(s.shape);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, s, kind] { return hseg::pool2d(kind, x, s.w, s.s); };
    c.ref = [s, kind](const std::vector<RTensor>& xs) {
        return kind == PoolKind::Max ? pool_max(xs[0], s.w, s.s) : pool_avg(xs[0], s.w, s.s);
    };
    return c;
}

Case case_global_pool(int v, std::uint64_t seed) {
    Fix f(seed);
    static const std::vector<Shape> shapes{{2, 3, 4, 4}, {5, 3, 3}, {1, 8, 2, 2}};
    Tensor x = f.leaf(shapes[static_cast<std::size_t>(v)]);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x] { return hseg::pool2d(PoolKind::GlobalAvg, x, 1, 1); };
    c.ref = [](const std::vector<RTensor>& xs) { return global_avg_pool(xs[0]); };
    return c;
}

Case case_softmax(int v, std::uint64_t seed) {
    Fix f(seed);
    struct Spec {
        Shape shape;
        int axis;
    };
    static const std::vector<Spec> specs{{{5, 7}, 1}, {{5, 7}, 0}, {{2, 3, 6}, 2}};
    const Spec& s = specs[static_cast<std::size_t>(v)];
    Tensor x = f.leaf(s.shape, -2.0f, 2.0f);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, s] { return hseg::softmax(x, s.axis); };
    c.ref = [s](const std::vector<RTensor>& xs) { return softmax(xs[0], s.axis); };
    return c;
}

Case case_layer_norm(int v, std::uint64_t seed) {
    Fix f(seed);
    static const std::vector<Shape> shapes{{6, 16}, {3, 8}, {2, 4, 8}};
    const Shape& s = shapes[static_cast<std::size_t>(v)];
    const std::int64_t d = s.back();
    Tensor x = f.leaf(s);
    Tensor g = f.leaf({d}, 0.5f, 1.5f);
    Tensor b = f.leaf({d}, -0.5f, 0.5f);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, g, b] { return hseg::layer_norm(x, g, b); };
    c.ref = [](const std::vector<RTensor>& t) { return layer_norm(t[0], t[1], t[2]); };
    return c;
}

Case case_batch_norm(int v, std::uint64_t seed) {
    Fix f(seed);
    static const std::vector<Shape> shapes{{2, 3, 4, 4}, {1, 4, 3, 3}, {2, 2, 5, 5}};
    const Shape& s = shapes[static_cast<std::size_t>(v)];
    const std::int64_t ch = s[1];
    Tensor x = f.leaf(s);
    Tensor sc = f.leaf({ch}, 0.5f, 1.5f);
    Tensor sh = f.leaf({ch}, -0.5f, 0.5f);
    Tensor rm = Tensor::zeros({ch});
    Tensor rv = Tensor::full({ch}, 1.0f);
    Case c;
    c.leaves = f.leaves;
    c.prod = [=] { return hseg::batch_norm(x, sc, sh, rm, rv, Mode::Train); };
    c.ref = [](const std::vector<RTensor>& t) { return batch_norm_train(t[0], t[1], t[2]); };
    return c;
}

Case case_dropout(int v, std::uint64_t seed) {
    Fix f(seed);
    static const std::vector<float> ps{0.25f, 0.5f, 0.1f};
    static const std::vector<Shape> shapes{{4, 6}, {2, 3, 4}, {1, 2, 5, 5}};
    const float p = ps[static_cast<std::size_t>(v)];
    const std::uint64_t mask_seed = seed ^ 0xD120u;
    Tensor x = f.leaf(shapes[static_cast<std::size_t>(v)]);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, p, mask_seed] {
        Rng r(mask_seed);
        return hseg::dropout(x, p, Mode::Train, r);
    };
    // Replays the documented mask contract: one next_float() per element in
    // row-major order, zero when it lands below p, else 1/(1-p).
    c.ref = [p, mask_seed](const std::vector<RTensor>& xs) {
        Rng r(mask_seed);
        const double keep = static_cast<double>(static_cast<float>(1.0 / (1.0 - static_cast<double>(p))));
        RTensor out = xs[0];
        for (auto& val : out.v) val *= r.next_float() < p ? 0.0 : keep;
        return out;
    };
    return c;
}

Case case_reduce(int v, std::uint64_t seed, int which) {
    Fix f(seed);
    static const std::vector<Shape> full{{1, 7}, {3, 4}, {2, 3, 2, 2}};
    static const std::vector<Shape> nchw{{2, 3, 4, 4}, {1, 5, 3, 3}, {3, 2, 2, 6}};
    const bool whole = which >= 4;
    Tensor x = f.leaf((whole ? full : nchw)[static_cast<std::size_t>(v)]);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, which] {
        switch (which) {
            case 0: return hseg::reduce_mean_spatial(x);
            case 1: return hseg::reduce_max_spatial(x);
            case 2: return hseg::reduce_mean_channels(x);
            case 3: return hseg::reduce_max_channels(x);
            case 4: return hseg::sum(x);
            default: return hseg::mean(x);
        }
    };
    c.ref = [which](const std::vector<RTensor>& xs) {
        switch (which) {
            case 0: return reduce_mean_spatial(xs[0]);
            case 1: return reduce_max_spatial(xs[0]);
            case 2: return reduce_mean_channels(xs[0]);
            case 3: return reduce_max_channels(xs[0]);
            case 4: return RTensor{{1}, {sum(xs[0])}};
            default: return RTensor{{1}, {mean(xs[0])}};
        }
    };
    return c;
}

// --- block fixtures ---------------------------------------------------------------

RefParams named(const std::vector<std::string>& names, const std::vector<RTensor>& vals,
                std::size_t offset) {
    RefParams p;
    for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], vals[i + offset]);
    return p;
}

Case case_se(int v, std::uint64_t seed) {
    Fix f(seed);
    static const std::vector<int> channels{8, 32, 4};
    const int c0 = channels[static_cast<std::size_t>(v)];
    Tensor x = f.leaf({2, c0, 4, 4}, 0.0f, 1.0f);
    SeBlockParams p = make_se_params(c0, 16, f.rng);
    f.adopt(p.w1);
    f.adopt(p.w2);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, p] { return se_forward(x, p); };
    c.ref = [](const std::vector<RTensor>& t) {
        return ref_se(t[0], named({"b.w1", "b.w2"}, t, 1), "b");
    };
    return c;
}

Case case_cbam(int v, std::uint64_t seed) {
    Fix f(seed);
    struct Spec {
        int c, k, hw;
    };
    static const std::vector<Spec> specs{{8, 3, 5}, {32, 7, 7}, {4, 3, 4}};
    const Spec& s = specs[static_cast<std::size_t>(v)];
    Tensor x = f.leaf({1, s.c, s.hw, s.hw}, 0.0f, 1.0f);
    CbamParams p = make_cbam_params(s.c, 16, s.k, f.rng);
    f.adopt(p.mlp_w1);
    f.adopt(p.mlp_w2);
    f.adopt(p.spatial_w);
    f.adopt(p.spatial_b);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, p] { return cbam_forward(x, p); };
    c.ref = [](const std::vector<RTensor>& t) {
        return ref_cbam(
            t[0], named({"b.mlp_w1", "b.mlp_w2", "b.spatial.weight", "b.spatial.bias"}, t, 1), "b");
    };
    return c;
}

Case case_gate(int v, std::uint64_t seed) {
    Fix f(seed);
    struct Spec {
        int skip_c, gate_c, inter_c, hw;
    };
    static const std::vector<Spec> specs{{8, 16, 4, 4}, {4, 8, 2, 5}, {6, 6, 3, 3}};
    const Spec& s = specs[static_cast<std::size_t>(v)];
    Tensor skip = f.leaf({1, s.skip_c, s.hw, s.hw});
    Tensor gate = f.leaf({1, s.gate_c, s.hw, s.hw});
    AttnGateParams p = make_attn_gate_params(s.skip_c, s.gate_c, s.inter_c, f.rng);
    f.adopt(p.theta_w);
    f.adopt(p.theta_b);
    f.adopt(p.phi_w);
    f.adopt(p.phi_b);
    f.adopt(p.psi_w);
    f.adopt(p.psi_b);
    Case c;
    c.leaves = f.leaves;
    c.prod = [skip, gate, p] { return attention_gate(skip, gate, p); };
    c.ref = [](const std::vector<RTensor>& t) {
        return ref_gate(t[0], t[1],
                        named({"b.theta.weight", "b.theta.bias", "b.phi.weight", "b.phi.bias",
                               "b.psi.weight", "b.psi.bias"},
                              t, 2),
                        "b");
    };
    return c;
}

Case case_attention(int v, std::uint64_t seed) {
    Fix f(seed);
    struct Spec {
        int t, d;
    };
    static const std::vector<Spec> specs{{5, 8}, {7, 4}, {3, 16}};
    const Spec& s = specs[static_cast<std::size_t>(v)];
    Tensor q = f.leaf({s.t, s.d});
    Tensor k = f.leaf({s.t, s.d});
    Tensor vv = f.leaf({s.t, s.d});
    Case c;
    c.leaves = f.leaves;
    c.prod = [q, k, vv] { return scaled_dot_product_attention(q, k, vv); };
    c.ref = [](const std::vector<RTensor>& t) { return ref_attention(t[0], t[1], t[2]); };
    return c;
}

std::vector<std::string> transformer_names(int heads, bool full_block) {
    std::vector<std::string> names;
    for (int h = 1; h <= heads; ++h) {
        const std::string base = "b.head" + std::to_string(h);
        names.push_back(base + ".wq");
        names.push_back(base + ".wk");
        names.push_back(base + ".wv");
    }
    names.push_back("b.wo");
    if (full_block) {
        for (const char* n : {"b.ffn.w1", "b.ffn.w2", "b.ln1.gamma", "b.ln1.beta", "b.ln2.gamma",
                              "b.ln2.beta"}) {
            names.push_back(n);
        }
    }
    return names;
}

void adopt_transformer(Fix& f, TransformerBlockParams& p, bool full_block) {
    for (std::size_t h = 0; h < p.wq.size(); ++h) {
        f.adopt(p.wq[h]);
        f.adopt(p.wk[h]);
        f.adopt(p.wv[h]);
    }
    f.adopt(p.wo);
    if (full_block) {
        f.adopt(p.ffn_w1);
        f.adopt(p.ffn_w2);
        f.adopt(p.ln1_gamma);
        f.adopt(p.ln1_beta);
        f.adopt(p.ln2_gamma);
        f.adopt(p.ln2_beta);
    }
}

Case case_mhsa(int v, std::uint64_t seed) {
    Fix f(seed);
    struct Spec {
        int d, heads, tokens;
    };
    static const std::vector<Spec> specs{{16, 4, 6}, {12, 3, 5}, {8, 2, 9}};
    const Spec& s = specs[static_cast<std::size_t>(v)];
    Tensor x = f.leaf({s.tokens, s.d});
    TransformerBlockParams p = make_transformer_block_params(s.d, s.heads, s.d, 0.0f, f.rng);
    adopt_transformer(f, p, false);
    const auto names = transformer_names(s.heads, false);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, p] {
        Rng r(0);
        return hseg::mhsa(x, p, r, Mode::Eval);
    };
    c.ref = [names, heads = s.heads](const std::vector<RTensor>& t) {
        return ref_mhsa(t[0], named(names, t, 1), "b", heads);
    };
    return c;
}

Case case_transformer(int v, std::uint64_t seed) {
    Fix f(seed);
    struct Spec {
        int d, heads, ffn, tokens;
    };
    static const std::vector<Spec> specs{{16, 4, 16, 9}, {12, 3, 8, 4}, {8, 2, 12, 6}};
    const Spec& s = specs[static_cast<std::size_t>(v)];
    Tensor x = f.leaf({s.tokens, s.d});
    TransformerBlockParams p = make_transformer_block_params(s.d, s.heads, s.ffn, 0.1f, f.rng);
    adopt_transformer(f, p, true);
    const auto names = transformer_names(s.heads, true);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, p] {
        Rng r(0);
        return transformer_block(x, p, r, Mode::Eval);
    };
    c.ref = [names, heads = s.heads](const std::vector<RTensor>& t) {
        return ref_transformer(t[0], named(names, t, 1), "b", heads);
    };
    return c;
}

Case case_resnext(int v, std::uint64_t seed) {
    Fix f(seed);
    struct Spec {
        int in_c, out_c, hw;
    };
    static const std::vector<Spec> specs{{8, 8, 5}, {6, 6, 4}, {4, 8, 3}};
    const Spec& s = specs[static_cast<std::size_t>(v)];
    Tensor x = f.leaf({1, s.in_c, s.hw, s.hw});
    ResNeXtBlockParams p = make_resnext_params(s.in_c, s.out_c, f.rng);
    std::vector<std::string> names{"b.reduce.weight", "b.reduce.bias", "b.dw.weight",
                                   "b.dw.bias",       "b.expand.weight", "b.expand.bias"};
    f.adopt(p.reduce_w);
    f.adopt(p.reduce_b);
    f.adopt(p.dw_w);
    f.adopt(p.dw_b);
    f.adopt(p.expand_w);
    f.adopt(p.expand_b);
    if (p.shortcut_w.defined()) {
        f.adopt(p.shortcut_w);
        f.adopt(p.shortcut_b);
        names.push_back("b.shortcut.weight");
        names.push_back("b.shortcut.bias");
    }
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, p] { return resnext_block(x, p); };
    c.ref = [names](const std::vector<RTensor>& t) {
        return ref_resnext(t[0], named(names, t, 1), "b");
    };
    return c;
}

Case case_conv_bn(int v, std::uint64_t seed, bool with_act) {
    Fix f(seed);
    ConvBnParams p;
    Shape in_shape;
    if (v == 0) {  // plain 3x3
        p = make_conv_bn_params(3, 4, 3, 1, 1, f.rng);
        in_shape = {1, 3, 5, 5};
    } else if (v == 1) {  // stem-style asymmetric padding, 7x7 stride 2
        p = make_conv_bn_params(3, 4, 7, 2, 0, f.rng);
        p.pad_top = 2;
        p.pad_bottom = 3;
        p.pad_left = 2;
        p.pad_right = 3;
        in_shape = {1, 3, 8, 8};
    } else {  // shortcut-style crop + 1x1 stride 2
        p = make_conv_bn_params(4, 6, 1, 2, 0, f.rng);
        p.crop = 1;
        in_shape = {1, 4, 6, 6};
    }
    Tensor x = f.leaf(in_shape);
    f.adopt(p.w);
    f.adopt(p.bn_scale);
    f.adopt(p.bn_shift);
    Case c;
    c.leaves = f.leaves;
    c.prod = [x, p, with_act] {
        return with_act ? conv_norm_act(x, p, Mode::Train) : conv_bn(x, p, Mode::Train);
    };
    c.ref = [p, with_act](const std::vector<RTensor>& t) {
        RTensor out =
            ref_conv_bn(t[0], p, named({"b.weight", "b.scale", "b.shift"}, t, 1), "b");
        return with_act ? relu(out) : out;
    };
    return c;
}

// --- loss fixtures ---------------------------------------------------------------

Case case_loss(int v, std::uint64_t seed, int which) {
    Fix f(seed);
    static const std::vector<Shape> shapes{{40}, {2, 1, 4, 4}, {3, 3}};
    const Shape& s = shapes[static_cast<std::size_t>(v)];
    Tensor pred = f.leaf(s, 0.05f, 0.95f);  // interior of the clamp band
    Tensor target = f.leaf(s, 0.0f, 1.0f);
    LossConfig cfg;
    cfg.lambda = 0.7f;
    Case c;
    c.leaves = f.leaves;
    c.prod = [pred, target, cfg, which] {
        switch (which) {
            case 0: return bce_loss(pred, target, cfg);
            case 1: return dice_loss(pred, target, cfg);
            default: return hybrid_loss(pred, target, cfg).total;
        }
    };
    c.ref = [cfg, which](const std::vector<RTensor>& t) {
        const double bce = bce_loss(t[0], t[1], static_cast<double>(cfg.bce_clamp));
        const double dice = dice_loss(t[0], t[1], static_cast<double>(cfg.dice_eps));
        switch (which) {
            case 0: return RTensor{{1}, {bce}};
            case 1: return RTensor{{1}, {dice}};
            default: return RTensor{{1}, {bce + static_cast<double>(cfg.lambda) * dice}};
        }
    };
    return c;
}

// --- end-to-end model -------------------------------------------------------------

Case case_model(int, std::uint64_t seed) {
    ModelConfig cfg = ModelConfig::desk();
    cfg.input_size = 32;
    cfg.dropout = 0.0f;
    cfg.validate();
    Rng build_rng(seed);
    auto m = std::make_shared<Model>(build_model(cfg, build_rng));

    Case c;
    std::vector<std::string> names;
    for (const auto& [name, t] : m->params.trainable()) {
        names.push_back(name);
        c.leaves.push_back(t);
    }

    Rng data_rng(derive_seed(seed, 1));
    std::vector<float> xv(static_cast<std::size_t>(3 * 32 * 32));
    for (auto& v : xv) v = data_rng.uniform(0.0f, 1.0f);
    Tensor x = Tensor::from_data({1, 3, 32, 32}, xv);
    RTensor rx;
    rx.shape = x.shape();
    rx.v.assign(xv.begin(), xv.end());

    // Eval mode: train-mode batch statistics over the innermost 2x2 stage maps
    // amplify single-precision roundoff past the comparison tolerance without
    // exercising any additional wiring (block entries cover that backward).
    c.prod = [m, x] {
        Rng r(0);
        return hseg::model_forward(*m, x, r, Mode::Eval);
    };
    c.ref = [m, names = std::move(names), rx](const std::vector<RTensor>& vals) {
        RefParams p;
        for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], vals[i]);
        return model_forward(*m, p, rx, Mode::Eval);
    };
    return c;
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(const SuiteOptions& opts) {
    std::vector<GradCheckReport> out;
    auto op = [&](const std::string& name, const CaseMaker& make, int variants = 3,
                  std::int64_t sample = -1) {
        out.push_back(run_entry(opts, name, 1e-4, 1e-3, sample, variants, make));
    };

    op("add", [](int v, std::uint64_t s) { return case_binary(v, s, 0); });
    op("sub", [](int v, std::uint64_t s) { return case_binary(v, s, 1); });
    op("mul", [](int v, std::uint64_t s) { return case_binary(v, s, 2); });
    op("scale", [](int v, std::uint64_t s) { return case_unary(v, s, 0); });
    op("relu", [](int v, std::uint64_t s) { return case_unary(v, s, 1); });
    op("sigmoid", [](int v, std::uint64_t s) { return case_unary(v, s, 2); });
    op("reshape", case_reshape);
    op("transpose2d", case_transpose2d);
    op("concat", case_concat);
    op("narrow", case_narrow);
    op("pad2d", case_pad2d);
    op("matmul", case_matmul, 4);
    op("conv2d", case_conv2d);
    op("transpose_conv2d", case_tconv);
    op("pool_max", [](int v, std::uint64_t s) { return case_pool(v, s, PoolKind::Max); });
    op("pool_avg", [](int v, std::uint64_t s) { return case_pool(v, s, PoolKind::Avg); });
    op("global_avg_pool", case_global_pool);
    op("softmax", case_softmax);
    op("layer_norm", case_layer_norm);
    op("batch_norm", case_batch_norm);
    op("dropout", case_dropout);
    op("reduce_mean_spatial", [](int v, std::uint64_t s) { return case_reduce(v, s, 0); });
    op("reduce_max_spatial", [](int v, std::uint64_t s) { return case_reduce(v, s, 1); });
    op("reduce_mean_channels", [](int v, std::uint64_t s) { return case_reduce(v, s, 2); });
    op("reduce_max_channels", [](int v, std::uint64_t s) { return case_reduce(v, s, 3); });
    op("sum", [](int v, std::uint64_t s) { return case_reduce(v, s, 4); });
    op("mean", [](int v, std::uint64_t s) { return case_reduce(v, s, 5); });

    op("se_block", case_se);
    op("cbam", case_cbam);
    op("attention_gate", case_gate);
    op("attention", case_attention);
    op("mhsa", case_mhsa);
    op("transformer_block", case_transformer);
    op("resnext_block", case_resnext);
    op("conv_bn", [](int v, std::uint64_t s) { return case_conv_bn(v, s, false); });
    op("conv_norm_act", [](int v, std::uint64_t s) { return case_conv_bn(v, s, true); });

    // The clamped log in bce has large third derivatives near the band edges;
    // a smaller step keeps the quotient's truncation under the tolerance.
    out.push_back(run_entry(opts, "bce_loss", 1e-4, 1e-4, -1, 3,
                            [](int v, std::uint64_t s) { return case_loss(v, s, 0); }));
    out.push_back(run_entry(opts, "dice_loss", 1e-4, 1e-4, -1, 3,
                            [](int v, std::uint64_t s) { return case_loss(v, s, 1); }));
    out.push_back(run_entry(opts, "hybrid_loss", 1e-4, 1e-4, -1, 3,
                            [](int v, std::uint64_t s) { return case_loss(v, s, 2); }));

    if (opts.include_model) {
        out.push_back(run_entry(opts, "model", 1e-3, 1e-4, 20, 1, case_model, true));
    }
    return out;
}

}  // namespace hseg::refmath
