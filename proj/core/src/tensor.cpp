#include "hybridseg/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <unordered_set>

namespace hseg {

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (std::int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

std::span<float> Node::grad_acc() {
    if (grad.empty()) grad.assign(value.size(), 0.0f);
    return {grad.data(), grad.size()};
}

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;

void validate_shape(const Shape& s) {
    for (std::int64_t d : s)
        if (d < 1) throw DimensionError("invalid tensor shape " + shape_str(s));
}

detail::NodePtr make_leaf(Shape shape, std::vector<float> value, bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(value.size()))
        throw DimensionError("shape " + shape_str(shape) + " does not match a buffer of " +
                             std::to_string(value.size()) + " values");
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->leaf = true;
    return n;
}

detail::Node& cnode(const Tensor& t, const char* op) {
    if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor");
    return *t.node();
}

}  // namespace

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
    return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::full(Shape shape, float v, bool requires_grad) {
    std::vector<float> buf(static_cast<std::size_t>(shape_numel(shape)), v);
    return Tensor(make_leaf(std::move(shape), std::move(buf), requires_grad));
}

Tensor Tensor::scalar(float v) { return Tensor(make_leaf({1}, {v}, false)); }

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    for (std::size_t i = 0; i < data.size(); ++i)
        if (!std::isfinite(data[i]))
            throw Error("tensor data contains a non-finite value at index " + std::to_string(i));
    return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

const Shape& Tensor::shape() const { return cnode(*this, "shape").shape; }

std::int64_t Tensor::numel() const { return cnode(*this, "numel").numel(); }

std::span<const float> Tensor::data() const {
    auto& n = cnode(*this, "data");
    return {n.value.data(), n.value.size()};
}

std::span<float> Tensor::mutable_data() {
    auto& n = cnode(*this, "mutable_data");
    if (!n.leaf) throw UsageError("mutable_data: only leaf tensors may be written in place");
    return {n.value.data(), n.value.size()};
}

bool Tensor::requires_grad() const { return cnode(*this, "requires_grad").requires_grad; }

void Tensor::set_requires_grad(bool v) {
    auto& n = cnode(*this, "set_requires_grad");
    if (!n.leaf) throw UsageError("set_requires_grad: only valid on leaf tensors");
    n.requires_grad = v;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const float> Tensor::grad() const {
    auto& n = cnode(*this, "grad");
    if (n.grad.empty()) throw UsageError("grad: no gradient has been accumulated");
    return {n.grad.data(), n.grad.size()};
}

void Tensor::zero_grad() {
    auto& n = cnode(*this, "zero_grad");
    std::fill(n.grad.begin(), n.grad.end(), 0.0f);
}

float Tensor::item() const {
    auto& n = cnode(*this, "item");
    if (n.numel() != 1) throw UsageError("item: tensor has shape " + shape_str(n.shape));
    return n.value[0];
}

float Tensor::at(std::initializer_list<std::int64_t> idx) const {
    auto& n = cnode(*this, "at");
    if (idx.size() != n.shape.size())
        throw DimensionError("at: " + std::to_string(idx.size()) + " indices for shape " +
                             shape_str(n.shape));
    std::int64_t off = 0;
    std::size_t d = 0;
    for (std::int64_t i : idx) {
        if (i < 0 || i >= n.shape[d])
            throw DimensionError("at: index " + std::to_string(i) + " out of range for shape " +
                                 shape_str(n.shape));
        off = off * n.shape[d] + i;
        ++d;
    }
    return n.value[static_cast<std::size_t>(off)];
}

Tensor Tensor::detached() const {
    auto& n = cnode(*this, "detached");
    return Tensor(make_leaf(n.shape, n.value, false));
}

void Tensor::backward() const {
    auto& root = cnode(*this, "backward");
    if (root.numel() != 1)
        throw UsageError("backward: requires a scalar, got shape " + shape_str(root.shape));
    if (!root.requires_grad)
        throw UsageError("backward: tensor does not require grad");

    // Iterative DFS post-order over the requires_grad subgraph. Reversing it
    // gives an order where every consumer runs before its inputs, and the
    // fixed parent ordering makes gradient accumulation deterministic.
    struct Frame {
        detail::Node* n;
        std::size_t next;
    };
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            detail::Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    root.grad_acc()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

// --- grad mode ----------------------------------------------------------------

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

Tensor make_op(Shape shape, std::vector<float> value, const std::vector<Tensor>& inputs,
               std::function<void(detail::Node&)> backward) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(value.size()))
        throw DimensionError("make_op: shape " + shape_str(shape) + " does not match " +
                             std::to_string(value.size()) + " values");
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool track = false;
    if (t_grad_enabled)
        for (const Tensor& t : inputs)
            if (t.defined() && t.requires_grad()) {
                track = true;
                break;
            }
    if (track) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (const Tensor& t : inputs) n->parents.push_back(t.node());
        n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
}

// --- ConvSpec -----------------------------------------------------------------

void ConvSpec::validate() const {
    if (in_channels < 1 || out_channels < 1)
        throw ConfigError("conv: channel counts must be positive");
    if (kernel_h < 1 || kernel_w < 1) throw ConfigError("conv: kernel size must be positive");
    if (stride < 1) throw ConfigError("conv: stride must be positive");
    if (padding < 0) throw ConfigError("conv: padding must be non-negative");
    if (groups < 1) throw ConfigError("conv: groups must be positive");
    if (in_channels % groups != 0 || out_channels % groups != 0)
        throw ConfigError("conv: channels (" + std::to_string(in_channels) + " in, " +
                          std::to_string(out_channels) + " out) not divisible by " +
                          std::to_string(groups) + " groups");
}

std::pair<std::int64_t, std::int64_t> ConvSpec::out_size(std::int64_t h, std::int64_t w) const {
    auto one = [&](std::int64_t d, const char* name) {
        const std::int64_t num = d + 2 * padding - (name[0] == 'h' ? kernel_h : kernel_w);
        if (num < 0)
            throw ConfigError(std::string("conv: kernel exceeds padded input along ") + name);
        if (num % stride != 0)
            throw ConfigError("conv: stride " + std::to_string(stride) +
                              " does not produce an integral output size along " + name +
                              " (input " + std::to_string(d) + ")");
        return num / stride + 1;
    };
    return {one(h, "h"), one(w, "w")};
}

std::pair<std::int64_t, std::int64_t> ConvSpec::transposed_out_size(std::int64_t h,
                                                                    std::int64_t w) const {
    const std::int64_t oh = (h - 1) * stride + kernel_h - 2 * padding;
    const std::int64_t ow = (w - 1) * stride + kernel_w - 2 * padding;
    if (oh < 1 || ow < 1) throw ConfigError("transposed conv: empty output");
    return {oh, ow};
}

// --- broadcasting -------------------------------------------------------------

namespace {

// Right-aligned broadcast bookkeeping, padded to four axes. Strides are 0 on
// broadcast axes so one nested loop serves both operands.
struct Bcast {
    std::array<std::int64_t, 4> dim{1, 1, 1, 1};
    std::array<std::int64_t, 4> sa{0, 0, 0, 0};
    std::array<std::int64_t, 4> sb{0, 0, 0, 0};
    Shape out;
    std::int64_t n = 1;
};

Bcast make_bcast(const Shape& a, const Shape& b, const char* op) {
    if (a.size() > 4 || b.size() > 4)
        throw DimensionError(std::string(op) + ": broadcasting supports rank <= 4, got " +
                             shape_str(a) + " and " + shape_str(b));
    std::array<std::int64_t, 4> da{1, 1, 1, 1}, db{1, 1, 1, 1};
    for (std::size_t i = 0; i < a.size(); ++i) da[4 - a.size() + i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) db[4 - b.size() + i] = b[i];
    Bcast bc;
    for (int i = 0; i < 4; ++i) {
        if (da[i] != db[i] && da[i] != 1 && db[i] != 1)
            throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                 shape_str(b) + " do not broadcast");
        bc.dim[i] = std::max(da[i], db[i]);
    }
    std::int64_t run_a = 1, run_b = 1;
    for (int i = 3; i >= 0; --i) {
        bc.sa[i] = da[i] == 1 ? 0 : run_a;
        bc.sb[i] = db[i] == 1 ? 0 : run_b;
        run_a *= da[i];
        run_b *= db[i];
    }
    const std::size_t r = std::max(a.size(), b.size());
    bc.out.assign(bc.dim.begin() + (4 - r), bc.dim.end());
    bc.n = bc.dim[0] * bc.dim[1] * bc.dim[2] * bc.dim[3];
    return bc;
}

template <class F>
void for_bcast(const Bcast& bc, F&& f) {
    std::int64_t i = 0;
    for (std::int64_t a0 = 0; a0 < bc.dim[0]; ++a0)
        for (std::int64_t a1 = 0; a1 < bc.dim[1]; ++a1)
            for (std::int64_t a2 = 0; a2 < bc.dim[2]; ++a2) {
                std::int64_t oa = a0 * bc.sa[0] + a1 * bc.sa[1] + a2 * bc.sa[2];
                std::int64_t ob = a0 * bc.sb[0] + a1 * bc.sb[1] + a2 * bc.sb[2];
                for (std::int64_t a3 = 0; a3 < bc.dim[3]; ++a3, ++i) {
                    f(i, oa, ob);
                    oa += bc.sa[3];
                    ob += bc.sb[3];
                }
            }
}

// dL/dparent for one side of a broadcast op; `weight(i, other_off)` is the
// local derivative. Broadcast axes reduce in double, in output-index order.
template <class W>
void accum_bcast(detail::Node& p, bool side_a, const float* g, const Bcast& bc, W&& weight) {
    auto gp = p.grad_acc();
    if (p.numel() == bc.n) {
        for_bcast(bc, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
            gp[side_a ? oa : ob] += g[i] * weight(i, side_a ? ob : oa);
        });
        return;
    }
    std::vector<double> acc(static_cast<std::size_t>(p.numel()), 0.0);
    for_bcast(bc, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
        acc[static_cast<std::size_t>(side_a ? oa : ob)] +=
            static_cast<double>(g[i]) * static_cast<double>(weight(i, side_a ? ob : oa));
    });
    for (std::int64_t j = 0; j < p.numel(); ++j) gp[j] += static_cast<float>(acc[j]);
}

Tensor add_sub(const Tensor& a, const Tensor& b, float sign_b, const char* name) {
    auto& an = cnode(a, name);
    auto& bn = cnode(b, name);
    const Bcast bc = make_bcast(an.shape, bn.shape, name);
    std::vector<float> out(static_cast<std::size_t>(bc.n));
    const float* av = an.value.data();
    const float* bv = bn.value.data();
    if (sign_b > 0)
        for_bcast(bc, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
            out[i] = av[oa] + bv[ob];
        });
    else
        for_bcast(bc, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
            out[i] = av[oa] - bv[ob];
        });
    return make_op(bc.out, std::move(out), {a, b}, [bc, sign_b](detail::Node& n) {
        const float* g = n.grad.data();
        if (n.parents[0]->requires_grad)
            accum_bcast(*n.parents[0], true, g, bc, [](std::int64_t, std::int64_t) { return 1.0f; });
        if (n.parents[1]->requires_grad)
            accum_bcast(*n.parents[1], false, g, bc,
                        [sign_b](std::int64_t, std::int64_t) { return sign_b; });
    });
}

}  // namespace

// --- elementwise ops ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return add_sub(a, b, 1.0f, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_sub(a, b, -1.0f, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
    auto& an = cnode(a, "mul");
    auto& bn = cnode(b, "mul");
    const Bcast bc = make_bcast(an.shape, bn.shape, "mul");
    std::vector<float> out(static_cast<std::size_t>(bc.n));
    const float* av = an.value.data();
    const float* bv = bn.value.data();
    for_bcast(bc,
              [&](std::int64_t i, std::int64_t oa, std::int64_t ob) { out[i] = av[oa] * bv[ob]; });
    return make_op(bc.out, std::move(out), {a, b}, [bc](detail::Node& n) {
        const float* g = n.grad.data();
        const float* av = n.parents[0]->value.data();
        const float* bv = n.parents[1]->value.data();
        if (n.parents[0]->requires_grad)
            accum_bcast(*n.parents[0], true, g, bc,
                        [bv](std::int64_t, std::int64_t other) { return bv[other]; });
        if (n.parents[1]->requires_grad)
            accum_bcast(*n.parents[1], false, g, bc,
                        [av](std::int64_t, std::int64_t other) { return av[other]; });
    });
}

Tensor scale(const Tensor& x, float c) {
    auto& xn = cnode(x, "scale");
    std::vector<float> out(xn.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xn.value[i];
    return make_op(xn.shape, std::move(out), {x}, [c](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto gp = p.grad_acc();
        for (std::int64_t i = 0; i < n.numel(); ++i) gp[i] += c * n.grad[i];
    });
}

Tensor relu(const Tensor& x) {
    auto& xn = cnode(x, "relu");
    std::vector<float> out(xn.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xn.value[i] > 0.0f ? xn.value[i] : 0.0f;
    return make_op(xn.shape, std::move(out), {x}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto gp = p.grad_acc();
        const float* xv = p.value.data();
        for (std::int64_t i = 0; i < n.numel(); ++i)
            if (xv[i] > 0.0f) gp[i] += n.grad[i];
    });
}

Tensor sigmoid(const Tensor& x) {
    auto& xn = cnode(x, "sigmoid");
    std::vector<float> out(xn.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xn.value[i];
        if (v >= 0.0) {
            out[i] = static_cast<float>(1.0 / (1.0 + std::exp(-v)));
        } else {
            const double e = std::exp(v);
            out[i] = static_cast<float>(e / (1.0 + e));
        }
    }
    return make_op(xn.shape, std::move(out), {x}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto gp = p.grad_acc();
        for (std::int64_t i = 0; i < n.numel(); ++i) {
            const double y = n.value[i];
            gp[i] += static_cast<float>(static_cast<double>(n.grad[i]) * y * (1.0 - y));
        }
    });
}

// --- structural ops --------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    auto& xn = cnode(x, "reshape");
    validate_shape(shape);
    if (shape_numel(shape) != xn.numel())
        throw DimensionError("reshape: " + shape_str(xn.shape) + " -> " + shape_str(shape) +
                             " changes element count");
    std::vector<float> out = xn.value;
    return make_op(std::move(shape), std::move(out), {x}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto gp = p.grad_acc();
        for (std::int64_t i = 0; i < n.numel(); ++i) gp[i] += n.grad[i];
    });
}

Tensor transpose2d(const Tensor& x) {
    auto& xn = cnode(x, "transpose2d");
    if (xn.shape.size() != 2)
        throw DimensionError("transpose2d: expected rank 2, got " + shape_str(xn.shape));
    const std::int64_t m = xn.shape[0], n2 = xn.shape[1];
    std::vector<float> out(xn.value.size());
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n2; ++j) out[j * m + i] = xn.value[i * n2 + j];
    return make_op({n2, m}, std::move(out), {x}, [m, n2](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto gp = p.grad_acc();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n2; ++j) gp[i * n2 + j] += n.grad[j * m + i];
    });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw UsageError("concat: no inputs");
    auto& first = cnode(xs[0], "concat");
    const int rank = static_cast<int>(first.shape.size());
    if (axis < 0 || axis >= rank)
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(rank));
    Shape out_shape = first.shape;
    for (std::size_t t = 1; t < xs.size(); ++t) {
        auto& tn = cnode(xs[t], "concat");
        if (static_cast<int>(tn.shape.size()) != rank)
            throw DimensionError("concat: rank mismatch between inputs");
        for (int d = 0; d < rank; ++d)
            if (d != axis && tn.shape[d] != first.shape[d])
                throw DimensionError("concat: shapes " + shape_str(first.shape) + " and " +
                                     shape_str(tn.shape) + " differ off the concat axis");
        out_shape[axis] += tn.shape[axis];
    }
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= first.shape[d];
    for (int d = axis + 1; d < rank; ++d) inner *= first.shape[d];

    std::vector<float> out(static_cast<std::size_t>(shape_numel(out_shape)));
    const std::int64_t out_row = out_shape[axis] * inner;
    std::int64_t base = 0;
    for (const Tensor& t : xs) {
        auto& tn = *t.node();
        const std::int64_t chunk = tn.shape[axis] * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(tn.value.data() + o * chunk, chunk, out.data() + o * out_row + base);
        base += chunk;
    }
    return make_op(std::move(out_shape), std::move(out), xs,
                   [outer, inner, out_row](detail::Node& n) {
                       std::int64_t base = 0;
                       for (auto& pp : n.parents) {
                           detail::Node& p = *pp;
                           const std::int64_t axis_len =
                               p.numel() / (outer * inner);
                           const std::int64_t chunk = axis_len * inner;
                           if (p.requires_grad) {
                               auto gp = p.grad_acc();
                               for (std::int64_t o = 0; o < outer; ++o) {
                                   const float* g = n.grad.data() + o * out_row + base;
                                   float* dst = gp.data() + o * chunk;
                                   for (std::int64_t j = 0; j < chunk; ++j) dst[j] += g[j];
                               }
                           }
                           base += chunk;
                       }
                   });
}

Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t len) {
    auto& xn = cnode(x, "narrow");
    const int rank = static_cast<int>(xn.shape.size());
    if (axis < 0 || axis >= rank)
        throw DimensionError("narrow: axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(rank));
    if (start < 0 || len < 1 || start + len > xn.shape[axis])
        throw DimensionError("narrow: window [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") out of range for axis size " +
                             std::to_string(xn.shape[axis]));
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= xn.shape[d];
    for (int d = axis + 1; d < rank; ++d) inner *= xn.shape[d];
    const std::int64_t d_in = xn.shape[axis];

    Shape out_shape = xn.shape;
    out_shape[axis] = len;
    std::vector<float> out(static_cast<std::size_t>(outer * len * inner));
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(xn.value.data() + (o * d_in + start) * inner, len * inner,
                    out.data() + o * len * inner);
    return make_op(std::move(out_shape), std::move(out), {x},
                   [outer, inner, d_in, start, len](detail::Node& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       auto gp = p.grad_acc();
                       for (std::int64_t o = 0; o < outer; ++o) {
                           const float* g = n.grad.data() + o * len * inner;
                           float* dst = gp.data() + (o * d_in + start) * inner;
                           for (std::int64_t j = 0; j < len * inner; ++j) dst[j] += g[j];
                       }
                   });
}

Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right) {
    auto& xn = cnode(x, "pad2d");
    const int rank = static_cast<int>(xn.shape.size());
    if (rank != 3 && rank != 4)
        throw DimensionError("pad2d: expected rank 3 or 4, got " + shape_str(xn.shape));
    if (top < 0 || bottom < 0 || left < 0 || right < 0)
        throw ConfigError("pad2d: negative padding");
    const std::int64_t h = xn.shape[rank - 2], w = xn.shape[rank - 1];
    const std::int64_t oh = h + top + bottom, ow = w + left + right;
    std::int64_t planes = 1;
    for (int d = 0; d < rank - 2; ++d) planes *= xn.shape[d];

    Shape out_shape = xn.shape;
    out_shape[rank - 2] = oh;
    out_shape[rank - 1] = ow;
    std::vector<float> out(static_cast<std::size_t>(planes * oh * ow), 0.0f);
    for (std::int64_t c = 0; c < planes; ++c)
        for (std::int64_t y = 0; y < h; ++y)
            std::copy_n(xn.value.data() + (c * h + y) * w, w,
                        out.data() + (c * oh + y + top) * ow + left);
    return make_op(std::move(out_shape), std::move(out), {x},
                   [planes, h, w, oh, ow, top, left](detail::Node& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       auto gp = p.grad_acc();
                       for (std::int64_t c = 0; c < planes; ++c)
                           for (std::int64_t y = 0; y < h; ++y) {
                               const float* g = n.grad.data() + (c * oh + y + top) * ow + left;
                               float* dst = gp.data() + (c * h + y) * w;
                               for (std::int64_t xx = 0; xx < w; ++xx) dst[xx] += g[xx];
                           }
                   });
}

// --- reductions --------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    auto& xn = cnode(x, "sum");
    double acc = 0.0;
    for (float v : xn.value) acc += static_cast<double>(v);
    return make_op({1}, {static_cast<float>(acc)}, {x}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto gp = p.grad_acc();
        const float g = n.grad[0];
        for (std::int64_t i = 0; i < p.numel(); ++i) gp[i] += g;
    });
}

Tensor mean(const Tensor& x) {
    auto& xn = cnode(x, "mean");
    double acc = 0.0;
    for (float v : xn.value) acc += static_cast<double>(v);
    const double inv = 1.0 / static_cast<double>(xn.numel());
    return make_op({1}, {static_cast<float>(acc * inv)}, {x}, [inv](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto gp = p.grad_acc();
        const double g = n.grad[0];
        for (std::int64_t i = 0; i < p.numel(); ++i) gp[i] += static_cast<float>(g * inv);
    });
}

namespace {

detail::Node& spatial_input(const Tensor& x, const char* op) {
    auto& xn = cnode(x, op);
    if (xn.shape.size() != 4)
        throw DimensionError(std::string(op) + ": expected [N,C,H,W], got " + shape_str(xn.shape));
    return xn;
}

}  // namespace

Tensor reduce_mean_spatial(const Tensor& x) {
    auto& xn = spatial_input(x, "reduce_mean_spatial");
    const std::int64_t nb = xn.shape[0], c = xn.shape[1], plane = xn.shape[2] * xn.shape[3];
    const double inv = 1.0 / static_cast<double>(plane);
    std::vector<float> out(static_cast<std::size_t>(nb * c));
    for (std::int64_t i = 0; i < nb * c; ++i) {
        const float* src = xn.value.data() + i * plane;
        double acc = 0.0;
        for (std::int64_t j = 0; j < plane; ++j) acc += static_cast<double>(src[j]);
        out[i] = static_cast<float>(acc * inv);
    }
    return make_op({nb, c}, std::move(out), {x}, [plane, inv](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto gp = p.grad_acc();
        for (std::int64_t i = 0; i < n.numel(); ++i) {
            const float g = static_cast<float>(static_cast<double>(n.grad[i]) * inv);
            float* dst = gp.data() + i * plane;
            for (std::int64_t j = 0; j < plane; ++j) dst[j] += g;
        }
    });
}

Tensor reduce_max_spatial(const Tensor& x) {
    auto& xn = spatial_input(x, "reduce_max_spatial");
    const std::int64_t nb = xn.shape[0], c = xn.shape[1], plane = xn.shape[2] * xn.shape[3];
    std::vector<float> out(static_cast<std::size_t>(nb * c));
    auto arg = std::make_shared<std::vector<std::int64_t>>(out.size());
    for (std::int64_t i = 0; i < nb * c; ++i) {
        const float* src = xn.value.data() + i * plane;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < plane; ++j)
            if (src[j] > src[best]) best = j;
        out[i] = src[best];
        (*arg)[i] = best;
    }
    return make_op({nb, c}, std::move(out), {x}, [plane, arg](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto gp = p.grad_acc();
        for (std::int64_t i = 0; i < n.numel(); ++i) gp[i * plane + (*arg)[i]] += n.grad[i];
    });
}

Tensor reduce_mean_channels(const Tensor& x) {
    auto& xn = spatial_input(x, "reduce_mean_channels");
    const std::int64_t nb = xn.shape[0], c = xn.shape[1], plane = xn.shape[2] * xn.shape[3];
    const double inv = 1.0 / static_cast<double>(c);
    std::vector<float> out(static_cast<std::size_t>(nb * plane));
    for (std::int64_t b = 0; b < nb; ++b) {
        const float* src = xn.value.data() + b * c * plane;
        float* dst = out.data() + b * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
            double acc = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch)
                acc += static_cast<double>(src[ch * plane + j]);
            dst[j] = static_cast<float>(acc * inv);
        }
    }
    return make_op({nb, 1, xn.shape[2], xn.shape[3]}, std::move(out), {x},
                   [nb, c, plane, inv](detail::Node& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       auto gp = p.grad_acc();
                       for (std::int64_t b = 0; b < nb; ++b)
                           for (std::int64_t j = 0; j < plane; ++j) {
                               const float g = static_cast<float>(
                                   static_cast<double>(n.grad[b * plane + j]) * inv);
                               for (std::int64_t ch = 0; ch < c; ++ch)
                                   gp[(b * c + ch) * plane + j] += g;
                           }
                   });
}

Tensor reduce_max_channels(const Tensor& x) {
    auto& xn = spatial_input(x, "reduce_max_channels");
    const std::int64_t nb = xn.shape[0], c = xn.shape[1], plane = xn.shape[2] * xn.shape[3];
    std::vector<float> out(static_cast<std::size_t>(nb * plane));
    auto arg = std::make_shared<std::vector<std::int64_t>>(out.size());
    for (std::int64_t b = 0; b < nb; ++b) {
        const float* src = xn.value.data() + b * c * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
            std::int64_t best = 0;
            for (std::int64_t ch = 1; ch < c; ++ch)
                if (src[ch * plane + j] > src[best * plane + j]) best = ch;
            out[b * plane + j] = src[best * plane + j];
            (*arg)[b * plane + j] = best;
        }
    }
    return make_op({nb, 1, xn.shape[2], xn.shape[3]}, std::move(out), {x},
                   [nb, c, plane, arg](detail::Node& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       auto gp = p.grad_acc();
                       for (std::int64_t b = 0; b < nb; ++b)
                           for (std::int64_t j = 0; j < plane; ++j)
                               gp[(b * c + (*arg)[b * plane + j]) * plane + j] +=
                                   n.grad[b * plane + j];
                   });
}

}  // namespace hseg
