#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hybridseg/errors.hpp"
#include "hybridseg/rng.hpp"

namespace hseg {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

enum class Mode { Train, Eval };

namespace detail {

// Autodiff graph node. Ops link result nodes to their parents and attach a
// backward closure; Tensor::backward() walks the graph in reverse
// topological order, so gradient accumulation has one fixed order per graph.
struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool leaf = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }

    /// Gradient buffer, allocated zeroed on first use.
    std::span<float> grad_acc();
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

/// Dense float32 tensor with optional reverse-mode gradient tracking.
/// Copying a Tensor copies the handle, not the storage.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float v, bool requires_grad = false);
    static Tensor scalar(float v);
    /// Validates that every value is finite; external data enters here.
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    std::int64_t numel() const;

    std::span<const float> data() const;
    /// Writable storage; restricted to leaf tensors (parameters, buffers).
    std::span<float> mutable_data();

    bool requires_grad() const;
    void set_requires_grad(bool v);

    bool has_grad() const;
    std::span<const float> grad() const;
    void zero_grad();

    float item() const;
    float at(std::initializer_list<std::int64_t> idx) const;

    /// Leaf copy of the values, detached from any graph.
    Tensor detached() const;

    /// Reverse-mode sweep from a scalar. Populates grads of every
    /// requires_grad tensor reachable through the recorded graph.
    void backward() const;

    const detail::NodePtr& node() const { return node_; }
    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

  private:
    detail::NodePtr node_;
};

// --- grad mode ------------------------------------------------------------

bool grad_enabled();

/// RAII guard that disables graph recording (inference / evaluation).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

/// Build an op node. `backward` receives the result node and accumulates
/// into its parents' grads; ops outside tensor-core (fused losses) use this
/// same hook. When grad is disabled or no input requires it, the inputs are
/// not retained and `backward` is dropped.
Tensor make_op(Shape shape, std::vector<float> value, const std::vector<Tensor>& inputs,
               std::function<void(detail::Node&)> backward);

// --- convolution geometry ---------------------------------------------------

struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    int padding = 0;
    int groups = 1;

    void validate() const;
    /// Output spatial size; throws ConfigError when not integral.
    std::pair<std::int64_t, std::int64_t> out_size(std::int64_t h, std::int64_t w) const;
    /// Transposed-convolution output size: (h-1)*stride + kernel - 2*padding.
    std::pair<std::int64_t, std::int64_t> transposed_out_size(std::int64_t h, std::int64_t w) const;
};

// --- structural ops ---------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose2d(const Tensor& x);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t len);
/// Zero padding on the two trailing (spatial) axes of a 3D/4D tensor.
Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right);

// --- elementwise ops (NumPy-style trailing broadcast, rank <= 4) -------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// --- matrix / conv ops --------------------------------------------------------

/// 2D matrix product of op(a) [m x k] and op(b) [k x n], where op is an
/// optional transpose. Inner products accumulate in double.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

/// Grouped 2D cross-correlation. x is [C,H,W] or [N,C,H,W]; w is
/// [C_out, C_in/groups, kh, kw]; bias, when given, is [C_out].
Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
              const ConvSpec& spec);

/// Adjoint of conv2d with the same spec. w is [C_in, C_out/groups, kh, kw].
Tensor transpose_conv2d(const Tensor& x, const Tensor& w, const ConvSpec& spec);

enum class PoolKind { Max, Avg, GlobalAvg };

/// Window pooling over the spatial axes. GlobalAvg ignores window/stride and
/// returns [., C, 1, 1]. Windows must tile the input exactly.
Tensor pool2d(PoolKind kind, const Tensor& x, int window, int stride);

// --- normalization / regularization -----------------------------------------

Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

/// Per-channel batch norm over [N,C,H,W]. Train mode normalizes by batch
/// statistics (biased variance) and updates running stats in place with the
/// given momentum; eval mode normalizes by the running stats.
Tensor batch_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                  const Tensor& running_mean, const Tensor& running_var, Mode mode,
                  float momentum = 0.1f, float eps = 1e-5f);

Tensor dropout(const Tensor& x, float p, Mode mode, Rng& rng);

// --- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// [N,C,H,W] -> [N,C] mean / max over the spatial axes.
Tensor reduce_mean_spatial(const Tensor& x);
Tensor reduce_max_spatial(const Tensor& x);
/// [N,C,H,W] -> [N,1,H,W] mean / max over the channel axis.
Tensor reduce_mean_channels(const Tensor& x);
Tensor reduce_max_channels(const Tensor& x);

}  // namespace hseg
