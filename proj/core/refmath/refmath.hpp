#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hybridseg/model.hpp"
#include "hybridseg/tensor.hpp"

namespace hseg::refmath {

// Independent double-precision reference implementations of every operation
// and block, written as direct naive loops (no im2col, no gemm, no shared
// kernels with the production path). They serve two purposes: value oracles
// for unit tests, and the 64-bit forward evaluated by the central-difference
// gradient checker.

struct RTensor {
    Shape shape;
    std::vector<double> v;

    RTensor() = default;
    RTensor(Shape s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {}
    static RTensor of(const Tensor& t);
    static RTensor zeros(Shape s);
    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
    /// Cast back to a production leaf tensor (f32).
    Tensor to_tensor() const;
};

// --- elementwise / structural ---------------------------------------------------

RTensor add(const RTensor& a, const RTensor& b);  // right-aligned broadcast
RTensor sub(const RTensor& a, const RTensor& b);
RTensor mul(const RTensor& a, const RTensor& b);
RTensor scale(const RTensor& x, double c);
RTensor relu(const RTensor& x);
RTensor sigmoid(const RTensor& x);
RTensor reshape(const RTensor& x, Shape shape);
RTensor transpose2d(const RTensor& x);
RTensor concat(const std::vector<RTensor>& parts, int axis);
RTensor narrow(const RTensor& x, int axis, std::int64_t start, std::int64_t length);
RTensor pad2d(const RTensor& x, int top, int bottom, int left, int right);

// --- linear algebra / conv -------------------------------------------------------

RTensor matmul(const RTensor& a, const RTensor& b, bool trans_a = false, bool trans_b = false);
RTensor conv2d(const RTensor& x, const RTensor& w, const RTensor* bias, const ConvSpec& spec);
RTensor transpose_conv2d(const RTensor& x, const RTensor& w, const ConvSpec& spec);
RTensor pool_max(const RTensor& x, int window, int stride);
RTensor pool_avg(const RTensor& x, int window, int stride);
RTensor global_avg_pool(const RTensor& x);

// --- normalization / reductions ---------------------------------------------------

RTensor softmax(const RTensor& x, int axis);
RTensor layer_norm(const RTensor& x, const RTensor& gamma, const RTensor& beta, double eps = 1e-5);
/// Training-mode batch norm: biased batch statistics per channel.
RTensor batch_norm_train(const RTensor& x, const RTensor& scale, const RTensor& shift,
                         double eps = 1e-5);
/// Eval-mode batch norm: normalizes with the supplied running statistics.
RTensor batch_norm_eval(const RTensor& x, const RTensor& scale, const RTensor& shift,
                        const RTensor& mean, const RTensor& var, double eps = 1e-5);
RTensor reduce_mean_spatial(const RTensor& x);
RTensor reduce_max_spatial(const RTensor& x);
RTensor reduce_mean_channels(const RTensor& x);
RTensor reduce_max_channels(const RTensor& x);
double sum(const RTensor& x);
double mean(const RTensor& x);

// --- losses ------------------------------------------------------------------------

double bce_loss(const RTensor& pred, const RTensor& target, double clamp = 1e-7);
double dice_loss(const RTensor& pred, const RTensor& target, double eps = 1e-6);

// --- block mirrors ---------------------------------------------------------------------

using RefParams = std::map<std::string, RTensor>;

/// Snapshot of every registered parameter as an RTensor.
RefParams snapshot_params(const ParameterStore& params);

// Each mirror reads parameter VALUES from the snapshot by hierarchical name
// (the same names build_model registers) and STRUCTURE (conv specs, padding,
// crops) from the production parameter structs where one exists. In Train
// mode batch norm uses biased batch statistics, matching what the tape
// differentiates; in Eval mode it normalizes with the running statistics held
// by the parameter struct (constants as far as the check is concerned).
RTensor ref_conv_bn(const RTensor& x, const ConvBnParams& cp, const RefParams& p,
                    const std::string& prefix, Mode mode = Mode::Train);
RTensor ref_se(const RTensor& x, const RefParams& p, const std::string& prefix);
RTensor ref_cbam(const RTensor& x, const RefParams& p, const std::string& prefix);
RTensor ref_gate(const RTensor& skip, const RTensor& gate, const RefParams& p,
                 const std::string& prefix);
RTensor ref_attention(const RTensor& q, const RTensor& k, const RTensor& v);
RTensor ref_mhsa(const RTensor& x, const RefParams& p, const std::string& prefix, int heads);
RTensor ref_transformer(const RTensor& x, const RefParams& p, const std::string& prefix, int heads);
RTensor ref_resnext(const RTensor& x, const RefParams& p, const std::string& prefix);
RTensor ref_residual(const RTensor& x, const ResidualBlockParams& b, const RefParams& p,
                     const std::string& prefix, Mode mode = Mode::Train);

/// Mirrors model_forward in double precision (dropout-free), reading
/// parameter values from the snapshot and structure from the model. Input is
/// [N,3,H,W]. The end-to-end gradient check runs it in Eval mode: train-mode
/// batch statistics over the innermost stage's 2x2 maps amplify
/// single-precision forward roundoff ~1000x, which would swamp the comparison
/// without exercising any extra wiring (the batch-statistics backward is
/// covered by the block-level entries).
RTensor model_forward(const Model& m, const RefParams& p, const RTensor& x,
                      Mode mode = Mode::Train);

// --- gradient checking ------------------------------------------------------------------

struct GradCheckOptions {
    double tol = 1e-4;
    double h = 1e-3;                      // central-difference step
    std::int64_t sample_total = -1;       // >0: check that many sampled elements overall
    bool flip_sign = false;               // harness self-test: negates analytic grads
    bool plain_sum = false;               // loss = sum(out) instead of a +-1 projection
    std::uint64_t seed = 0x9dc5;          // projection + sampling randomness
};

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    double tol = 1e-4;
    std::int64_t checked = 0;
    std::int64_t skipped = 0;  // coordinates straddling a kink at the FD scale
    bool pass() const { return checked > 0 && skipped * 10 <= checked && max_rel_err < tol; }
};

/// Compares tape gradients of sum(proj * prod_forward()) against central
/// differences of the double-precision ref_forward, with
/// rel = |analytic - fd| / (|analytic| + |fd| + 1e-8).
///
/// A coordinate that fails the tolerance is classified before it counts as a
/// failure. It is skipped when (a) its gradient is below the resolution a
/// single-precision tape can represent for that leaf, (b) the analytic value
/// matches a Richardson-extrapolated one-sided quotient — i.e. the point sits
/// at or within h of a relu kink or argmax tie and the tape reports a valid
/// one-sided derivative — or (c) the h and h/2 quotients disagree, meaning the
/// quotient itself is not measuring a derivative. A wrong formula or sign
/// matches neither one-sided quotient, stays step-consistent, and sits above
/// the resolution floor, so real defects still fail.
GradCheckReport check_gradients(const std::string& name, std::vector<Tensor> leaves,
                                const std::function<Tensor()>& prod_forward,
                                const std::function<RTensor(const std::vector<RTensor>&)>& ref_forward,
                                const GradCheckOptions& opts);

struct SuiteOptions {
    std::string inject_fault;   // block name whose analytic grads get sign-flipped
    bool include_model = true;  // the end-to-end check costs the most
};

/// The full fixed-seed gradient suite: every op and block on three shapes
/// each (tol 1e-4), plus the end-to-end compact model (20 sampled
/// parameters, tol 1e-3).
std::vector<GradCheckReport> run_gradcheck_suite(const SuiteOptions& opts);

}  // namespace hseg::refmath
