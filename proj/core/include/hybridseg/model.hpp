#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hybridseg/blocks.hpp"
#include "hybridseg/nta.hpp"
#include "hybridseg/rng.hpp"
#include "hybridseg/tensor.hpp"

namespace hseg {

// --- configuration -----------------------------------------------------------

enum class ModelVariant { Baseline, BottleneckOnly, Hybrid };

std::string variant_name(ModelVariant v);
ModelVariant variant_from_name(const std::string& name);  // ConfigError on unknown

struct ModelConfig {
    int input_size = 512;  // square inputs; H == W
    std::array<int, 4> tap_channels{64, 256, 512, 1024};
    std::array<int, 3> stage_blocks{3, 4, 6};
    int d_model = 1024;
    int bottleneck_blocks = 4;
    int heads = 8;
    int ffn_dim = 1024;
    float dropout = 0.1f;
    std::array<int, 4> decoder_channels{512, 256, 64, 32};
    bool use_se = true;
    bool use_cbam = true;
    bool use_gates = true;
    bool use_resnext = true;
    bool use_bottleneck = true;
    bool positional_embedding = true;

    static ModelConfig full(ModelVariant v = ModelVariant::Hybrid);
    /// Laptop-scale preset: 64x64 inputs, taps 8/32/64/128.
    static ModelConfig desk(ModelVariant v = ModelVariant::Hybrid);

    void apply_variant(ModelVariant v);
    /// Throws ConfigError naming the violated constraint.
    void validate() const;
    /// Stable textual form; feeds the training config hash and archives.
    std::string canonical_string() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);  // ParseError on bad input

    int token_count() const { return (input_size / 16) * (input_size / 16); }
    int bottleneck_grid() const { return input_size / 16; }
};

// --- parameter store ----------------------------------------------------------

class ParameterStore {
  public:
    struct Entry {
        Tensor tensor;
        bool trainable = true;
    };

    /// Registers a tensor under a unique hierarchical name and returns it.
    /// Trainable entries require gradients; buffers (e.g. running stats) do not.
    Tensor add(const std::string& name, Tensor t, bool trainable = true);
    bool contains(const std::string& name) const;
    Tensor get(const std::string& name) const;  // UsageError if absent
    const std::map<std::string, Entry>& entries() const { return entries_; }

    /// Name-sorted trainable parameters; the optimizer's iteration order.
    std::vector<std::pair<std::string, Tensor>> trainable() const;
    std::int64_t parameter_count(bool trainable_only = true) const;
    void zero_grads() const;

  private:
    std::map<std::string, Entry> entries_;
};

// --- model --------------------------------------------------------------------

struct ResidualBlockParams {
    ConvBnParams c1, c2, c3;  // 1x1 reduce, 3x3 (stride here), 1x1 expand
    std::optional<ConvBnParams> down;
};

struct DecoderStageParams {
    Tensor up_w;  // transpose-conv weight [C_in, C_out, 2, 2]
    std::optional<CbamParams> skip_cbam;
    std::optional<AttnGateParams> gate;
    ConvBnParams fuse;
    std::optional<SeBlockParams> se;
    std::optional<ResNeXtBlockParams> resnext;
    bool has_skip = true;
};

struct Model {
    ModelConfig config;
    ParameterStore params;

    ConvBnParams stem;
    std::vector<std::vector<ResidualBlockParams>> stages;  // 3 stages
    std::vector<SeBlockParams> tap_se;                     // per tap when enabled
    std::vector<CbamParams> tap_cbam;
    Tensor pos_embedding;  // defined only when enabled
    std::vector<TransformerBlockParams> bottleneck;
    std::vector<DecoderStageParams> decoder;  // 4 stages
    Tensor head_w, head_b;
};

/// Builds and He-initializes all parameters for the config; registration
/// order (and so the rng draw order) is fixed, making builds reproducible.
Model build_model(const ModelConfig& config, Rng& rng);

/// Returns the four encoder taps, shallow to deep.
std::array<Tensor, 4> encoder_forward(const Model& m, const Tensor& x, Mode mode);
/// Tokenizes the deepest tap, runs the transformer stack, restores the map.
Tensor bottleneck_forward(const Model& m, const Tensor& tap4, Rng& rng, Mode mode);
Tensor decoder_forward(const Model& m, const Tensor& bottom, const std::array<Tensor, 4>& taps,
                       Mode mode);
/// End to end: accepts [3,H,W] or [N,3,H,W]; mask logits in (0,1) with
/// matching rank ([1,H,W] or [N,1,H,W]).
Tensor model_forward(const Model& m, const Tensor& x, Rng& rng, Mode mode);

// --- weight import -------------------------------------------------------------

enum class ImportPolicy { Strict, ByNameSubset };

struct ImportReport {
    std::vector<std::string> loaded;
    std::vector<std::string> skipped;     // archive entries without a matching tensor
    std::vector<std::string> mismatched;  // name matched, shape did not (subset mode)
};

/// Copies archive entries under `model/` into the store. Strict mode requires
/// an exact name and shape correspondence and throws LoadError otherwise.
ImportReport import_weights(ParameterStore& params, const NtaArchive& archive, ImportPolicy policy);

/// Serializes every store entry under `model/` plus the config under `meta/config`.
NtaArchive export_weights(const Model& m);

std::uint64_t fnv1a64(const std::string& text);

}  // namespace hseg
