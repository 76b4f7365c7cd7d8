#pragma once

#include <map>
#include <string>
#include <vector>

#include "hybridseg/data.hpp"
#include "hybridseg/model.hpp"
#include "hybridseg/rng.hpp"

namespace hseg {

struct TrainConfig {
    int batch_size = 8;
    int epochs = 29;
    float learning_rate = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float lambda = 1.0f;  // dice weight in the hybrid loss
    std::uint64_t seed = 0;
    int checkpoint_every = 1;  // epochs between checkpoints; 0 = final only
    bool shuffle = true;

    void validate() const;
    /// Hash over everything that must match for a run to be resumable
    /// (model config plus optimizer/loss/seed settings); epochs excluded so
    /// a resumed run may extend training.
    std::uint64_t config_hash(const ModelConfig& model_cfg) const;
};

struct AdamState {
    std::map<std::string, Tensor> m, v;  // first/second moments per parameter
    std::int64_t t = 0;                  // completed steps
};

AdamState make_adam_state(const ParameterStore& params);

/// One bias-corrected Adam update over all trainable parameters in name
/// order; element math runs in f64 and stores back to f32. Throws UsageError
/// naming the first parameter that has no gradient.
void adam_step(ParameterStore& params, AdamState& state, const TrainConfig& cfg);

struct EpochStats {
    double loss = 0.0, bce = 0.0, dice_loss = 0.0;  // sample-weighted means
};

struct EvalStats {
    double dice = 0.0, iou = 0.0, precision = 0.0, recall = 0.0;  // per-slice means
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    EpochStats train;
    EvalStats val;
};

/// One pass over the data: optional Fisher-Yates shuffle from the rng, fixed
/// batch assembly (last partial batch kept), forward/backward/adam per
/// batch. A non-finite loss aborts with the epoch, batch, and components.
EpochStats train_epoch(Model& model, const std::vector<SliceSample>& data, const TrainConfig& cfg,
                       Rng& rng, AdamState& state, int epoch_index);

/// Deterministic eval-mode metrics, per slice then averaged; consumes no rng.
EvalStats evaluate(const Model& model, const std::vector<SliceSample>& data, int batch_size = 8);

std::string history_header();
std::string history_row(const EpochRecord& r);

void save_checkpoint(const std::string& path, const Model& m, const AdamState& state, int epoch,
                     const Rng& rng, const std::string& history_csv, std::uint64_t config_hash,
                     double best_dice);

struct CheckpointState {
    AdamState state;
    int epoch = 0;
    Rng::State rng_state{};
    std::string history_csv;
    std::uint64_t config_hash = 0;
    double best_dice = -1.0;
};

/// Restores weights into the model (strict) and returns the training state.
CheckpointState load_checkpoint(const std::string& path, Model& m);

struct FitOptions {
    std::string checkpoint_dir;  // receives ckpt_<epoch>.nta, latest, best.nta, metrics.csv
    std::string resume_from;     // checkpoint path; empty = fresh run
};

struct FitResult {
    std::vector<EpochRecord> history;  // epochs run in this invocation
    std::string history_csv;           // full history including resumed rows
    double best_dice = -1.0;
    int final_epoch = 0;
};

/// Full training loop with per-epoch validation, CSV history, periodic
/// checkpoints (plus a `latest` marker), and best-by-validation-dice
/// weights. Resuming from epoch k continues bit-exactly: a 3-epoch run plus
/// a 2-epoch resume equals one 5-epoch run, history bytes included. Throws
/// ConfigError if the resumed checkpoint's config hash disagrees.
FitResult fit(Model& m, const std::vector<SliceSample>& train_set,
              const std::vector<SliceSample>& val_set, const TrainConfig& cfg,
              const FitOptions& opts);

}  // namespace hseg
