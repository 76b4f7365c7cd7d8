#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hseg::cli {

// --- config file ------------------------------------------------------------------

struct ConfigEntry {
    std::string key, value;
    int line = 0;
};

/// Parses a line-based `key = value` file (`#` starts a comment, blank lines
/// ignored). Throws ConfigError naming the line for anything malformed or
/// any key outside `known_keys`.
std::vector<ConfigEntry> parse_config_file(const std::string& path,
                                           const std::vector<std::string>& known_keys);

// --- subcommands ------------------------------------------------------------------

struct IngestArgs {
    std::string dicom_dir, mask_dir, out;
    std::string modality;  // overrides the series tag when set
    int size = 512;
};
int cmd_ingest(const IngestArgs& a);

struct SynthArgs {
    std::string out;
    int count = 512;
    int size = 64;
    std::uint64_t seed = 0;
    double tumor_prob = 1.0;
};
int cmd_synth(const SynthArgs& a);

struct AugmentArgs {
    std::string in, out;
    std::uint64_t seed = 0;
    double multiplier = 6.08;
};
int cmd_augment(const AugmentArgs& a);

struct TrainArgs {
    std::string data, val, config_file, checkpoint_dir, resume;
    std::string arch = "desk";
    int epochs = 29;
    int batch_size = 8;
    int checkpoint_every = 1;
    float lr = 1e-4f;
    float lambda = 1.0f;
    std::uint64_t seed = 0;
    double val_fraction = 0.2;  // used only when --val is absent
};
/// Keys accepted in --config files; identical to the long flag names.
const std::vector<std::string>& train_config_keys();
/// Applies one config-file entry to the args (string -> typed field).
void apply_train_config_entry(TrainArgs& a, const ConfigEntry& e);
int cmd_train(const TrainArgs& a);

struct EvalArgs {
    std::string data, weights, out;
    int batch_size = 8;
};
int cmd_eval(const EvalArgs& a);

struct PredictArgs {
    std::string image, weights, out;
};
int cmd_predict(const PredictArgs& a);

struct PlotArgs {
    std::string csv, out_dir;
};
int cmd_plot(const PlotArgs& a);

struct GradcheckArgs {
    std::string inject_fault;  // entry whose analytic gradients get sign-flipped
    bool blocks_only = false;
};
int cmd_gradcheck(const GradcheckArgs& a);

}  // namespace hseg::cli
