#include <cstdio>
#include <map>
#include <exception>
#include <functional>

#include <CLI11.hpp>

#include "cli.hpp"
#include "hybridseg/errors.hpp"

using namespace hseg;
using namespace hseg::cli;

int main(int argc, char** argv) {
    CLI::App app{"MRI tumor segmentation pipeline: DICOM ingestion, synthetic data, "
                 "augmentation, training, evaluation, prediction, and training plots"};
    app.require_subcommand(1);

    std::function<int()> run;

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "Pair a DICOM image series with a mask series "
                                                  "into a dataset archive");
    c_ingest->add_option("--dicom-dir", ingest.dicom_dir, "Directory of image slices")->required();
    c_ingest->add_option("--mask-dir", ingest.mask_dir, "Directory of mask slices")->required();
    c_ingest->add_option("--out", ingest.out, "Output dataset archive")->required();
    c_ingest->add_option("--size", ingest.size, "Square slice size after resize");
    c_ingest->add_option("--modality", ingest.modality, "Overrides the modality tag");
    c_ingest->callback([&] { run = [&] { return cmd_ingest(ingest); }; });

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic MRI-like dataset archive");
    c_synth->add_option("--count", synth.count, "Number of samples");
    c_synth->add_option("--size", synth.size, "Square slice size");
    c_synth->add_option("--seed", synth.seed, "Generator seed");
    c_synth->add_option("--tumor-prob", synth.tumor_prob, "Probability a sample carries a tumor");
    c_synth->add_option("--out", synth.out, "Output dataset archive")->required();
    c_synth->callback([&] { run = [&] { return cmd_synth(synth); }; });

    AugmentArgs augment;
    auto* c_augment = app.add_subcommand("augment", "Expand a dataset archive with seeded "
                                                    "augmentations (originals kept first)");
    c_augment->add_option("--in", augment.in, "Input dataset archive")->required();
    c_augment->add_option("--out", augment.out, "Output dataset archive")->required();
    c_augment->add_option("--seed", augment.seed, "Augmentation seed");
    c_augment->add_option("--multiplier", augment.multiplier, "Output count = ceil(multiplier * inputs)");
    c_augment->callback([&] { run = [&] { return cmd_augment(augment); }; });

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Train a model; flags win over --config file "
                                                "entries (`key = value`, `#` comments)");
    auto* o_data = c_train->add_option("--data", train.data, "Training dataset archive");
    auto* o_val = c_train->add_option("--val", train.val, "Validation dataset archive; when "
                                                          "absent a per-patient split is held out");
    c_train->add_option("--config", train.config_file, "Config file layered under the flags");
    auto* o_ckdir = c_train->add_option("--checkpoint-dir", train.checkpoint_dir,
                                        "Receives ckpt_<epoch>.nta, best.nta, metrics.csv");
    auto* o_resume = c_train->add_option("--resume", train.resume,
                                         "Checkpoint file (or run directory) to continue from");
    auto* o_arch = c_train->add_option("--arch", train.arch,
                                       "full | desk | baseline | bottleneck_only | hybrid");
    auto* o_epochs = c_train->add_option("--epochs", train.epochs, "Total epochs");
    auto* o_bs = c_train->add_option("--batch-size", train.batch_size, "Batch size");
    auto* o_ckev = c_train->add_option("--checkpoint-every", train.checkpoint_every,
                                       "Epochs between checkpoints (0 = final only)");
    auto* o_lr = c_train->add_option("--lr", train.lr, "Adam learning rate");
    auto* o_lambda = c_train->add_option("--lambda", train.lambda, "Dice weight in the hybrid loss");
    auto* o_seed = c_train->add_option("--seed", train.seed, "Run seed");
    auto* o_vf = c_train->add_option("--val-fraction", train.val_fraction,
                                     "Holdout fraction when --val is absent");
    c_train->callback([&] {
        run = [&] {
            if (!train.config_file.empty()) {
                const auto entries = parse_config_file(train.config_file, train_config_keys());
                auto flag_given = [&](const std::string& key) {
                    const std::map<std::string, CLI::Option*> by_key{
                        {"data", o_data},          {"val", o_val},
                        {"checkpoint-dir", o_ckdir}, {"resume", o_resume},
                        {"arch", o_arch},          {"epochs", o_epochs},
                        {"batch-size", o_bs},      {"checkpoint-every", o_ckev},
                        {"lr", o_lr},              {"lambda", o_lambda},
                        {"seed", o_seed},          {"val-fraction", o_vf},
                    };
                    return by_key.at(key)->count() > 0;
                };
                for (const auto& e : entries) {
                    if (!flag_given(e.key)) apply_train_config_entry(train, e);
                }
            }
            if (train.data.empty()) throw UsageError("--data is required (flag or config file)");
            if (train.checkpoint_dir.empty()) {
                throw UsageError("--checkpoint-dir is required (flag or config file)");
            }
            return cmd_train(train);
        };
    });

    EvalArgs eval;
    auto* c_eval = app.add_subcommand("eval", "Evaluate weights on a dataset archive; per-sample "
                                              "metrics plus a mean row go to --out");
    c_eval->add_option("--data", eval.data, "Dataset archive")->required();
    c_eval->add_option("--weights", eval.weights, "Weights or checkpoint archive")->required();
    c_eval->add_option("--out", eval.out, "Per-sample metrics CSV")->required();
    c_eval->add_option("--batch-size", eval.batch_size, "Evaluation batch size");
    c_eval->callback([&] { run = [&] { return cmd_eval(eval); }; });

    PredictArgs predict;
    auto* c_predict = app.add_subcommand("predict", "Segment one PGM slice into a binary PGM mask");
    c_predict->add_option("--image", predict.image, "Input 8-bit P5 PGM")->required();
    c_predict->add_option("--weights", predict.weights, "Weights or checkpoint archive")->required();
    c_predict->add_option("--out", predict.out, "Output 8-bit P5 PGM mask")->required();
    c_predict->callback([&] { run = [&] { return cmd_predict(predict); }; });

    PlotArgs plot;
    auto* c_plot = app.add_subcommand("plot", "Render metrics.csv into loss / dice+iou / "
                                              "precision+recall SVG charts");
    c_plot->add_option("--csv", plot.csv, "metrics.csv from a training run")->required();
    c_plot->add_option("--out", plot.out_dir, "Output directory for the SVG files")->required();
    c_plot->callback([&] { run = [&] { return cmd_plot(plot); }; });

    GradcheckArgs gradcheck;
    auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite over every "
                                                 "block and the desk-config model");
    c_gc->add_option("--inject-fault", gradcheck.inject_fault,
                     "Sign-flip the named entry's analytic gradients (self-test hook)");
    c_gc->add_flag("--blocks-only", gradcheck.blocks_only, "Skip the end-to-end model entry");
    c_gc->callback([&] { run = [&] { return cmd_gradcheck(gradcheck); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints help or the parse error
        return code == 0 ? 0 : 2;
    }

    try {
        return run();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
