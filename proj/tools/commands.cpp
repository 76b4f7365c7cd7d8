#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hybridseg/data.hpp"
#include "hybridseg/errors.hpp"
#include "hybridseg/image.hpp"
#include "hybridseg/metrics.hpp"
#include "hybridseg/model.hpp"
#include "hybridseg/trainer.hpp"
#include "plot.hpp"
#include "refmath.hpp"

namespace fs = std::filesystem;

namespace hseg::cli {

namespace {

void ensure_parent_dir(const std::string& path) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void require_file(const std::string& path, const std::string& flag) {
    if (!fs::is_regular_file(path)) {
        throw UsageError(flag + " '" + path + "' is not a readable file");
    }
}

Model model_from_weights(const std::string& path) {
    require_file(path, "--weights");
    const NtaArchive a = NtaArchive::read_file(path);
    if (!a.contains("meta/config")) {
        throw LoadError("weights '" + path + "' carry no embedded model configuration");
    }
    ModelConfig cfg = ModelConfig::from_json(a.get("meta/config").as_string());
    cfg.validate();
    Rng rng(0);  // immediately overwritten by the import
    Model m = build_model(cfg, rng);
    import_weights(m.params, a, ImportPolicy::Strict);
    return m;
}

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

// --- ingest -----------------------------------------------------------------------

int cmd_ingest(const IngestArgs& a) {
    if (!fs::is_directory(a.dicom_dir)) {
        throw UsageError("--dicom-dir '" + a.dicom_dir + "' is not a directory");
    }
    if (!fs::is_directory(a.mask_dir)) {
        throw UsageError("--mask-dir '" + a.mask_dir + "' is not a directory");
    }
    if (a.size < 32) throw UsageError("--size must be at least 32");

    const DicomSeries images = read_dicom_series(a.dicom_dir);
    const DicomSeries masks = read_dicom_series(a.mask_dir);
    if (images.depth != masks.depth || images.rows != masks.rows || images.cols != masks.cols) {
        throw UsageError("image series is " + std::to_string(images.depth) + "x" +
                         std::to_string(images.rows) + "x" + std::to_string(images.cols) +
                         " but mask series is " + std::to_string(masks.depth) + "x" +
                         std::to_string(masks.rows) + "x" + std::to_string(masks.cols));
    }

    const Volume image = normalize_volume(volume_from_series(images));
    const Volume mask = volume_from_series(masks);

    SliceMeta meta;
    meta.patient = images.patient_id.empty() ? "anon" : images.patient_id;
    meta.modality = !a.modality.empty() ? a.modality
                   : !images.modality.empty() ? images.modality
                                              : "MR";
    meta.id_prefix = meta.patient + "_z";

    const auto samples = slice_and_pair(image, mask, meta, a.size);
    ensure_parent_dir(a.out);
    save_dataset(a.out, samples);
    std::printf("wrote %zu slices (%s, %dx%d) to %s\n", samples.size(), meta.modality.c_str(),
                a.size, a.size, a.out.c_str());
    return 0;
}

// --- synth ------------------------------------------------------------------------

int cmd_synth(const SynthArgs& a) {
    if (a.count < 1) throw UsageError("--count must be positive");
    if (a.size < 32) throw UsageError("--size must be at least 32");
    if (!(a.tumor_prob >= 0.0 && a.tumor_prob <= 1.0)) {
        throw UsageError("--tumor-prob must lie in [0, 1]");
    }
    const auto samples = generate_synthetic(a.count, a.size, a.seed, a.tumor_prob);
    ensure_parent_dir(a.out);
    save_dataset(a.out, samples);
    std::printf("wrote %zu synthetic samples (%dx%d, seed %llu) to %s\n", samples.size(), a.size,
                a.size, static_cast<unsigned long long>(a.seed), a.out.c_str());
    return 0;
}

// --- augment ----------------------------------------------------------------------

int cmd_augment(const AugmentArgs& a) {
    require_file(a.in, "--in");
    if (!(a.multiplier >= 1.0)) throw UsageError("--multiplier must be at least 1");
    const auto samples = load_dataset(a.in);
    AugmentPlan plan;
    plan.multiplier = a.multiplier;
    plan.seed = a.seed;
    const auto expanded = build_augmented_dataset(samples, plan);
    ensure_parent_dir(a.out);
    save_dataset(a.out, expanded);
    std::printf("expanded %zu samples to %zu (multiplier %.4g, seed %llu) at %s\n", samples.size(),
                expanded.size(), a.multiplier, static_cast<unsigned long long>(a.seed),
                a.out.c_str());
    return 0;
}

// --- train ------------------------------------------------------------------------

namespace {

ModelConfig config_for_arch(const std::string& arch) {
    if (arch == "full") return ModelConfig::full(ModelVariant::Hybrid);
    if (arch == "desk" || arch == "hybrid") return ModelConfig::desk(ModelVariant::Hybrid);
    if (arch == "baseline") return ModelConfig::desk(ModelVariant::Baseline);
    if (arch == "bottleneck_only") return ModelConfig::desk(ModelVariant::BottleneckOnly);
    throw ConfigError("unknown arch '" + arch +
                      "' (choices: full, desk, baseline, bottleneck_only, hybrid)");
}

std::string resolve_resume(const std::string& resume) {
    if (resume.empty() || fs::is_regular_file(resume)) return resume;
    if (fs::is_directory(resume)) {  // directory: follow its `latest` marker
        std::ifstream marker(fs::path(resume) / "latest");
        std::string name;
        if (marker >> name) return (fs::path(resume) / name).string();
        throw UsageError("--resume directory '" + resume + "' has no readable 'latest' marker");
    }
    throw UsageError("--resume '" + resume + "' does not exist");
}

}  // namespace

int cmd_train(const TrainArgs& a) {
    require_file(a.data, "--data");
    if (a.checkpoint_dir.empty()) throw UsageError("--checkpoint-dir is required");

    ModelConfig mcfg = config_for_arch(a.arch);
    mcfg.validate();

    TrainConfig tcfg;
    tcfg.batch_size = a.batch_size;
    tcfg.epochs = a.epochs;
    tcfg.learning_rate = a.lr;
    tcfg.lambda = a.lambda;
    tcfg.seed = a.seed;
    tcfg.checkpoint_every = a.checkpoint_every;
    tcfg.validate();

    auto train_set = load_dataset(a.data);
    std::vector<SliceSample> val_set;
    if (!a.val.empty()) {
        require_file(a.val, "--val");
        val_set = load_dataset(a.val);
    } else {
        if (!(a.val_fraction > 0.0 && a.val_fraction < 1.0)) {
            throw UsageError("--val-fraction must lie in (0, 1) when --val is not given");
        }
        auto [tr, va] = split_train_val(train_set, a.val_fraction, derive_seed(a.seed, 2));
        train_set = std::move(tr);
        val_set = std::move(va);
    }
    if (train_set.empty()) throw UsageError("training set is empty");
    if (val_set.empty()) throw UsageError("validation set is empty");

    Rng build_rng(derive_seed(a.seed, 1));
    Model model = build_model(mcfg, build_rng);

    FitOptions opts;
    opts.checkpoint_dir = a.checkpoint_dir;
    opts.resume_from = resolve_resume(a.resume);

    const FitResult result = fit(model, train_set, val_set, tcfg, opts);
    std::printf("trained %s to epoch %d: best val dice %s; metrics at %s/metrics.csv\n",
                a.arch.c_str(), result.final_epoch, fmt6(result.best_dice).c_str(),
                a.checkpoint_dir.c_str());
    return 0;
}

// --- eval -------------------------------------------------------------------------

int cmd_eval(const EvalArgs& a) {
    require_file(a.data, "--data");
    if (a.batch_size < 1) throw UsageError("--batch-size must be positive");
    Model model = model_from_weights(a.weights);
    const auto samples = load_dataset(a.data);
    if (samples.empty()) throw UsageError("dataset '" + a.data + "' holds no samples");

    std::ostringstream csv;
    csv << "id,dice,iou,precision,recall\n";
    NoGradGuard guard;
    Rng unused(0);
    for (const auto& s : samples) {
        const Tensor pred = binarize(model_forward(model, s.image, unused, Mode::Eval));
        const ConfusionCounts c = confusion(pred, s.mask);
        csv << s.id << ',' << fmt6(dice_score(c)) << ',' << fmt6(iou_score(c)) << ','
            << fmt6(precision_score(c)) << ',' << fmt6(recall_score(c)) << '\n';
    }
    const EvalStats agg = evaluate(model, samples, a.batch_size);
    csv << "mean," << fmt6(agg.dice) << ',' << fmt6(agg.iou) << ',' << fmt6(agg.precision) << ','
        << fmt6(agg.recall) << '\n';

    ensure_parent_dir(a.out);
    std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + a.out + "' for writing");
    f << csv.str();
    if (!f) throw IoError("failed writing '" + a.out + "'");

    std::printf("evaluated %zu samples: dice %s iou %s precision %s recall %s -> %s\n",
                samples.size(), fmt6(agg.dice).c_str(), fmt6(agg.iou).c_str(),
                fmt6(agg.precision).c_str(), fmt6(agg.recall).c_str(), a.out.c_str());
    return 0;
}

// --- predict ----------------------------------------------------------------------

int cmd_predict(const PredictArgs& a) {
    require_file(a.image, "--image");
    Model model = model_from_weights(a.weights);

    const Tensor gray = read_pgm(a.image);  // [1,H,W]
    const std::int64_t h = gray.shape()[1], w = gray.shape()[2];
    const int s = model.config.input_size;
    if (h != s || w != s) {
        throw UsageError("--image is " + std::to_string(h) + "x" + std::to_string(w) +
                         " but the model expects " + std::to_string(s) + "x" + std::to_string(s));
    }

    NoGradGuard guard;
    Rng unused(0);
    const Tensor input = concat({gray, gray, gray}, 0);  // [3,S,S]
    const Tensor mask = binarize(model_forward(model, input, unused, Mode::Eval));
    ensure_parent_dir(a.out);
    write_pgm(a.out, mask);
    std::printf("wrote %dx%d mask to %s\n", s, s, a.out.c_str());
    return 0;
}

// --- plot -------------------------------------------------------------------------

namespace {

struct Csv {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::size_t col(const std::string& name) const {
        const auto it = std::find(columns.begin(), columns.end(), name);
        if (it == columns.end()) throw ParseError("metrics CSV lacks a '" + name + "' column");
        return static_cast<std::size_t>(it - columns.begin());
    }
    std::vector<double> series(const std::string& name) const {
        const std::size_t c = col(name);
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r[c]);
        return out;
    }
};

Csv read_metrics_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open '" + path + "'");
    Csv csv;
    std::string line;
    if (!std::getline(f, line) || line.empty()) throw UsageError("'" + path + "' is empty");
    std::stringstream hs(line);
    for (std::string cell; std::getline(hs, cell, ',');) csv.columns.push_back(cell);

    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream rs(line);
        std::vector<double> row;
        for (std::string cell; std::getline(rs, cell, ',');) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
                if (used != cell.size()) throw std::invalid_argument("");
            } catch (...) {
                throw ParseError(path + ":" + std::to_string(lineno) + ": non-numeric cell '" +
                                 cell + "'");
            }
        }
        if (row.size() != csv.columns.size()) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(csv.columns.size()) + " cells, got " +
                             std::to_string(row.size()));
        }
        csv.rows.push_back(std::move(row));
    }
    if (csv.rows.empty()) throw UsageError("'" + path + "' has no data rows");
    return csv;
}

}  // namespace

int cmd_plot(const PlotArgs& a) {
    const Csv csv = read_metrics_csv(a.csv);
    const std::vector<double> epochs = csv.series("epoch");
    fs::create_directories(a.out_dir);
    const fs::path dir(a.out_dir);

    write_line_chart((dir / "loss.svg").string(), "Training loss", epochs,
                     {{"loss", "#1f77b4", csv.series("loss")},
                      {"bce", "#ff7f0e", csv.series("bce")},
                      {"dice loss", "#2ca02c", csv.series("dice_loss")}});
    write_line_chart((dir / "dice_iou.svg").string(), "Validation Dice / IoU", epochs,
                     {{"dice", "#1f77b4", csv.series("dice")},
                      {"iou", "#ff7f0e", csv.series("iou")}});
    write_line_chart((dir / "precision_recall.svg").string(), "Validation precision / recall",
                     epochs,
                     {{"precision", "#1f77b4", csv.series("precision")},
                      {"recall", "#ff7f0e", csv.series("recall")}});
    std::printf("wrote loss.svg, dice_iou.svg, precision_recall.svg to %s\n", a.out_dir.c_str());
    return 0;
}

// --- gradcheck ----------------------------------------------------------------------

int cmd_gradcheck(const GradcheckArgs& a) {
    refmath::SuiteOptions opts;
    opts.inject_fault = a.inject_fault;
    opts.include_model = !a.blocks_only;

    const auto reports = refmath::run_gradcheck_suite(opts);
    int failing = 0;
    for (const auto& r : reports) {
        const bool ok = r.pass();
        failing += ok ? 0 : 1;
        std::printf("%-22s max rel err %.3e  (checked %lld, skipped %lld, tol %.0e) %s\n",
                    r.name.c_str(), r.max_rel_err, static_cast<long long>(r.checked),
                    static_cast<long long>(r.skipped), r.tol, ok ? "pass" : "FAIL");
    }
    if (failing) {
        std::printf("%d of %zu entries FAILED\n", failing, reports.size());
        return 1;
    }
    std::printf("all %zu entries passed\n", reports.size());
    return 0;
}

}  // namespace hseg::cli
