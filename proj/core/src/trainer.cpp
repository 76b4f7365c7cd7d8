#include "hybridseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "hybridseg/errors.hpp"
#include "hybridseg/loss.hpp"
#include "hybridseg/metrics.hpp"
#include "hybridseg/nta.hpp"

namespace hseg {

namespace {

std::string fmt6(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::int64_t bits_of(double v) {
    std::int64_t out;
    std::memcpy(&out, &v, 8);
    return out;
}

double double_of(std::int64_t bits) {
    double out;
    std::memcpy(&out, &bits, 8);
    return out;
}

/// Stacks sample images/masks (indices [begin, end)) into one batch pair.
std::pair<Tensor, Tensor> make_batch(const std::vector<SliceSample>& data,
                                     const std::vector<std::int64_t>& order, std::size_t begin,
                                     std::size_t end) {
    const std::int64_t b = static_cast<std::int64_t>(end - begin);
    const Shape& ishape = data[static_cast<std::size_t>(order[begin])].image.shape();
    const Shape& mshape = data[static_cast<std::size_t>(order[begin])].mask.shape();
    const std::int64_t isize = shape_numel(ishape);
    const std::int64_t msize = shape_numel(mshape);

    std::vector<float> imgs(static_cast<std::size_t>(b * isize));
    std::vector<float> msks(static_cast<std::size_t>(b * msize));
    for (std::size_t i = begin; i < end; ++i) {
        const auto& s = data[static_cast<std::size_t>(order[i])];
        if (s.image.shape() != ishape || s.mask.shape() != mshape) {
            throw DimensionError("batch assembly: sample '" + s.id + "' has a different shape");
        }
        const auto& iv = s.image.node()->value;
        const auto& mv = s.mask.node()->value;
        std::copy(iv.begin(), iv.end(),
                  imgs.begin() + static_cast<std::ptrdiff_t>((i - begin) * iv.size()));
        std::copy(mv.begin(), mv.end(),
                  msks.begin() + static_cast<std::ptrdiff_t>((i - begin) * mv.size()));
    }
    Tensor bi = Tensor::from_data({b, ishape[0], ishape[1], ishape[2]}, std::move(imgs));
    Tensor bm = Tensor::from_data({b, mshape[0], mshape[1], mshape[2]}, std::move(msks));
    return {bi, bm};
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train config: batch_size must be positive");
    if (epochs < 0) throw ConfigError("train config: epochs must be non-negative");
    if (!(learning_rate > 0.0f)) throw ConfigError("train config: learning_rate must be positive");
    if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f)) {
        throw ConfigError("train config: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0f)) throw ConfigError("train config: eps must be positive");
    if (!(lambda >= 0.0f)) throw ConfigError("train config: lambda must be non-negative");
    if (checkpoint_every < 0) throw ConfigError("train config: checkpoint_every must be >= 0");
}

std::uint64_t TrainConfig::config_hash(const ModelConfig& model_cfg) const {
    std::string text = model_cfg.canonical_string();
    char buf[160];
    std::snprintf(buf, sizeof(buf), "|batch=%d|lr=%.9g|b1=%.9g|b2=%.9g|eps=%.9g|lambda=%.9g|seed=%llu|shuffle=%d",
                  batch_size, static_cast<double>(learning_rate), static_cast<double>(beta1),
                  static_cast<double>(beta2), static_cast<double>(eps), static_cast<double>(lambda),
                  static_cast<unsigned long long>(seed), shuffle ? 1 : 0);
    text += buf;
    return fnv1a64(text);
}

AdamState make_adam_state(const ParameterStore& params) {
    AdamState st;
    for (const auto& [name, tensor] : params.trainable()) {
        st.m.emplace(name, Tensor::zeros(tensor.shape()));
        st.v.emplace(name, Tensor::zeros(tensor.shape()));
    }
    return st;
}

void adam_step(ParameterStore& params, AdamState& state, const TrainConfig& cfg) {
    state.t += 1;
    const double b1 = static_cast<double>(cfg.beta1);
    const double b2 = static_cast<double>(cfg.beta2);
    const double lr = static_cast<double>(cfg.learning_rate);
    const double eps = static_cast<double>(cfg.eps);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));

    for (auto& [name, p] : params.trainable()) {
        if (!p.has_grad()) {
            throw UsageError("adam_step: parameter '" + name + "' has no gradient");
        }
        auto mit = state.m.find(name);
        auto vit = state.v.find(name);
        if (mit == state.m.end() || vit == state.v.end()) {
            throw UsageError("adam_step: no moment state for parameter '" + name + "'");
        }
        auto g = p.grad();
        Tensor pt = p;
        Tensor mt = mit->second;
        Tensor vt = vit->second;
        auto theta = pt.mutable_data();
        auto mv = mt.mutable_data();
        auto vv = vt.mutable_data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double m_new = b1 * static_cast<double>(mv[i]) + (1.0 - b1) * gi;
            const double v_new = b2 * static_cast<double>(vv[i]) + (1.0 - b2) * gi * gi;
            mv[i] = static_cast<float>(m_new);
            vv[i] = static_cast<float>(v_new);
            const double m_hat = m_new / c1;
            const double v_hat = v_new / c2;
            theta[i] = static_cast<float>(static_cast<double>(theta[i]) -
                                          lr * m_hat / (std::sqrt(v_hat) + eps));
        }
    }
}

EpochStats train_epoch(Model& model, const std::vector<SliceSample>& data, const TrainConfig& cfg,
                       Rng& rng, AdamState& state, int epoch_index) {
    if (data.empty()) throw UsageError("train_epoch: no training samples");
    cfg.validate();

    std::vector<std::int64_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    if (cfg.shuffle) {
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.next_below(i));
            std::swap(order[i - 1], order[j]);
        }
    }

    const LossConfig loss_cfg{cfg.lambda, 1e-7f, 1e-6f};
    double sum_total = 0.0, sum_bce = 0.0, sum_dice = 0.0;
    const auto n = order.size();
    const auto bs = static_cast<std::size_t>(cfg.batch_size);

    int batch_index = 0;
    for (std::size_t begin = 0; begin < n; begin += bs, ++batch_index) {
        const std::size_t end = std::min(begin + bs, n);
        auto [imgs, masks] = make_batch(data, order, begin, end);

        model.params.zero_grads();
        Tensor pred = model_forward(model, imgs, rng, Mode::Train);
        HybridLoss hl = hybrid_loss(pred, masks, loss_cfg);

        const double total = static_cast<double>(hl.total.item());
        const double bce = static_cast<double>(hl.bce.item());
        const double dice = static_cast<double>(hl.dice.item());
        if (!std::isfinite(total) || !std::isfinite(bce) || !std::isfinite(dice)) {
            throw Error("training aborted: non-finite loss at epoch " + std::to_string(epoch_index) +
                        ", batch " + std::to_string(batch_index) + " (total=" + std::to_string(total) +
                        ", bce=" + std::to_string(bce) + ", dice=" + std::to_string(dice) + ")");
        }

        hl.total.backward();
        adam_step(model.params, state, cfg);

        const double weight = static_cast<double>(end - begin);
        sum_total += total * weight;
        sum_bce += bce * weight;
        sum_dice += dice * weight;
    }

    EpochStats out;
    const double denom = static_cast<double>(n);
    out.loss = sum_total / denom;
    out.bce = sum_bce / denom;
    out.dice_loss = sum_dice / denom;
    return out;
}

EvalStats evaluate(const Model& model, const std::vector<SliceSample>& data, int batch_size) {
    if (data.empty()) throw UsageError("evaluate: no samples");
    if (batch_size < 1) throw ConfigError("evaluate: batch_size must be positive");

    NoGradGuard guard;
    Rng unused(0);  // eval mode consumes no randomness
    std::vector<std::int64_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    EvalStats sums;
    const auto n = order.size();
    const auto bs = static_cast<std::size_t>(batch_size);
    for (std::size_t begin = 0; begin < n; begin += bs) {
        const std::size_t end = std::min(begin + bs, n);
        auto [imgs, masks] = make_batch(data, order, begin, end);
        Tensor pred = binarize(model_forward(model, imgs, unused, Mode::Eval));
        const std::int64_t plane = pred.shape()[2] * pred.shape()[3];
        const auto& pv = pred.node()->value;
        const auto& mv = masks.node()->value;
        for (std::size_t i = 0; i < end - begin; ++i) {
            std::vector<float> ps(pv.begin() + static_cast<std::ptrdiff_t>(i * plane),
                                  pv.begin() + static_cast<std::ptrdiff_t>((i + 1) * plane));
            std::vector<float> ms(mv.begin() + static_cast<std::ptrdiff_t>(i * plane),
                                  mv.begin() + static_cast<std::ptrdiff_t>((i + 1) * plane));
            const Shape slice_shape{1, pred.shape()[2], pred.shape()[3]};
            const ConfusionCounts c = confusion(Tensor::from_data(slice_shape, std::move(ps)),
                                                Tensor::from_data(slice_shape, std::move(ms)));
            sums.dice += dice_score(c);
            sums.iou += iou_score(c);
            sums.precision += precision_score(c);
            sums.recall += recall_score(c);
        }
    }
    const double denom = static_cast<double>(n);
    return {sums.dice / denom, sums.iou / denom, sums.precision / denom, sums.recall / denom};
}

std::string history_header() { return "epoch,loss,bce,dice_loss,dice,iou,precision,recall"; }

std::string history_row(const EpochRecord& r) {
    std::string row = std::to_string(r.epoch);
    row += "," + fmt6(r.train.loss);
    row += "," + fmt6(r.train.bce);
    row += "," + fmt6(r.train.dice_loss);
    row += "," + fmt6(r.val.dice);
    row += "," + fmt6(r.val.iou);
    row += "," + fmt6(r.val.precision);
    row += "," + fmt6(r.val.recall);
    return row;
}

void save_checkpoint(const std::string& path, const Model& m, const AdamState& state, int epoch,
                     const Rng& rng, const std::string& history_csv, std::uint64_t config_hash,
                     double best_dice) {
    NtaArchive a = export_weights(m);
    for (const auto& [name, t] : state.m) a.add("opt/m/" + name, NtaEntry::from_tensor(t));
    for (const auto& [name, t] : state.v) a.add("opt/v/" + name, NtaEntry::from_tensor(t));
    a.add("meta/step", NtaEntry::from_i64({1}, {state.t}));
    a.add("meta/epoch", NtaEntry::from_i64({1}, {epoch}));
    const auto& rs = rng.state();
    std::vector<std::int64_t> rs_bits(4);
    std::memcpy(rs_bits.data(), rs.data(), 32);
    a.add("meta/rng_state", NtaEntry::from_i64({4}, rs_bits));
    a.add("meta/config_hash", NtaEntry::from_i64({1}, {static_cast<std::int64_t>(config_hash)}));
    a.add("meta/best_dice", NtaEntry::from_i64({1}, {bits_of(best_dice)}));
    a.add("meta/history_csv", NtaEntry::from_bytes(history_csv));
    a.write_file(path);
}

CheckpointState load_checkpoint(const std::string& path, Model& m) {
    const NtaArchive a = NtaArchive::read_file(path);
    import_weights(m.params, a, ImportPolicy::Strict);

    CheckpointState st;
    st.state = make_adam_state(m.params);
    for (auto& [name, t] : st.state.m) {
        const NtaEntry& e = a.get("opt/m/" + name);
        if (e.dims != t.shape()) throw LoadError("checkpoint moment 'm/" + name + "' shape mismatch");
        auto dst = t.mutable_data();
        const auto src = e.as_f32();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    for (auto& [name, t] : st.state.v) {
        const NtaEntry& e = a.get("opt/v/" + name);
        if (e.dims != t.shape()) throw LoadError("checkpoint moment 'v/" + name + "' shape mismatch");
        auto dst = t.mutable_data();
        const auto src = e.as_f32();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    st.state.t = a.get("meta/step").as_i64()[0];
    st.epoch = static_cast<int>(a.get("meta/epoch").as_i64()[0]);
    const auto rs_bits = a.get("meta/rng_state").as_i64();
    if (rs_bits.size() != 4) throw LoadError("checkpoint rng state must hold four words");
    std::memcpy(st.rng_state.data(), rs_bits.data(), 32);
    st.history_csv = a.get("meta/history_csv").as_string();
    st.config_hash = static_cast<std::uint64_t>(a.get("meta/config_hash").as_i64()[0]);
    st.best_dice = double_of(a.get("meta/best_dice").as_i64()[0]);
    return st;
}

FitResult fit(Model& m, const std::vector<SliceSample>& train_set,
              const std::vector<SliceSample>& val_set, const TrainConfig& cfg,
              const FitOptions& opts) {
    cfg.validate();
    if (opts.checkpoint_dir.empty()) throw UsageError("fit: checkpoint directory required");
    std::filesystem::create_directories(opts.checkpoint_dir);
    const std::string dir = opts.checkpoint_dir + "/";
    const std::uint64_t hash = cfg.config_hash(m.config);

    Rng rng(cfg.seed);
    AdamState state = make_adam_state(m.params);
    int start_epoch = 0;
    std::string csv = history_header() + "\n";
    double best_dice = -1.0;

    if (!opts.resume_from.empty()) {
        CheckpointState ck = load_checkpoint(opts.resume_from, m);
        if (ck.config_hash != hash) {
            throw ConfigError("checkpoint '" + opts.resume_from +
                              "' was written under a different configuration (hash mismatch)");
        }
        state = std::move(ck.state);
        rng.set_state(ck.rng_state);
        start_epoch = ck.epoch;
        csv = ck.history_csv;
        best_dice = ck.best_dice;
    }

    FitResult result;
    result.best_dice = best_dice;
    result.final_epoch = start_epoch;

    auto write_text = [](const std::string& path, const std::string& text) {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open '" + path + "' for writing");
        f << text;
        if (!f) throw IoError("failed writing '" + path + "'");
    };

    for (int e = start_epoch; e < cfg.epochs; ++e) {
        EpochRecord rec;
        rec.epoch = e + 1;
        rec.train = train_epoch(m, train_set, cfg, rng, state, rec.epoch);
        rec.val = evaluate(m, val_set, cfg.batch_size);
        result.history.push_back(rec);
        csv += history_row(rec) + "\n";
        write_text(dir + "metrics.csv", csv);

        if (rec.val.dice > best_dice) {
            best_dice = rec.val.dice;
            export_weights(m).write_file(dir + "best.nta");
        }

        const bool last = e + 1 == cfg.epochs;
        if ((cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0) || last) {
            const std::string name = "ckpt_" + std::to_string(e + 1) + ".nta";
            save_checkpoint(dir + name, m, state, e + 1, rng, csv, hash, best_dice);
            write_text(dir + "latest", name + "\n");
        }
        result.final_epoch = e + 1;
    }

    result.history_csv = csv;
    result.best_dice = best_dice;
    return result;
}

}  // namespace hseg
