#include "ewe/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ewe/snnl.hpp"
#include "ewe/verification.hpp"

namespace ewe {

void TrainConfig::validate() const {
    if (ratio_r < 1) throw ContractError("TrainConfig: ratio_r must be >= 1");
    if (batch < 2) throw ContractError("TrainConfig: batch must be >= 2");
    if (epochs < 1) throw ContractError("TrainConfig: epochs must be >= 1");
    if (!(t_init > 0.0)) throw ContractError("TrainConfig: t_init must be positive");
}

namespace {

enum class Mode { Clean, Baseline, Ewe };

std::vector<int> gather_labels(const Dataset& ds, const std::vector<long>& idx) {
    std::vector<int> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = ds.labels[idx[i]];
    return out;
}

Tensor gather_rows(const Tensor& t, const std::vector<long>& idx) {
    Shape s = t.shape;
    s[0] = static_cast<int>(idx.size());
    Tensor out = zeros(s);
    const long f = t.numel() / t.shape[0];
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy_n(t.ptr() + idx[i] * f, f, out.data->data() + i * f);
    return out;
}

TrainResult run_training(Mode mode, const ModelSpec& spec, const Dataset& task,
                         const WatermarkSet* wm, const TrainConfig& cfg,
                         const Dataset* eval_set) {
    cfg.validate();
    task.validate(false);
    if (mode != Mode::Clean) {
        if (!wm || wm->size() == 0) throw ContractError("train: watermark set is empty");
        if (task.indices_of_class(wm->target_class).empty())
            throw ContractError("train: cannot form watermark batch, no class " +
                                std::to_string(wm->target_class) + " samples in the task data");
    }

    Model model = build_model(spec, cfg.seed);
    model.training = true;
    Adam opt(model.trainable(), cfg.adam);
    Rng order_rng = Rng(cfg.seed).substream("batch-order");
    Rng dropout_rng = Rng(cfg.seed).substream("dropout");

    // log-space temperatures, one per capture layer (Ewe mode only)
    const size_t n_snnl = spec.snnl_layers.size();
    std::vector<Tensor> log_temps;
    if (mode == Mode::Ewe) {
        if (n_snnl == 0)
            throw ContractError("train: EWE mode needs at least one snnl capture layer");
        for (size_t l = 0; l < n_snnl; ++l) {
            Tensor th = full({1}, static_cast<float>(std::log(cfg.t_init)));
            th.set_requires_grad(true);
            log_temps.push_back(th);
        }
    }

    std::vector<long> task_idx(task.size());
    for (long i = 0; i < task.size(); ++i) task_idx[i] = i;
    std::vector<long> ct_idx, wm_idx;
    if (mode != Mode::Clean) {
        ct_idx = task.indices_of_class(wm->target_class);
        wm_idx.resize(wm->size());
        for (long i = 0; i < wm->size(); ++i) wm_idx[i] = i;
    }
    size_t ct_cursor = 0, wm_cursor = 0;
    auto next_cyclic = [&order_rng](std::vector<long>& pool, size_t& cursor, long count) {
        std::vector<long> out;
        out.reserve(count);
        for (long i = 0; i < count; ++i) {
            if (cursor == pool.size()) cursor = 0;
            if (cursor == 0 && pool.size() > 1) order_rng.shuffle(pool);  // fresh mix per wrap
            out.push_back(pool[cursor++]);
        }
        return out;
    };

    TrainResult result;
    Tape tape;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        order_rng.shuffle(task_idx);
        std::vector<double> snnl_sums(n_snnl, 0.0);
        long interleaved_count = 0;
        long cursor = 0;
        int since_interleave = 0;
        while (cursor < task.size()) {
            const long take = std::min<long>(cfg.batch, task.size() - cursor);
            std::vector<long> bidx(task_idx.begin() + cursor, task_idx.begin() + cursor + take);
            cursor += take;

            Tensor bx = task.gather(bidx);
            std::vector<int> by = gather_labels(task, bidx);
            ForwardResult fr = forward_model(&tape, model, bx, &dropout_rng);
            Tensor loss = spec.binary_head()
                              ? bce_logits(&tape, fr.logits,
                                           std::vector<float>(by.begin(), by.end()))
                              : ce_logits(&tape, fr.logits, by);
            opt.zero_grad();
            tape.backward(loss);
            opt.step();

            if (mode == Mode::Clean) continue;
            if (++since_interleave < cfg.ratio_r) continue;
            since_interleave = 0;

            // interleaved batch: half watermarks, half target-class data
            const long half = std::max<long>(1, cfg.batch / 2);
            std::vector<long> wsel = next_cyclic(wm_idx, wm_cursor, half);
            std::vector<long> csel = next_cyclic(ct_idx, ct_cursor, half);
            Tensor xw = gather_rows(wm->inputs, wsel);
            Tensor xc = task.gather(csel);
            const int nw = static_cast<int>(wsel.size());
            const int nc = static_cast<int>(csel.size());
            Tensor joint = concat_rows(nullptr, reshape(nullptr, xw, {nw, (int)(xw.numel() / nw)}),
                                       reshape(nullptr, xc, {nc, (int)(xc.numel() / nc)}));
            const std::vector<int> labels(nw + nc, wm->target_class);

            ForwardResult wfr = forward_model(&tape, model, joint, &dropout_rng);
            Tensor ce = spec.binary_head()
                            ? bce_logits(&tape, wfr.logits,
                                         std::vector<float>(labels.begin(), labels.end()))
                            : ce_logits(&tape, wfr.logits, labels);

            InterleavedLossRecord rec;
            rec.ce = ce.value();

            if (mode == Mode::Baseline) {
                rec.total = rec.ce;
                opt.zero_grad();
                tape.backward(ce);
                opt.step();
            } else {
                std::vector<int> groups(nw + nc, 1);
                std::fill(groups.begin(), groups.begin() + nw, 0);
                Tensor snnl_sum;
                std::vector<Tensor> snnl_vals;
                for (size_t l = 0; l < n_snnl; ++l) {
                    Tensor temp = exp_(&tape, log_temps[l]);
                    Tensor v = snnl_value(&tape, wfr.snnl_acts[l], groups, temp);
                    snnl_vals.push_back(v);
                    snnl_sum = snnl_sum.data ? add(&tape, snnl_sum, v) : v;
                    rec.snnl_per_layer.push_back(v.value());
                    snnl_sums[l] += v.value();
                }
                Tensor total =
                    sub(&tape, ce, mul_scalar(&tape, snnl_sum, static_cast<float>(cfg.kappa)));
                rec.total = total.value();

                // temperature gradients first: both sweeps reuse the saved
                // forward state, so no parameter may move in between
                std::vector<float> dtheta(n_snnl, 0.f);
                tape.sweep(snnl_sum);
                for (size_t l = 0; l < n_snnl; ++l) dtheta[l] = (*log_temps[l].grad)[0];

                opt.zero_grad();
                tape.sweep(total);
                opt.step();
                for (size_t l = 0; l < n_snnl; ++l)
                    (*log_temps[l].data)[0] -= static_cast<float>(cfg.temp_lr) * dtheta[l];
                tape.clear();
            }
            ++interleaved_count;
            result.loss_log.push_back(std::move(rec));
        }

        EpochMetrics em;
        em.epoch = epoch;
        model.training = false;
        em.task_acc = evaluate(model, eval_set ? *eval_set : task);
        if (mode != Mode::Clean) em.wm_success_raw = watermark_success_rate(model, *wm);
        model.training = true;
        if (mode == Mode::Ewe) {
            for (size_t l = 0; l < n_snnl; ++l) {
                em.snnl_per_layer.push_back(interleaved_count ? snnl_sums[l] / interleaved_count
                                                              : 0.0);
                em.temperatures.push_back(std::exp((*log_temps[l].data)[0]));
            }
        }
        result.history.push_back(std::move(em));
    }

    model.training = false;
    result.model = std::move(model);
    return result;
}

}  // namespace

TrainResult train_clean(const ModelSpec& spec, const Dataset& train, const Dataset* eval_set,
                        const TrainConfig& cfg) {
    return run_training(Mode::Clean, spec, train, nullptr, cfg, eval_set);
}

TrainResult train_ewe(const ModelSpec& spec, const Dataset& task, const WatermarkSet& wm,
                      const TrainConfig& cfg, const Dataset* eval_set) {
    return run_training(Mode::Ewe, spec, task, &wm, cfg, eval_set);
}

TrainResult train_baseline(const ModelSpec& spec, const Dataset& task, const WatermarkSet& wm,
                           const TrainConfig& cfg, const Dataset* eval_set) {
    return run_training(Mode::Baseline, spec, task, &wm, cfg, eval_set);
}

void write_metrics_csv(const std::string& path, const TrainResult& result) {
    std::ofstream os(path);
    if (!os) throw FormatError(path + ": cannot open for write", 0);
    size_t n_snnl = 0;
    for (const auto& em : result.history) n_snnl = std::max(n_snnl, em.snnl_per_layer.size());
    os << "epoch,task_acc,wm_success_raw";
    for (size_t l = 0; l < n_snnl; ++l) os << ",snnl_" << l;
    for (size_t l = 0; l < n_snnl; ++l) os << ",temp_" << l;
    os << "\n";
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return std::string(buf);
    };
    for (const auto& em : result.history) {
        os << em.epoch << "," << fmt(em.task_acc) << "," << fmt(em.wm_success_raw);
        for (size_t l = 0; l < n_snnl; ++l)
            os << "," << (l < em.snnl_per_layer.size() ? fmt(em.snnl_per_layer[l]) : "");
        for (size_t l = 0; l < n_snnl; ++l)
            os << "," << (l < em.temperatures.size() ? fmt(em.temperatures[l]) : "");
        os << "\n";
    }
}

}  // namespace ewe
