#pragma once

#include <string>
#include <vector>

#include "ewe/data.hpp"
#include "ewe/model.hpp"
#include "ewe/watermark.hpp"

namespace ewe {

struct TrainConfig {
    double kappa = 8.0;    // entanglement weight; < 0 runs the disentangling attack
    double t_init = 64.0;  // initial per-layer temperature
    double temp_lr = 0.1;  // alpha, temperature update rate
    int ratio_r = 1;       // task batches per interleaved watermark batch
    int batch = 64;
    int epochs = 10;
    AdamConfig adam;
    std::uint64_t seed = 1;

    void validate() const;
};

struct InterleavedLossRecord {
    double total = 0.0;
    double ce = 0.0;
    std::vector<double> snnl_per_layer;
};

struct EpochMetrics {
    int epoch = 0;
    double task_acc = 0.0;
    double wm_success_raw = 0.0;
    std::vector<double> snnl_per_layer;  // mean over the epoch's interleaved batches
    std::vector<double> temperatures;    // value after the epoch
};

struct TrainResult {
    Model model;
    std::vector<EpochMetrics> history;
    std::vector<InterleavedLossRecord> loss_log;  // one per interleaved batch
};

// Plain cross-entropy training (the reference / unwatermarked model).
TrainResult train_clean(const ModelSpec& spec, const Dataset& train, const Dataset* eval_set,
                        const TrainConfig& cfg);

// Alg: r task batches with CE only, then one interleaved batch
// [X_w, X_cT] labelled c_T trained on CE - kappa * sum_l SNNL_l, followed by
// the per-layer temperature update T -= alpha * dSNNL/dT (in log space).
TrainResult train_ewe(const ModelSpec& spec, const Dataset& task, const WatermarkSet& wm,
                      const TrainConfig& cfg, const Dataset* eval_set);

// Same schedule, but watermark batches minimize CE only (no entanglement
// term, no temperature updates).
TrainResult train_baseline(const ModelSpec& spec, const Dataset& task, const WatermarkSet& wm,
                           const TrainConfig& cfg, const Dataset* eval_set);

void write_metrics_csv(const std::string& path, const TrainResult& result);

}  // namespace ewe
