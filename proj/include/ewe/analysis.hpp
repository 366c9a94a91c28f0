#pragma once

#include <string>
#include <vector>

#include "ewe/data.hpp"
#include "ewe/model.hpp"
#include "ewe/train.hpp"
#include "ewe/watermark.hpp"

namespace ewe {

// Per hidden layer, per neuron: fraction of samples (and spatial positions,
// for conv channels) with post-relu activation > 0.
std::vector<std::vector<double>> activation_frequency(const Model& m, const Tensor& inputs);

// Linear CKA with feature centering between two representations of the same
// N samples: ||B'A||_F^2 / (||A'A||_F ||B'B||_F). Zero-variance input
// yields 0 with a warning on stderr.
double cka(const Tensor& reps_a, const Tensor& reps_b);

struct PcaResult {
    Tensor projected;                        // (N, dims)
    std::vector<double> explained_variance;  // fraction per returned component
};

// Mean-centered PCA via eigendecomposition of the covariance. Component signs
// follow a fixed convention: the largest-magnitude loading is positive.
// Rank-deficient inputs are padded with zero components (with a warning).
PcaResult pca_project(const Tensor& reps, int dims = 2);

struct SweepPointSpec {
    double kappa = 8.0;
    double t_init = 64.0;
    int ratio_r = 1;
    int source_class = 0;
    int target_class = 1;
};

struct SweepRow {
    SweepPointSpec point;
    double victim_acc = 0.0, victim_wm = 0.0;
    double extracted_acc = 0.0, extracted_wm = 0.0;
    bool ok = false;
    std::string error;
};

// For each grid point: build the watermark, train an EWE victim, extract it,
// and record accuracy and watermark success. Failures are recorded per point
// and the sweep continues.
std::vector<SweepRow> sweep_tradeoff(const std::vector<SweepPointSpec>& grid,
                                     const Dataset& train_set, const Dataset& test_set,
                                     const ModelSpec& spec, const TrainConfig& base_cfg,
                                     const WatermarkSpec& base_wm, const Dataset* ood = nullptr);

}  // namespace ewe
