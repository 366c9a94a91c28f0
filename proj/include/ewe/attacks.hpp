#pragma once

#include <string>
#include <vector>

#include "ewe/extraction.hpp"
#include "ewe/train.hpp"
#include "ewe/verification.hpp"

namespace ewe {

// One sweep row: attack parameter value plus the resulting accuracy and
// watermark success (raw and adjusted by the false rate).
struct AttackPoint {
    double param = 0.0;
    double task_acc = 0.0;
    double wm_raw = 0.0;
    double wm_adjusted = 0.0;
};

struct AttackReport {
    std::string attack;
    std::vector<AttackPoint> points;
};

// Hidden neurons of a model: dense units and conv channels of layers whose
// output passes through a relu; the classification head is exempt.
struct PrunableUnit {
    int layer = 0;   // index into spec.layers (the parametric layer)
    int param = 0;   // index of the weight tensor in Model::params
    int unit = 0;    // column (dense) or filter (conv)
    double frequency = 0.0;
};

// Fraction of reference samples (and spatial positions, for conv channels)
// with post-relu activation > 0, for every hidden neuron.
std::vector<PrunableUnit> activation_frequencies(const Model& m, const Tensor& inputs);

// Zeroes the weights of the `fraction` least-frequently-activated hidden
// neurons, measured on reference_data. The output layer is never pruned.
Model prune(const Model& m, double fraction, const Dataset& reference_data);

// Prune, then continue cross-entropy training on victim-labeled data,
// updating only the surviving weights.
Model fine_prune(const Model& m, double fraction, const Model& victim, const Dataset& data,
                 const TrainConfig& cfg);

// Extraction with a negative-weight entanglement term between the guessed
// watermark set and guessed target-class data (kappa < 0 required).
Model disentangle_extract(const Model& victim, const Dataset& queries,
                          const WatermarkSet& wm_guess, const ModelSpec& attacker_spec,
                          const TrainConfig& cfg);

struct PiracyResult {
    Model doubly_watermarked;
    Model fine_pruned;
    double owner_before = 0.0, pirate_before = 0.0;
    double owner_after = 0.0, pirate_after = 0.0;
};

// The adversary extracts the victim while embedding their own watermark,
// then the owner's counter-move: fine-prune on victim-labeled data (which by
// construction contains no pirate-trigger inputs).
PiracyResult piracy_cycle(const Model& victim, const WatermarkSet& owner_wm,
                          const WatermarkSpec& pirate_spec, const Dataset& queries,
                          const ModelSpec& attacker_spec, const TrainConfig& cfg,
                          double fineprune_fraction);

struct CleanseResult {
    std::vector<double> mask_l1;  // per-class recovered-trigger L1 norm
    std::vector<double> attack_success;
    double anomaly_index = 0.0;
    int min_class = -1;
    bool flagged = false;    // anomaly index > 2
    bool converged = true;   // every class reached a working trigger in budget
};

// Per-class trigger reconstruction: optimize (mask, pattern) so other-class
// data is classified as the class, with an L1 penalty on the mask; the
// anomaly index is the MAD-based outlier score of the smallest norm.
CleanseResult neural_cleanse(const Model& m, const Dataset& data, int budget_steps_per_class,
                             std::uint64_t seed);

// Standard LOF scores of query rows against a reference set (k neighbors).
std::vector<double> lof_scores(const std::vector<std::vector<double>>& reference,
                               const std::vector<std::vector<double>>& queries, int k);

struct LofReport {
    std::vector<double> scores;
    std::vector<char> flags;
    double detection_rate = 0.0;   // flagged fraction of the queries
    double false_flag_rate = 0.0;  // flagged fraction of held-out legitimate data
    double threshold = 1.5;
};

// LOF on penultimate-layer activations; queries are typically watermarks.
LofReport lof_filter(const Model& m, const Dataset& reference_data, const Tensor& queries,
                     const Dataset& holdout_legit, int k, double threshold = 1.5);

// Penultimate-layer representation rows, for detector comparisons.
std::vector<std::vector<double>> penultimate_reps(const Model& m, const Tensor& inputs);

struct ProbeReport {
    Tensor probe;
    bool reached_target = false;
    int steps = 0;
    double cos_vs_watermark = 0.0;
    double cos_vs_random = 0.0;
};

// Perturbs an all-zero input toward the target class by FGSM steps, then
// compares the probe against the watermarks and against uniform-random
// inputs by cosine similarity (zero vectors score 0 by convention).
ProbeReport adversarial_probe(const Model& extracted, int target_class, const WatermarkSet& wm,
                              std::uint64_t seed, float eps = 0.05f, int step_cap = 200);

}  // namespace ewe
