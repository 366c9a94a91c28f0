#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ewe/data.hpp"
#include "ewe/model.hpp"
#include "ewe/rng.hpp"

namespace ewe {

struct TriggerSpec {
    Tensor pattern;  // (th,tw), values in [0,1]
    Tensor mask;     // (th,tw), 1 where the pattern is stamped
};

// th x th block of the given intensity (the classic small white square)
TriggerSpec square_trigger(int side, float value = 1.f);

struct FgsmSpec {
    bool enabled = false;
    float eps = 0.1f;
    int steps_ce = 3;    // ascent steps on CE toward the target class (clean model)
    int steps_snnl = 1;  // ascent steps on the entanglement loss
};

struct WatermarkSpec {
    int source_class = 0;
    int target_class = 0;
    bool ood = false;  // draw the source samples from a second dataset
    TriggerSpec trigger;
    long count = 0;
    FgsmSpec fgsm;
};

struct WatermarkSet {
    Tensor inputs;  // (n,H,W) or (n,features); trigger stamped, values in [0,1]
    int target_class = 0;
    int source_class = 0;
    int pos_row = 0, pos_col = 0;  // trigger placement (shared by all samples)
    TriggerSpec trigger;
    FgsmSpec fgsm_log;

    long size() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }
};

// Draws `count` class-c_S samples from the task dataset (or the OOD dataset
// in OOD mode). Selection order is a deterministic function of the rng state.
Tensor select_watermark_source(const WatermarkSpec& spec, const Dataset& task,
                               const Dataset* ood, Rng& rng);

// Valid-mode convolution of a gradient map with the trigger pattern followed
// by argmax; row-major first index wins ties.
std::pair<int, int> trigger_position_from_map(const Tensor& grad_map, const TriggerSpec& trigger);

// Positions the trigger where the entanglement loss is most sensitive: the
// gradient of the summed per-layer SNNL between the candidates and a batch of
// target-class data, averaged over candidates, convolved (valid) with the
// trigger pattern; the argmax wins, row-major first index on ties. The
// trigger is then stamped at that position in every sample.
WatermarkSet place_trigger(const Tensor& samples, const WatermarkSpec& spec, const Model& model,
                           const Tensor& target_batch, double temperature);

// Alternating FGSM ascent steps: steps_ce on the clean model's cross-entropy
// of predicting c_T (pushes samples away from the target class) and
// steps_snnl on the SNNL against target-class data (makes entanglement
// easier). Each step moves unfrozen coordinates by exactly +-eps (or 0 where
// the gradient vanishes), then clips to [0,1]. Trigger pixels are frozen.
WatermarkSet fgsm_refine(const WatermarkSet& wm, const Model& clean_model,
                         const Model& snnl_model, const Tensor& target_batch,
                         const WatermarkSpec& spec, double temperature);

// One-call pipeline: select, place, optionally refine.
WatermarkSet make_watermark(const WatermarkSpec& spec, const Dataset& task, const Dataset* ood,
                            const Model& placement_model, const Model& clean_model,
                            double temperature, Rng& rng);

// Container io (same format as model files; sections are independent).
void save_watermarked(const std::string& path, const Model* model, const WatermarkSet* wm);
WatermarkSet load_watermark(const std::string& path);

}  // namespace ewe
