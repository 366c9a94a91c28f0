#pragma once

#include "ewe/data.hpp"
#include "ewe/model.hpp"
#include "ewe/train.hpp"

namespace ewe {

struct ExtractionResult {
    Model model;
    double agreement_query = 0.0;    // fraction matching the victim on the query set
    double agreement_holdout = 0.0;  // fraction matching the victim on held-out data
    std::vector<EpochMetrics> history;
};

// Labels the query inputs with the victim's argmax (hard labels only) and
// trains a fresh attacker model on them with cross-entropy. Query inputs are
// taken verbatim from the task distribution; no triggers are ever shown to
// the victim.
ExtractionResult extract_model(const Model& victim, const Dataset& query_set,
                               const ModelSpec& attacker_spec, const TrainConfig& cfg,
                               const Dataset* holdout = nullptr);

// The victim's hard labels on a dataset's inputs, as a new dataset.
Dataset victim_labeled(const Model& victim, const Dataset& queries);

}  // namespace ewe
