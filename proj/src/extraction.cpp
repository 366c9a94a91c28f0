#include "ewe/extraction.hpp"

namespace ewe {

Dataset victim_labeled(const Model& victim, const Dataset& queries) {
    if (queries.size() == 0) throw ContractError("extract: empty query set");
    Dataset out;
    out.inputs = queries.inputs;  // verbatim task-distribution inputs
    out.num_classes = victim.spec.num_classes;
    out.name = queries.name + "+victim-labels";
    out.labels.resize(queries.size());
    const long batch = 512;
    for (long start = 0; start < queries.size(); start += batch) {
        std::vector<long> idx;
        for (long i = start; i < std::min(queries.size(), start + batch); ++i) idx.push_back(i);
        std::vector<int> pred = predict_labels(victim, queries.gather(idx));
        for (size_t i = 0; i < idx.size(); ++i) out.labels[idx[i]] = pred[i];
    }
    return out;
}

namespace {

double agreement(const Model& a, const Model& b, const Dataset& ds) {
    std::vector<int> pa = predict_labels(a, ds.inputs);
    std::vector<int> pb = predict_labels(b, ds.inputs);
    long same = 0;
    for (size_t i = 0; i < pa.size(); ++i)
        if (pa[i] == pb[i]) ++same;
    return static_cast<double>(same) / pa.size();
}

}  // namespace

ExtractionResult extract_model(const Model& victim, const Dataset& query_set,
                               const ModelSpec& attacker_spec, const TrainConfig& cfg,
                               const Dataset* holdout) {
    Dataset labeled = victim_labeled(victim, query_set);
    TrainResult tr = train_clean(attacker_spec, labeled, holdout, cfg);
    ExtractionResult res;
    res.model = std::move(tr.model);
    res.history = std::move(tr.history);
    res.agreement_query = agreement(res.model, victim, labeled);
    if (holdout) res.agreement_holdout = agreement(res.model, victim, *holdout);
    return res;
}

}  // namespace ewe
