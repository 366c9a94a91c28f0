#include "ewe/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ewe/rng.hpp"
#include "ewe/snnl.hpp"

namespace ewe {

namespace {

struct HiddenLayer {
    int layer;     // parametric layer index in spec.layers
    int param;     // weight tensor index in Model::params
    bool conv;
    int units;     // dense width or conv channels
    int relu_pos;  // position in ForwardResult::hidden_acts
    Shape act_shape;
};

// Parametric layers whose output passes through a relu before the head.
std::vector<HiddenLayer> hidden_layers(const ModelSpec& spec) {
    std::vector<Shape> shapes = layer_output_shapes(spec);
    std::vector<HiddenLayer> out;
    int param = 0, relu_pos = 0, last_parametric = -1, last_param_idx = -1;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerDesc& l = spec.layers[i];
        if (l.kind == LayerKind::Dense || l.kind == LayerKind::Conv) {
            last_parametric = static_cast<int>(i);
            last_param_idx = param;
            param += 2;
        } else if (l.kind == LayerKind::Relu && i + 1 != spec.layers.size()) {
            if (last_parametric >= 0) {
                HiddenLayer h;
                h.layer = last_parametric;
                h.param = last_param_idx;
                h.conv = spec.layers[last_parametric].kind == LayerKind::Conv;
                h.units = h.conv ? spec.layers[last_parametric].kernels
                                 : spec.layers[last_parametric].units;
                h.relu_pos = relu_pos;
                h.act_shape = shapes[i];
                out.push_back(h);
            }
            ++relu_pos;
        } else if (l.kind == LayerKind::Relu) {
            ++relu_pos;
        }
    }
    return out;
}

std::vector<Tensor> hidden_activations(const Model& m, const Tensor& inputs) {
    Model eval_model = m;
    eval_model.training = false;
    std::vector<Tensor> acts;
    const long n = inputs.shape[0];
    const long chunk = 256;
    for (long start = 0; start < n; start += chunk) {
        std::vector<long> idx;
        for (long i = start; i < std::min(n, start + chunk); ++i) idx.push_back(i);
        Shape s = inputs.shape;
        s[0] = static_cast<int>(idx.size());
        Tensor b = zeros(s);
        const long f = inputs.numel() / n;
        for (size_t i = 0; i < idx.size(); ++i)
            std::copy_n(inputs.ptr() + idx[i] * f, f, b.data->data() + i * f);
        ForwardResult fr = forward_model(nullptr, eval_model, b, nullptr, true);
        if (acts.empty()) {
            acts = fr.hidden_acts;
        } else {
            for (size_t l = 0; l < acts.size(); ++l)
                acts[l] = concat_rows(nullptr, acts[l], fr.hidden_acts[l]);
        }
    }
    return acts;
}

}  // namespace

std::vector<PrunableUnit> activation_frequencies(const Model& m, const Tensor& inputs) {
    const std::vector<HiddenLayer> layers = hidden_layers(m.spec);
    std::vector<Tensor> acts = hidden_activations(m, inputs);
    std::vector<PrunableUnit> out;
    for (const HiddenLayer& h : layers) {
        const Tensor& a = acts.at(h.relu_pos);  // (N, flat)
        const long n = a.shape[0];
        const long flat = a.shape[1];
        const long per_unit = flat / h.units;  // spatial positions (1 for dense)
        for (int u = 0; u < h.units; ++u) {
            long active = 0;
            for (long s = 0; s < n; ++s) {
                const float* row = a.ptr() + s * flat + u * per_unit;
                for (long p = 0; p < per_unit; ++p)
                    if (row[p] > 0.f) ++active;
            }
            PrunableUnit pu;
            pu.layer = h.layer;
            pu.param = h.param;
            pu.unit = u;
            pu.frequency = static_cast<double>(active) / (n * per_unit);
            out.push_back(pu);
        }
    }
    return out;
}

namespace {

void zero_unit(Model& m, const PrunableUnit& u) {
    Tensor& w = m.params[u.param];
    Tensor& b = m.params[u.param + 1];
    if (w.shape.size() == 4) {  // conv filter
        const long per_filter = w.numel() / w.shape[0];
        std::fill_n(w.data->data() + u.unit * per_filter, per_filter, 0.f);
    } else {  // dense column
        const int cols = w.shape[1];
        for (int r = 0; r < w.shape[0]; ++r) (*w.data)[static_cast<long>(r) * cols + u.unit] = 0.f;
    }
    (*b.data)[u.unit] = 0.f;
}

Model deep_copy(const Model& m) {
    Model out;
    out.spec = m.spec;
    out.training = false;
    for (const Tensor& p : m.params) {
        Tensor q = p.detach();
        q.set_requires_grad(true);
        out.params.push_back(q);
    }
    return out;
}

std::vector<PrunableUnit> lowest_fraction(const Model& m, double fraction,
                                          const Dataset& reference_data) {
    if (fraction < 0.0 || fraction > 1.0)
        throw ContractError("prune: fraction must be in [0,1], got " + std::to_string(fraction));
    std::vector<PrunableUnit> freq = activation_frequencies(m, reference_data.inputs);
    const long k = std::llround(fraction * static_cast<double>(freq.size()));
    std::stable_sort(freq.begin(), freq.end(),
                     [](const PrunableUnit& a, const PrunableUnit& b) {
                         return a.frequency < b.frequency;
                     });
    freq.resize(std::min<long>(k, freq.size()));
    return freq;
}

}  // namespace

Model prune(const Model& m, double fraction, const Dataset& reference_data) {
    std::vector<PrunableUnit> victims = lowest_fraction(m, fraction, reference_data);
    Model out = deep_copy(m);
    for (const PrunableUnit& u : victims) zero_unit(out, u);
    return out;
}

Model fine_prune(const Model& m, double fraction, const Model& victim, const Dataset& data,
                 const TrainConfig& cfg) {
    std::vector<PrunableUnit> victims = lowest_fraction(m, fraction, data);
    Model out = deep_copy(m);
    std::vector<std::vector<float>> masks;
    for (const Tensor& p : out.params) masks.emplace_back(p.numel(), 1.f);
    for (const PrunableUnit& u : victims) {
        zero_unit(out, u);
        Tensor& w = out.params[u.param];
        if (w.shape.size() == 4) {
            const long per_filter = w.numel() / w.shape[0];
            std::fill_n(masks[u.param].data() + u.unit * per_filter, per_filter, 0.f);
        } else {
            const int cols = w.shape[1];
            for (int r = 0; r < w.shape[0]; ++r)
                masks[u.param][static_cast<long>(r) * cols + u.unit] = 0.f;
        }
        masks[u.param + 1][u.unit] = 0.f;
    }

    Dataset labeled = victim_labeled(victim, data);
    Adam opt(out.params, cfg.adam);
    opt.set_mask(std::move(masks));
    Rng order_rng = Rng(cfg.seed).substream("fineprune-order");
    Rng dropout_rng = Rng(cfg.seed).substream("fineprune-dropout");
    std::vector<long> idx(labeled.size());
    std::iota(idx.begin(), idx.end(), 0);
    out.training = true;
    Tape tape;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(idx);
        for (long cursor = 0; cursor < labeled.size(); cursor += cfg.batch) {
            std::vector<long> bidx(idx.begin() + cursor,
                                   idx.begin() + std::min<long>(labeled.size(), cursor + cfg.batch));
            Tensor bx = labeled.gather(bidx);
            std::vector<int> by;
            for (long i : bidx) by.push_back(labeled.labels[i]);
            ForwardResult fr = forward_model(&tape, out, bx, &dropout_rng);
            Tensor loss = out.spec.binary_head()
                              ? bce_logits(&tape, fr.logits, std::vector<float>(by.begin(), by.end()))
                              : ce_logits(&tape, fr.logits, by);
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
        }
    }
    out.training = false;
    return out;
}

Model disentangle_extract(const Model& victim, const Dataset& queries,
                          const WatermarkSet& wm_guess, const ModelSpec& attacker_spec,
                          const TrainConfig& cfg) {
    if (!(cfg.kappa < 0.0))
        throw ContractError("disentangle_extract: kappa must be negative, got " +
                            std::to_string(cfg.kappa));
    Dataset labeled = victim_labeled(victim, queries);
    return train_ewe(attacker_spec, labeled, wm_guess, cfg, nullptr).model;
}

PiracyResult piracy_cycle(const Model& victim, const WatermarkSet& owner_wm,
                          const WatermarkSpec& pirate_spec, const Dataset& queries,
                          const ModelSpec& attacker_spec, const TrainConfig& cfg,
                          double fineprune_fraction) {
    if (fineprune_fraction < 0.0 || fineprune_fraction > 0.10)
        throw ContractError("piracy_cycle: fine-prune fraction must be within [0, 0.10]");
    const bool same_pair = pirate_spec.source_class == owner_wm.source_class &&
                           pirate_spec.target_class == owner_wm.target_class;
    bool same_trigger = pirate_spec.trigger.pattern.shape == owner_wm.trigger.pattern.shape;
    if (same_trigger)
        for (long i = 0; i < pirate_spec.trigger.pattern.numel() && same_trigger; ++i)
            same_trigger = (*pirate_spec.trigger.pattern.data)[i] ==
                           (*owner_wm.trigger.pattern.data)[i];
    if (same_pair && same_trigger)
        throw ContractError(
            "piracy_cycle: pirate watermark must differ from the owner's in trigger or class "
            "pair (attribution undefined otherwise)");

    Dataset labeled = victim_labeled(victim, queries);

    // the pirate first needs their own clean extract for trigger placement
    TrainConfig place_cfg = cfg;
    place_cfg.seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;
    Model placement = train_clean(attacker_spec, labeled, nullptr, place_cfg).model;

    Rng rng = Rng(cfg.seed).substream("piracy");
    WatermarkSet pirate_wm =
        make_watermark(pirate_spec, labeled, nullptr, placement, placement, cfg.t_init, rng);

    PiracyResult res;
    res.doubly_watermarked = train_ewe(attacker_spec, labeled, pirate_wm, cfg, nullptr).model;
    res.owner_before = watermark_success_rate(res.doubly_watermarked, owner_wm);
    res.pirate_before = watermark_success_rate(res.doubly_watermarked, pirate_wm);

    res.fine_pruned = fine_prune(res.doubly_watermarked, fineprune_fraction, victim, queries, cfg);
    res.owner_after = watermark_success_rate(res.fine_pruned, owner_wm);
    res.pirate_after = watermark_success_rate(res.fine_pruned, pirate_wm);
    return res;
}

// ---- Neural Cleanse -------------------------------------------------------------

CleanseResult neural_cleanse(const Model& m, const Dataset& data, int budget_steps_per_class,
                             std::uint64_t seed) {
    const int K = m.spec.num_classes;
    for (int c = 0; c < K; ++c)
        if (data.indices_of_class(c).empty())
            throw ContractError("neural_cleanse: data has no samples of class " +
                                std::to_string(c));
    if (budget_steps_per_class < 1)
        throw ContractError("neural_cleanse: budget must be >= 1");

    Model eval_model = m;
    eval_model.training = false;
    const long d = numel_of(m.spec.input_shape);
    CleanseResult res;
    Rng rng = Rng(seed).substream("cleanse");

    for (int c = 0; c < K; ++c) {
        // up to 256 other-class rows as the optimization batch
        std::vector<long> pool;
        for (long i = 0; i < data.size(); ++i)
            if (data.labels[i] != c) pool.push_back(i);
        rng.shuffle(pool);
        pool.resize(std::min<size_t>(pool.size(), 256));
        Tensor batch = data.gather(pool);
        const int n = batch.shape[0];
        Tensor flat = reshape(nullptr, batch, {n, static_cast<int>(d)});
        const std::vector<int> target(n, c);

        Tensor m_raw = full({static_cast<int>(d)}, -3.f);  // sigmoid ~ 0.047
        Tensor p_raw = full({static_cast<int>(d)}, 0.f);   // pattern 0.5
        m_raw.set_requires_grad(true);
        p_raw.set_requires_grad(true);
        AdamConfig ac;
        ac.lr = 0.1f;
        Adam opt({m_raw, p_raw}, ac);

        double lambda = 1e-3;
        double asr = 0.0;
        Tape tape;
        for (int step = 1; step <= budget_steps_per_class; ++step) {
            Tensor mask = sigmoid(&tape, m_raw);
            Tensor pattern = sigmoid(&tape, p_raw);
            Tensor blended = mask_blend(&tape, flat, mask, pattern);
            ForwardResult fr = forward_model(&tape, eval_model, blended);
            Tensor ce = ce_logits(&tape, fr.logits, target);
            Tensor loss = add(&tape, ce,
                              mul_scalar(&tape, reduce_sum(&tape, mask),
                                         static_cast<float>(lambda)));
            // attack success from this step's logits
            long hit = 0;
            const int k = fr.logits.shape[1];
            for (int i = 0; i < n; ++i) {
                int best = 0;
                for (int j = 1; j < k; ++j)
                    if ((*fr.logits.data)[i * k + j] > (*fr.logits.data)[i * k + best]) best = j;
                if (best == c) ++hit;
            }
            asr = static_cast<double>(hit) / n;
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
            if (step % 10 == 0) {
                if (asr > 0.99)
                    lambda *= 1.5;
                else if (asr < 0.95)
                    lambda /= 1.5;
            }
        }
        double l1 = 0.0;
        for (long i = 0; i < d; ++i)
            l1 += 1.0 / (1.0 + std::exp(-static_cast<double>((*m_raw.data)[i])));
        res.mask_l1.push_back(l1);
        res.attack_success.push_back(asr);
        if (asr < 0.75) res.converged = false;
    }

    std::vector<double> sorted = res.mask_l1;
    std::sort(sorted.begin(), sorted.end());
    auto median_of = [](const std::vector<double>& v) {
        const size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    const double med = median_of(sorted);
    std::vector<double> dev;
    for (double v : res.mask_l1) dev.push_back(std::abs(v - med));
    std::sort(dev.begin(), dev.end());
    const double mad = median_of(dev);
    const double lo = sorted.front();
    res.min_class = static_cast<int>(
        std::min_element(res.mask_l1.begin(), res.mask_l1.end()) - res.mask_l1.begin());
    res.anomaly_index = mad > 0.0 ? std::abs(med - lo) / (1.4826 * mad) : 0.0;
    res.flagged = res.anomaly_index > 2.0;
    return res;
}

// ---- LOF --------------------------------------------------------------------------

namespace {

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

struct KnnInfo {
    std::vector<int> neighbors;
    double k_distance = 0.0;
};

KnnInfo knn_of(const std::vector<std::vector<double>>& ref, const std::vector<double>& q, int k,
               int skip_index) {
    std::vector<std::pair<double, int>> dists;
    dists.reserve(ref.size());
    for (size_t j = 0; j < ref.size(); ++j) {
        if (static_cast<int>(j) == skip_index) continue;
        dists.emplace_back(std::sqrt(sqdist(q, ref[j])), static_cast<int>(j));
    }
    std::sort(dists.begin(), dists.end());
    KnnInfo info;
    for (int i = 0; i < k && i < static_cast<int>(dists.size()); ++i) {
        info.neighbors.push_back(dists[i].second);
        info.k_distance = dists[i].first;
    }
    return info;
}

}  // namespace

std::vector<double> lof_scores(const std::vector<std::vector<double>>& reference,
                               const std::vector<std::vector<double>>& queries, int k) {
    const int m = static_cast<int>(reference.size());
    if (k < 1 || k >= m)
        throw ContractError("lof: k must satisfy 1 <= k < |reference| (" + std::to_string(k) +
                            " vs " + std::to_string(m) + ")");

    std::vector<KnnInfo> ref_knn(m);
    for (int i = 0; i < m; ++i) ref_knn[i] = knn_of(reference, reference[i], k, i);

    auto lrd_of = [&](const std::vector<double>& q, const KnnInfo& knn) {
        double reach = 0.0;
        for (int nb : knn.neighbors)
            reach += std::max(ref_knn[nb].k_distance, std::sqrt(sqdist(q, reference[nb])));
        reach /= knn.neighbors.size();
        return reach > 0.0 ? 1.0 / reach : 1e12;
    };

    std::vector<double> ref_lrd(m);
    for (int i = 0; i < m; ++i) ref_lrd[i] = lrd_of(reference[i], ref_knn[i]);

    std::vector<double> out;
    out.reserve(queries.size());
    for (const auto& q : queries) {
        KnnInfo knn = knn_of(reference, q, k, -1);
        const double lrd_q = lrd_of(q, knn);
        double ratio = 0.0;
        for (int nb : knn.neighbors) ratio += ref_lrd[nb] / lrd_q;
        out.push_back(ratio / knn.neighbors.size());
    }
    return out;
}

std::vector<std::vector<double>> penultimate_reps(const Model& m, const Tensor& inputs) {
    std::vector<Tensor> acts = hidden_activations(m, inputs);
    if (acts.empty()) throw ContractError("penultimate_reps: model has no hidden relu layer");
    const Tensor& last = acts.back();
    std::vector<std::vector<double>> out(last.shape[0]);
    const int d = last.shape[1];
    for (int i = 0; i < last.shape[0]; ++i) {
        out[i].resize(d);
        for (int j = 0; j < d; ++j) out[i][j] = (*last.data)[static_cast<long>(i) * d + j];
    }
    return out;
}

LofReport lof_filter(const Model& m, const Dataset& reference_data, const Tensor& queries,
                     const Dataset& holdout_legit, int k, double threshold) {
    if (reference_data.size() == 0) throw ContractError("lof_filter: empty reference data");
    LofReport rep;
    rep.threshold = threshold;
    std::vector<std::vector<double>> ref = penultimate_reps(m, reference_data.inputs);
    std::vector<std::vector<double>> q = penultimate_reps(m, queries);
    rep.scores = lof_scores(ref, q, k);
    long flagged = 0;
    for (double s : rep.scores) {
        rep.flags.push_back(s > threshold ? 1 : 0);
        if (s > threshold) ++flagged;
    }
    rep.detection_rate = static_cast<double>(flagged) / rep.scores.size();

    std::vector<std::vector<double>> legit = penultimate_reps(m, holdout_legit.inputs);
    std::vector<double> legit_scores = lof_scores(ref, legit, k);
    long false_flags = 0;
    for (double s : legit_scores)
        if (s > threshold) ++false_flags;
    rep.false_flag_rate = static_cast<double>(false_flags) / legit_scores.size();
    return rep;
}

// ---- adversarial probe ---------------------------------------------------------------

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;  // zero vectors score 0 by convention
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

ProbeReport adversarial_probe(const Model& extracted, int target_class, const WatermarkSet& wm,
                              std::uint64_t seed, float eps, int step_cap) {
    Model eval_model = extracted;
    eval_model.training = false;
    const long d = numel_of(extracted.spec.input_shape);
    Shape xshape;
    xshape.push_back(1);
    for (int v : extracted.spec.input_shape) xshape.push_back(v);

    ProbeReport rep;
    Tensor x = zeros(xshape);
    const std::vector<int> target{target_class};
    for (int step = 0; step < step_cap; ++step) {
        std::vector<int> pred = predict_labels(eval_model, x);
        if (pred[0] == target_class) {
            rep.reached_target = true;
            break;
        }
        Tensor xv = x.detach();
        xv.set_requires_grad(true);
        Tape tape;
        Tensor loss = ce_logits(&tape, forward_model(&tape, eval_model, xv).logits, target);
        tape.backward(loss);
        for (long i = 0; i < d; ++i) {
            const float g = (*xv.grad)[i];
            if (g == 0.f) continue;
            (*x.data)[i] = std::clamp((*x.data)[i] - (g > 0.f ? eps : -eps), 0.f, 1.f);
        }
        ++rep.steps;
    }
    rep.probe = x;

    std::vector<double> probe_flat(d);
    for (long i = 0; i < d; ++i) probe_flat[i] = (*x.data)[i];

    double acc = 0.0;
    for (long s = 0; s < wm.size(); ++s) {
        std::vector<double> w(d);
        for (long i = 0; i < d; ++i) w[i] = (*wm.inputs.data)[s * d + i];
        acc += cosine(probe_flat, w);
    }
    rep.cos_vs_watermark = wm.size() ? acc / wm.size() : 0.0;

    Rng rng = Rng(seed).substream("probe");
    const int trials = 100;
    acc = 0.0;
    for (int tr = 0; tr < trials; ++tr) {
        std::vector<double> r(d);
        for (long i = 0; i < d; ++i) r[i] = rng.uniform();
        acc += cosine(probe_flat, r);
    }
    rep.cos_vs_random = acc / trials;
    return rep;
}

}  // namespace ewe
