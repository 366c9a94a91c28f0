#include "ewe/watermark.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>

#include "ewe/snnl.hpp"

namespace ewe {

TriggerSpec square_trigger(int side, float value) {
    if (side < 1) throw ContractError("square_trigger: side must be >= 1");
    TriggerSpec t;
    t.pattern = full({side, side}, value);
    t.mask = full({side, side}, 1.f);
    return t;
}

Tensor select_watermark_source(const WatermarkSpec& spec, const Dataset& task,
                               const Dataset* ood, Rng& rng) {
    const Dataset* src = &task;
    if (spec.ood) {
        if (!ood) throw ContractError("select_watermark_source: OOD mode but no OOD dataset");
        src = ood;
    } else if (spec.source_class == spec.target_class) {
        throw ContractError("select_watermark_source: in-distribution watermark needs c_S != c_T");
    }
    if (spec.source_class < 0 || spec.source_class >= src->num_classes)
        throw ContractError("select_watermark_source: source class " +
                            std::to_string(spec.source_class) + " invalid for dataset with K=" +
                            std::to_string(src->num_classes));
    if (spec.target_class < 0 || spec.target_class >= task.num_classes)
        throw ContractError("select_watermark_source: target class " +
                            std::to_string(spec.target_class) + " invalid for task with K=" +
                            std::to_string(task.num_classes));
    std::vector<long> pool = src->indices_of_class(spec.source_class);
    if (spec.count > static_cast<long>(pool.size()))
        throw ContractError("select_watermark_source: requested " + std::to_string(spec.count) +
                            " samples but class " + std::to_string(spec.source_class) +
                            " has only " + std::to_string(pool.size()));
    rng.shuffle(pool);
    pool.resize(spec.count);
    return src->gather(pool);
}

namespace {

void stamp(Tensor& batch, const TriggerSpec& trig, int row, int col) {
    const int h = batch.shape[1], w = batch.shape[2];
    const int th = trig.pattern.shape[0], tw = trig.pattern.shape[1];
    (void)h;
    for (int s = 0; s < batch.shape[0]; ++s)
        for (int i = 0; i < th; ++i)
            for (int j = 0; j < tw; ++j)
                if ((*trig.mask.data)[i * tw + j] > 0.5f)
                    (*batch.data)[(static_cast<long>(s) * h + row + i) * w + col + j] =
                        (*trig.pattern.data)[i * tw + j];
}

// summed per-layer SNNL between samples (group 0) and target batch (group 1)
Tensor entanglement_loss(Tape* tape, const Model& m, const Tensor& joint,
                         const std::vector<int>& groups, const Tensor& temperature) {
    Model eval_model = m;
    eval_model.training = false;
    ForwardResult fr = forward_model(tape, eval_model, joint);
    if (fr.snnl_acts.empty())
        throw ContractError("entanglement loss: model has no snnl capture layers");
    Tensor total;
    for (const Tensor& act : fr.snnl_acts) {
        Tensor v = snnl_value(tape, act, groups, temperature);
        total = total.data ? add(tape, total, v) : v;
    }
    return total;
}

}  // namespace

std::pair<int, int> trigger_position_from_map(const Tensor& grad_map, const TriggerSpec& trigger) {
    if (grad_map.shape.size() != 2)
        throw ContractError("trigger_position_from_map: want (H,W) map, got " +
                            shape_str(grad_map.shape));
    const int h = grad_map.shape[0], w = grad_map.shape[1];
    const int th = trigger.pattern.shape[0], tw = trigger.pattern.shape[1];
    if (th > h || tw > w)
        throw ContractError("trigger_position_from_map: trigger " +
                            shape_str(trigger.pattern.shape) + " larger than map " +
                            shape_str(grad_map.shape));
    Tensor map4 = reshape(nullptr, grad_map.detach(), {1, 1, h, w});
    Tensor kernel = reshape(nullptr, trigger.pattern.detach(), {1, 1, th, tw});
    Tensor score = conv2d(nullptr, map4, kernel, Tensor(), Padding::Valid);
    const int ow = score.shape[3];
    int best = 0;
    for (long i = 1; i < score.numel(); ++i)
        if ((*score.data)[i] > (*score.data)[best]) best = static_cast<int>(i);
    return {best / ow, best % ow};
}

WatermarkSet place_trigger(const Tensor& samples, const WatermarkSpec& spec, const Model& model,
                           const Tensor& target_batch, double temperature) {
    if (samples.shape.size() != 3)
        throw ContractError("place_trigger: want (n,H,W) samples, got " +
                            shape_str(samples.shape));
    if (target_batch.shape.empty() || target_batch.shape[0] == 0)
        throw ContractError("place_trigger: empty target batch");
    const int n = samples.shape[0], h = samples.shape[1], w = samples.shape[2];
    const int th = spec.trigger.pattern.shape[0], tw = spec.trigger.pattern.shape[1];
    if (th > h || tw > w)
        throw ContractError("place_trigger: trigger " + shape_str(spec.trigger.pattern.shape) +
                            " larger than input " + shape_str(samples.shape));

    // input gradient of the entanglement loss wrt candidates
    Tensor xw = samples.detach();
    xw.set_requires_grad(true);
    Tape tape;
    std::vector<int> groups(n + target_batch.shape[0], 1);
    std::fill(groups.begin(), groups.begin() + n, 0);
    Tensor t = full({1}, static_cast<float>(temperature));
    Tensor joint = concat_rows(&tape, xw, target_batch);
    Tensor loss = entanglement_loss(&tape, model, joint, groups, t);
    tape.backward(loss);

    Tensor mean_grad = zeros({h, w});
    for (int s = 0; s < n; ++s)
        for (long j = 0; j < static_cast<long>(h) * w; ++j)
            (*mean_grad.data)[j] += (*xw.grad)[static_cast<long>(s) * h * w + j] / n;

    const auto [row, col] = trigger_position_from_map(mean_grad, spec.trigger);

    WatermarkSet wm;
    wm.inputs = samples.detach();
    wm.target_class = spec.target_class;
    wm.source_class = spec.source_class;
    wm.pos_row = row;
    wm.pos_col = col;
    wm.trigger = spec.trigger;
    stamp(wm.inputs, spec.trigger, wm.pos_row, wm.pos_col);
    return wm;
}

namespace {

// one FGSM ascent step on f; frozen coordinates are left untouched
void fgsm_step(Tensor& x, const std::vector<char>& frozen, float eps,
               const std::function<Tensor(Tape*, const Tensor&)>& f) {
    Tensor xv = x.detach();
    xv.set_requires_grad(true);
    Tape tape;
    Tensor loss = f(&tape, xv);
    tape.backward(loss);
    for (long i = 0; i < x.numel(); ++i) {
        if (frozen[i]) continue;
        const float g = (*xv.grad)[i];
        if (g == 0.f) continue;
        float v = (*x.data)[i] + (g > 0.f ? eps : -eps);
        (*x.data)[i] = std::clamp(v, 0.f, 1.f);
    }
}

}  // namespace

WatermarkSet fgsm_refine(const WatermarkSet& wm, const Model& clean_model,
                         const Model& snnl_model, const Tensor& target_batch,
                         const WatermarkSpec& spec, double temperature) {
    if (!spec.fgsm.enabled) throw ContractError("fgsm_refine: fgsm is not enabled in the spec");
    if (!(spec.fgsm.eps > 0.f)) throw ContractError("fgsm_refine: eps must be positive");
    const int n = wm.inputs.shape[0];
    const int h = wm.inputs.shape[1], w = wm.inputs.shape[2];
    const int th = wm.trigger.pattern.shape[0], tw = wm.trigger.pattern.shape[1];

    WatermarkSet out = wm;
    out.inputs = wm.inputs.detach();
    out.fgsm_log = spec.fgsm;

    std::vector<char> frozen(out.inputs.numel(), 0);
    for (int s = 0; s < n; ++s)
        for (int i = 0; i < th; ++i)
            for (int j = 0; j < tw; ++j)
                if ((*wm.trigger.mask.data)[i * tw + j] > 0.5f)
                    frozen[(static_cast<long>(s) * h + wm.pos_row + i) * w + wm.pos_col + j] = 1;

    const std::vector<int> labels(n, wm.target_class);
    std::vector<int> groups(n + target_batch.shape[0], 1);
    std::fill(groups.begin(), groups.begin() + n, 0);
    Tensor t = full({1}, static_cast<float>(temperature));

    auto ce_loss = [&](Tape* tape, const Tensor& x) {
        Model eval_model = clean_model;
        eval_model.training = false;
        return ce_logits(tape, forward_model(tape, eval_model, x).logits, labels);
    };
    auto snnl_loss = [&](Tape* tape, const Tensor& x) {
        Tensor joint = concat_rows(tape, x, target_batch);
        return entanglement_loss(tape, snnl_model, joint, groups, t);
    };

    // proportional interleave, CE first ("more steps of the former")
    int done_ce = 0, done_snnl = 0;
    const int total = spec.fgsm.steps_ce + spec.fgsm.steps_snnl;
    for (int k = 0; k < total; ++k) {
        const bool pick_ce =
            done_ce < spec.fgsm.steps_ce &&
            (done_snnl >= spec.fgsm.steps_snnl ||
             static_cast<long>(done_ce) * spec.fgsm.steps_snnl <=
                 static_cast<long>(done_snnl) * spec.fgsm.steps_ce);
        if (pick_ce) {
            fgsm_step(out.inputs, frozen, spec.fgsm.eps, ce_loss);
            ++done_ce;
        } else {
            fgsm_step(out.inputs, frozen, spec.fgsm.eps, snnl_loss);
            ++done_snnl;
        }
    }
    return out;
}

WatermarkSet make_watermark(const WatermarkSpec& spec, const Dataset& task, const Dataset* ood,
                            const Model& placement_model, const Model& clean_model,
                            double temperature, Rng& rng) {
    Rng select_rng = rng.substream("wm-select");
    Tensor raw = select_watermark_source(spec, task, ood, select_rng);

    Rng target_rng = rng.substream("wm-target");
    std::vector<long> ct_pool = task.indices_of_class(spec.target_class);
    if (ct_pool.empty())
        throw ContractError("make_watermark: task dataset has no samples of target class " +
                            std::to_string(spec.target_class));
    target_rng.shuffle(ct_pool);
    const long ct_n = std::min<long>(std::max<long>(spec.count, 8), ct_pool.size());
    ct_pool.resize(ct_n);
    Tensor x_ct = task.gather(ct_pool);

    WatermarkSet wm = place_trigger(raw, spec, placement_model, x_ct, temperature);
    if (spec.fgsm.enabled && spec.fgsm.eps > 0.f &&
        spec.fgsm.steps_ce + spec.fgsm.steps_snnl > 0)
        wm = fgsm_refine(wm, clean_model, placement_model, x_ct, spec, temperature);
    return wm;
}

// ---- container io -----------------------------------------------------------

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<char*>(b), 4);
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}

std::uint32_t get_u32(std::istream& is, const std::string& path, std::uint64_t& off) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError(path + ": truncated", off);
    off += 4;
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

float get_f32(std::istream& is, const std::string& path, std::uint64_t& off) {
    const std::uint32_t u = get_u32(is, path, off);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

void write_watermark_section(std::ostream& os, const WatermarkSet& wm) {
    put_u32(os, static_cast<std::uint32_t>(wm.inputs.shape.size() - 1));
    for (size_t i = 1; i < wm.inputs.shape.size(); ++i)
        put_u32(os, static_cast<std::uint32_t>(wm.inputs.shape[i]));
    put_u32(os, static_cast<std::uint32_t>(wm.size()));
    put_u32(os, static_cast<std::uint32_t>(wm.target_class));
    put_u32(os, static_cast<std::uint32_t>(wm.source_class));
    put_u32(os, static_cast<std::uint32_t>(wm.pos_row));
    put_u32(os, static_cast<std::uint32_t>(wm.pos_col));
    put_u32(os, static_cast<std::uint32_t>(wm.trigger.pattern.shape[0]));
    put_u32(os, static_cast<std::uint32_t>(wm.trigger.pattern.shape[1]));
    for (float v : *wm.trigger.pattern.data) put_f32(os, v);
    for (float v : *wm.trigger.mask.data) os.put(v > 0.5f ? 1 : 0);
    put_u32(os, wm.fgsm_log.enabled ? 1u : 0u);
    put_f32(os, wm.fgsm_log.eps);
    put_u32(os, static_cast<std::uint32_t>(wm.fgsm_log.steps_ce));
    put_u32(os, static_cast<std::uint32_t>(wm.fgsm_log.steps_snnl));
    for (float v : *wm.inputs.data) put_f32(os, v);
}

WatermarkSet read_watermark_section(std::istream& is, const std::string& path,
                                    std::uint64_t& off) {
    WatermarkSet wm;
    const std::uint32_t rank = get_u32(is, path, off);
    if (rank != 1 && rank != 2)
        throw FormatError(path + ": bad watermark sample rank " + std::to_string(rank), off - 4);
    Shape sample_shape;
    for (std::uint32_t i = 0; i < rank; ++i)
        sample_shape.push_back(static_cast<int>(get_u32(is, path, off)));
    const std::uint32_t count = get_u32(is, path, off);
    wm.target_class = static_cast<int>(get_u32(is, path, off));
    wm.source_class = static_cast<int>(get_u32(is, path, off));
    wm.pos_row = static_cast<int>(get_u32(is, path, off));
    wm.pos_col = static_cast<int>(get_u32(is, path, off));
    const int th = static_cast<int>(get_u32(is, path, off));
    const int tw = static_cast<int>(get_u32(is, path, off));
    if (th > 4096 || tw > 4096)  // a 0x0 trigger (trigger-less set) is legal
        throw FormatError(path + ": implausible trigger size", off - 8);
    wm.trigger.pattern = zeros({th, tw});
    for (long i = 0; i < wm.trigger.pattern.numel(); ++i)
        (*wm.trigger.pattern.data)[i] = get_f32(is, path, off);
    wm.trigger.mask = zeros({th, tw});
    for (long i = 0; i < wm.trigger.mask.numel(); ++i) {
        const int c = is.get();
        if (c == EOF) throw FormatError(path + ": truncated trigger mask", off);
        ++off;
        (*wm.trigger.mask.data)[i] = c ? 1.f : 0.f;
    }
    wm.fgsm_log.enabled = get_u32(is, path, off) != 0;
    wm.fgsm_log.eps = get_f32(is, path, off);
    wm.fgsm_log.steps_ce = static_cast<int>(get_u32(is, path, off));
    wm.fgsm_log.steps_snnl = static_cast<int>(get_u32(is, path, off));
    Shape full_shape;
    full_shape.push_back(static_cast<int>(count));
    for (int d : sample_shape) full_shape.push_back(d);
    wm.inputs = zeros(full_shape);
    for (long i = 0; i < wm.inputs.numel(); ++i) (*wm.inputs.data)[i] = get_f32(is, path, off);
    return wm;
}

}  // namespace

void save_watermarked(const std::string& path, const Model* model, const WatermarkSet* wm) {
    if (!model && !wm) throw ContractError("save_watermarked: nothing to save");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError(path + ": cannot open for write", 0);
    std::uint32_t flags = 0;
    if (model) flags |= kFlagModel;
    if (wm) flags |= kFlagWatermark;
    io_detail::write_header(os, flags);
    if (model) io_detail::write_model_section(os, *model);
    if (wm) write_watermark_section(os, *wm);
    if (!os) throw FormatError(path + ": write failed", 0);
}

WatermarkSet load_watermark(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(path + ": cannot open", 0);
    std::uint64_t off = 0;
    const std::uint32_t flags = io_detail::read_header(is, path, off);
    if (!(flags & kFlagWatermark))
        throw FormatError(path + ": container has no watermark section", 8);
    if (flags & kFlagModel) io_detail::read_model_section(is, path, off);  // skip over
    return read_watermark_section(is, path, off);
}

}  // namespace ewe
