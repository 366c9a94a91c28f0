#include "ewe/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ewe {

namespace {

bool is_parametric(LayerKind k) { return k == LayerKind::Dense || k == LayerKind::Conv; }

// Walks the spec and yields the (C,H,W) or (F) shape after every layer.
struct ShapeWalker {
    bool image;  // in image mode shape is {C,H,W}, else {F}
    int c = 1, h = 0, w = 0;
    long f = 0;

    explicit ShapeWalker(const Shape& input) {
        if (input.size() == 2) {
            image = true;
            h = input[0];
            w = input[1];
        } else if (input.size() == 1) {
            image = false;
            f = input[0];
        } else {
            throw ContractError("ModelSpec: input shape must be (H,W) or (features), got " +
                                shape_str(input));
        }
    }

    long flat() const { return image ? static_cast<long>(c) * h * w : f; }

    void apply(const LayerDesc& l, int index) {
        switch (l.kind) {
            case LayerKind::Dense:
                if (l.units <= 0)
                    throw ContractError("ModelSpec: layer " + std::to_string(index) +
                                        ": dense units must be positive");
                f = l.units;
                image = false;
                break;
            case LayerKind::Conv: {
                if (!image)
                    throw ContractError("ModelSpec: layer " + std::to_string(index) +
                                        ": conv after flatten");
                if (l.kernels <= 0 || l.ksize <= 0)
                    throw ContractError("ModelSpec: layer " + std::to_string(index) +
                                        ": conv needs kernels and ksize");
                const int pad = l.pad == Padding::Same ? (l.ksize - 1) / 2 : 0;
                if (l.pad == Padding::Same && l.ksize % 2 == 0)
                    throw ContractError("ModelSpec: layer " + std::to_string(index) +
                                        ": same-padded conv needs odd kernel");
                const int oh = h + 2 * pad - l.ksize + 1;
                const int ow = w + 2 * pad - l.ksize + 1;
                if (oh <= 0 || ow <= 0)
                    throw ContractError("ModelSpec: layer " + std::to_string(index) +
                                        ": kernel larger than input");
                c = l.kernels;
                h = oh;
                w = ow;
                break;
            }
            case LayerKind::MaxPool2:
                if (!image || h < 2 || w < 2)
                    throw ContractError("ModelSpec: layer " + std::to_string(index) +
                                        ": maxpool needs an image of side >= 2");
                h /= 2;
                w /= 2;
                break;
            case LayerKind::Dropout:
                if (l.rate < 0.f || l.rate >= 1.f)
                    throw ContractError("ModelSpec: layer " + std::to_string(index) +
                                        ": dropout rate must be in [0,1)");
                break;
            case LayerKind::Relu:
            case LayerKind::Sigmoid:
            case LayerKind::SoftmaxOutput:
                break;
        }
    }
};

}  // namespace

bool ModelSpec::binary_head() const {
    return !layers.empty() && layers.back().kind == LayerKind::Sigmoid;
}

void ModelSpec::validate() const {
    if (num_classes < 2) throw ContractError("ModelSpec: num_classes must be >= 2");
    if (layers.empty()) throw ContractError("ModelSpec: no layers");
    ShapeWalker walk(input_shape);
    int last_dense_width = -1;
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerDesc& l = layers[i];
        if (l.kind == LayerKind::SoftmaxOutput && i + 1 != layers.size())
            throw ContractError("ModelSpec: softmax output must be terminal (layer " +
                                std::to_string(i) + ")");
        walk.apply(l, static_cast<int>(i));
        if (l.kind == LayerKind::Dense) last_dense_width = l.units;
    }
    const LayerDesc& head = layers.back();
    if (head.kind == LayerKind::SoftmaxOutput) {
        if (last_dense_width != num_classes)
            throw ContractError("ModelSpec: classification head width " +
                                std::to_string(last_dense_width) + " != num_classes " +
                                std::to_string(num_classes));
    } else if (head.kind == LayerKind::Sigmoid) {
        if (last_dense_width != 1 || num_classes != 2)
            throw ContractError("ModelSpec: sigmoid head needs a width-1 dense layer and K == 2");
    } else {
        throw ContractError("ModelSpec: terminal layer must be a softmax or sigmoid head");
    }
    int prev = -1;
    for (int idx : snnl_layers) {
        if (idx <= prev)
            throw ContractError("ModelSpec: snnl_layers must be strictly increasing");
        if (idx < 0 || idx >= static_cast<int>(layers.size()) - 1)
            throw ContractError("ModelSpec: snnl layer index " + std::to_string(idx) +
                                " out of range");
        prev = idx;
    }
}

long ModelSpec::param_count() const {
    ShapeWalker walk(input_shape);
    long total = 0;
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerDesc& l = layers[i];
        if (l.kind == LayerKind::Dense)
            total += walk.flat() * l.units + l.units;
        else if (l.kind == LayerKind::Conv)
            total += static_cast<long>(l.kernels) * walk.c * l.ksize * l.ksize + l.kernels;
        walk.apply(l, static_cast<int>(i));
    }
    return total;
}

ModelSpec parse_model_spec(const std::string& arch, Shape input_shape, int num_classes) {
    ModelSpec spec;
    spec.input_shape = std::move(input_shape);
    spec.num_classes = num_classes;
    std::stringstream ss(arch);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(std::remove_if(tok.begin(), tok.end(), ::isspace), tok.end());
        if (tok.empty()) continue;
        LayerDesc l;
        if (tok == "snnl") {
            if (spec.layers.empty()) throw ContractError("arch: snnl marker before any layer");
            spec.snnl_layers.push_back(static_cast<int>(spec.layers.size()) - 1);
            continue;
        } else if (tok.rfind("conv:", 0) == 0) {
            const auto x = tok.find('x', 5);
            if (x == std::string::npos) throw ContractError("arch: bad conv token '" + tok + "'");
            l.kind = LayerKind::Conv;
            l.kernels = std::stoi(tok.substr(5, x - 5));
            l.ksize = std::stoi(tok.substr(x + 1));
            l.pad = Padding::Same;
        } else if (tok.rfind("dense:", 0) == 0) {
            l.kind = LayerKind::Dense;
            l.units = std::stoi(tok.substr(6));
        } else if (tok.rfind("drop:", 0) == 0) {
            l.kind = LayerKind::Dropout;
            l.rate = std::stof(tok.substr(5));
        } else if (tok == "pool") {
            l.kind = LayerKind::MaxPool2;
        } else if (tok == "relu") {
            l.kind = LayerKind::Relu;
        } else if (tok == "sigmoid") {
            l.kind = LayerKind::Sigmoid;
        } else if (tok == "softmax") {
            l.kind = LayerKind::SoftmaxOutput;
        } else {
            throw ContractError("arch: unknown token '" + tok + "'");
        }
        spec.layers.push_back(l);
    }
    spec.validate();
    return spec;
}

ModelSpec mnist_cnn_spec() {
    return parse_model_spec(
        "conv:32x5,relu,snnl,pool,drop:0.5,conv:64x3,relu,snnl,pool,drop:0.5,"
        "dense:128,relu,snnl,drop:0.5,dense:10,softmax",
        {28, 28}, 10);
}

std::vector<Shape> layer_output_shapes(const ModelSpec& spec) {
    ShapeWalker walk(spec.input_shape);
    std::vector<Shape> out;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        walk.apply(spec.layers[i], static_cast<int>(i));
        out.push_back(walk.image ? Shape{walk.c, walk.h, walk.w}
                                 : Shape{static_cast<int>(walk.f)});
    }
    return out;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    Rng rng = Rng(seed).substream("init");
    ShapeWalker walk(spec.input_shape);
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerDesc& l = spec.layers[i];
        if (is_parametric(l.kind)) {
            // He-uniform when the next activation is a relu, Glorot otherwise
            bool relu_next = false;
            for (size_t j = i + 1; j < spec.layers.size(); ++j) {
                if (spec.layers[j].kind == LayerKind::Relu) {
                    relu_next = true;
                    break;
                }
                if (is_parametric(spec.layers[j].kind) ||
                    spec.layers[j].kind == LayerKind::Sigmoid ||
                    spec.layers[j].kind == LayerKind::SoftmaxOutput)
                    break;
            }
            long fan_in, fan_out;
            Shape wshape;
            if (l.kind == LayerKind::Dense) {
                fan_in = walk.flat();
                fan_out = l.units;
                wshape = {static_cast<int>(fan_in), l.units};
            } else {
                fan_in = static_cast<long>(walk.c) * l.ksize * l.ksize;
                fan_out = static_cast<long>(l.kernels) * l.ksize * l.ksize;
                wshape = {l.kernels, walk.c, l.ksize, l.ksize};
            }
            const double limit = relu_next ? std::sqrt(6.0 / fan_in)
                                           : std::sqrt(6.0 / (fan_in + fan_out));
            Tensor w = zeros(wshape);
            for (long j = 0; j < w.numel(); ++j)
                (*w.data)[j] = static_cast<float>(rng.uniform(-limit, limit));
            Tensor b = zeros({l.kind == LayerKind::Dense ? l.units : l.kernels});
            w.set_requires_grad(true);
            b.set_requires_grad(true);
            m.params.push_back(w);
            m.params.push_back(b);
        }
        walk.apply(l, static_cast<int>(i));
    }
    return m;
}

ForwardResult forward_model(Tape* tape, const Model& m, const Tensor& batch, Rng* dropout_rng,
                            bool capture_hidden) {
    if (batch.shape.empty() || batch.numel() == 0)
        throw ContractError("forward: empty batch");
    const long want = numel_of(m.spec.input_shape);
    const int n = batch.shape[0];
    if (batch.numel() / n != want)
        throw ContractError("forward: batch feature count " + std::to_string(batch.numel() / n) +
                            " != spec input " + shape_str(m.spec.input_shape));

    ForwardResult out;
    Tensor cur = batch;
    bool image = m.spec.input_shape.size() == 2;
    if (image)
        cur = reshape(tape, cur, {n, 1, m.spec.input_shape[0], m.spec.input_shape[1]});
    size_t pi = 0;
    auto snnl_it = m.spec.snnl_layers.begin();
    for (size_t i = 0; i < m.spec.layers.size(); ++i) {
        const LayerDesc& l = m.spec.layers[i];
        switch (l.kind) {
            case LayerKind::Dense: {
                if (image || cur.shape.size() != 2)
                    cur = reshape(tape, cur, {n, static_cast<int>(cur.numel() / n)});
                image = false;
                cur = add_bias(tape, matmul(tape, cur, m.params[pi]), m.params[pi + 1]);
                pi += 2;
                break;
            }
            case LayerKind::Conv:
                cur = conv2d(tape, cur, m.params[pi], m.params[pi + 1], l.pad);
                pi += 2;
                break;
            case LayerKind::MaxPool2:
                cur = maxpool2(tape, cur);
                break;
            case LayerKind::Relu:
                cur = relu(tape, cur);
                if (capture_hidden && i + 1 != m.spec.layers.size())
                    out.hidden_acts.push_back(
                        reshape(tape, cur, {n, static_cast<int>(cur.numel() / n)}));
                break;
            case LayerKind::Sigmoid:
                // the terminal sigmoid head is left as a logit, like softmax
                if (i + 1 != m.spec.layers.size()) cur = sigmoid(tape, cur);
                break;
            case LayerKind::Dropout:
                if (m.training && l.rate > 0.f) {
                    if (!dropout_rng)
                        throw ContractError("forward: training-mode dropout needs an rng");
                    Tensor mask = zeros(cur.shape);
                    const float keep = 1.f - l.rate;
                    for (long j = 0; j < mask.numel(); ++j)
                        (*mask.data)[j] = dropout_rng->uniform() < keep ? 1.f / keep : 0.f;
                    cur = mul(tape, cur, mask);
                }
                break;
            case LayerKind::SoftmaxOutput:
                break;  // logits are returned; softmax applied by callers
        }
        if (snnl_it != m.spec.snnl_layers.end() && *snnl_it == static_cast<int>(i)) {
            out.snnl_acts.push_back(reshape(tape, cur, {n, static_cast<int>(cur.numel() / n)}));
            ++snnl_it;
        }
    }
    out.logits = reshape(tape, cur, {n, static_cast<int>(cur.numel() / n)});
    return out;
}

std::vector<int> predict_labels(const Model& m, const Tensor& inputs) {
    Model eval_model = m;
    eval_model.training = false;
    const int n = inputs.shape[0];
    std::vector<int> out(n);
    ForwardResult fr = forward_model(nullptr, eval_model, inputs);
    const int k = fr.logits.shape[1];
    for (int i = 0; i < n; ++i) {
        if (m.spec.binary_head()) {
            out[i] = (*fr.logits.data)[i] > 0.f ? 1 : 0;  // sigmoid(z) > 0.5 iff z > 0
        } else {
            int best = 0;
            for (int j = 1; j < k; ++j)
                if ((*fr.logits.data)[i * k + j] > (*fr.logits.data)[i * k + best]) best = j;
            out[i] = best;
        }
    }
    return out;
}

double evaluate(const Model& m, const Dataset& ds) {
    if (ds.size() == 0) throw ContractError("evaluate: empty dataset");
    const long batch = 512;
    long correct = 0;
    for (long start = 0; start < ds.size(); start += batch) {
        std::vector<long> idx;
        for (long i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
        Tensor b = ds.gather(idx);
        std::vector<int> pred = predict_labels(m, b);
        for (size_t i = 0; i < idx.size(); ++i)
            if (pred[i] == ds.labels[idx[i]]) ++correct;
    }
    return static_cast<double>(correct) / ds.size();
}

// ---- container io -------------------------------------------------------------

namespace io_detail {

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

}  // namespace

void write_header(std::ostream& os, std::uint32_t flags) {
    os.write(kContainerMagic, 4);
    put_u32(os, kContainerVersion);
    put_u32(os, flags);
}

std::uint32_t read_header(std::istream& is, const std::string& path, std::uint64_t& off) {
    char magic[4];
    is.read(magic, 4);
    if (!is) throw FormatError(path + ": truncated magic", 0);
    if (std::memcmp(magic, kContainerMagic, 4) != 0)
        throw FormatError(path + ": bad magic", 0);
    off = 4;
    const std::uint32_t version = get_u32(is, path, off);
    if (version != kContainerVersion)
        throw FormatError(path + ": unsupported version " + std::to_string(version), 4);
    return get_u32(is, path, off);
}

void write_model_section(std::ostream& os, const Model& m) {
    put_u32(os, static_cast<std::uint32_t>(m.spec.input_shape.size()));
    for (int d : m.spec.input_shape) put_u32(os, static_cast<std::uint32_t>(d));
    put_u32(os, static_cast<std::uint32_t>(m.spec.num_classes));
    put_u32(os, static_cast<std::uint32_t>(m.spec.layers.size()));
    for (const LayerDesc& l : m.spec.layers) {
        put_u32(os, static_cast<std::uint32_t>(l.kind));
        put_u32(os, static_cast<std::uint32_t>(l.units));
        put_u32(os, static_cast<std::uint32_t>(l.kernels));
        put_u32(os, static_cast<std::uint32_t>(l.ksize));
        put_u32(os, l.pad == Padding::Same ? 1u : 0u);
        put_f32(os, l.rate);
    }
    put_u32(os, static_cast<std::uint32_t>(m.spec.snnl_layers.size()));
    for (int idx : m.spec.snnl_layers) put_u32(os, static_cast<std::uint32_t>(idx));
    for (const Tensor& p : m.params)
        for (float v : *p.data) put_f32(os, v);
}

Model read_model_section(std::istream& is, const std::string& path, std::uint64_t& off) {
    ModelSpec spec;
    const std::uint32_t rank = get_u32(is, path, off);
    if (rank != 1 && rank != 2)
        throw FormatError(path + ": bad input rank " + std::to_string(rank), off - 4);
    for (std::uint32_t i = 0; i < rank; ++i)
        spec.input_shape.push_back(static_cast<int>(get_u32(is, path, off)));
    spec.num_classes = static_cast<int>(get_u32(is, path, off));
    const std::uint32_t n_layers = get_u32(is, path, off);
    if (n_layers == 0 || n_layers > 1000)
        throw FormatError(path + ": implausible layer count " + std::to_string(n_layers),
                          off - 4);
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        LayerDesc l;
        const std::uint32_t kind = get_u32(is, path, off);
        if (kind > static_cast<std::uint32_t>(LayerKind::SoftmaxOutput))
            throw FormatError(path + ": unknown layer kind " + std::to_string(kind), off - 4);
        l.kind = static_cast<LayerKind>(kind);
        l.units = static_cast<int>(get_u32(is, path, off));
        l.kernels = static_cast<int>(get_u32(is, path, off));
        l.ksize = static_cast<int>(get_u32(is, path, off));
        l.pad = get_u32(is, path, off) ? Padding::Same : Padding::Valid;
        l.rate = get_f32(is, path, off);
        spec.layers.push_back(l);
    }
    const std::uint32_t n_snnl = get_u32(is, path, off);
    for (std::uint32_t i = 0; i < n_snnl; ++i)
        spec.snnl_layers.push_back(static_cast<int>(get_u32(is, path, off)));
    spec.validate();

    Model skeleton = build_model(spec, 0);
    for (Tensor& p : skeleton.params)
        for (long j = 0; j < p.numel(); ++j) (*p.data)[j] = get_f32(is, path, off);
    return skeleton;
}

}  // namespace io_detail

void save_model(const Model& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError(path + ": cannot open for write", 0);
    io_detail::write_header(os, kFlagModel);
    io_detail::write_model_section(os, m);
    if (!os) throw FormatError(path + ": write failed", 0);
}

Model load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(path + ": cannot open", 0);
    std::uint64_t off = 0;
    const std::uint32_t flags = io_detail::read_header(is, path, off);
    if (!(flags & kFlagModel))
        throw FormatError(path + ": container has no model section", 8);
    return io_detail::read_model_section(is, path, off);
}

}  // namespace ewe
