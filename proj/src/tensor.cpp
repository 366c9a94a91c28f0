#include "ewe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ewe {

namespace {

std::shared_ptr<std::vector<float>> make_buffer(long n, float v = 0.f) {
    return std::make_shared<std::vector<float>>(static_cast<size_t>(n), v);
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                            " vs " + shape_str(b.shape));
}

bool track2(Tape* t, const Tensor& a, const Tensor& b) {
    return t != nullptr && (a.requires_grad || b.requires_grad);
}

bool track1(Tape* t, const Tensor& a) { return t != nullptr && a.requires_grad; }

Tensor make_out(Shape s, bool tracked) {
    Tensor out;
    out.shape = std::move(s);
    out.data = make_buffer(numel_of(out.shape));
    if (tracked) {
        out.requires_grad = true;
        out.grad = make_buffer(out.numel());
    }
    return out;
}

}  // namespace

Tensor::Tensor(Shape s, std::vector<float> values) {
    if (numel_of(s) != static_cast<long>(values.size()))
        throw ContractError("Tensor: shape " + shape_str(s) + " wants " +
                            std::to_string(numel_of(s)) + " values, got " +
                            std::to_string(values.size()));
    shape = std::move(s);
    data = std::make_shared<std::vector<float>>(std::move(values));
}

float Tensor::value() const {
    if (!is_scalar()) throw ContractError("Tensor::value: tensor is not scalar, shape " + shape_str(shape));
    return (*data)[0];
}

void Tensor::set_requires_grad(bool on) {
    requires_grad = on;
    if (on && !grad) grad = make_buffer(numel());
    if (!on) grad.reset();
}

void Tensor::zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.f);
}

Tensor Tensor::detach() const {
    Tensor out;
    out.shape = shape;
    out.data = std::make_shared<std::vector<float>>(*data);
    return out;
}

Tensor Tensor::clone() const {
    Tensor out = detach();
    if (requires_grad) out.set_requires_grad(true);
    return out;
}

Tensor zeros(const Shape& s) { return full(s, 0.f); }

Tensor full(const Shape& s, float v) {
    Tensor out;
    out.shape = s;
    out.data = make_buffer(numel_of(s), v);
    return out;
}

bool all_finite(const Tensor& t) {
    for (float v : *t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

// ---- Tape -------------------------------------------------------------------

void Tape::record(BackFn back, std::initializer_list<std::shared_ptr<std::vector<float>>> grads) {
    nodes_.push_back(std::move(back));
    for (const auto& g : grads)
        if (g) buffers_.push_back(g);
}

void Tape::sweep(const Tensor& loss) {
    if (!loss.is_scalar())
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape));
    if (nodes_.empty()) throw ContractError("backward: tape is empty");
    if (!loss.grad) throw ContractError("backward: loss is not on the tape (no grad buffer)");
    for (auto& b : buffers_) std::fill(b->begin(), b->end(), 0.f);
    (*loss.grad)[0] = 1.f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void Tape::backward(const Tensor& loss) {
    sweep(loss);
    clear();
}

void Tape::clear() {
    nodes_.clear();
    buffers_.clear();
}

// ---- elementwise ------------------------------------------------------------

Tensor add(Tape* t, const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    bool tr = track2(t, a, b);
    Tensor out = make_out(a.shape, tr);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
    if (tr) {
        auto ag = a.grad, bg = b.grad, og = out.grad;
        t->record([ag, bg, og, n] {
            for (long i = 0; i < n; ++i) {
                if (ag) (*ag)[i] += (*og)[i];
                if (bg) (*bg)[i] += (*og)[i];
            }
        }, {og, ag, bg});
    }
    return out;
}

Tensor sub(Tape* t, const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    bool tr = track2(t, a, b);
    Tensor out = make_out(a.shape, tr);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
    if (tr) {
        auto ag = a.grad, bg = b.grad, og = out.grad;
        t->record([ag, bg, og, n] {
            for (long i = 0; i < n; ++i) {
                if (ag) (*ag)[i] += (*og)[i];
                if (bg) (*bg)[i] -= (*og)[i];
            }
        }, {og, ag, bg});
    }
    return out;
}

Tensor mul(Tape* t, const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    bool tr = track2(t, a, b);
    Tensor out = make_out(a.shape, tr);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    if (tr) {
        auto ad = a.data, bd = b.data;
        auto ag = a.grad, bg = b.grad, og = out.grad;
        t->record([ad, bd, ag, bg, og, n] {
            for (long i = 0; i < n; ++i) {
                if (ag) (*ag)[i] += (*og)[i] * (*bd)[i];
                if (bg) (*bg)[i] += (*og)[i] * (*ad)[i];
            }
        }, {og, ag, bg});
    }
    return out;
}

Tensor neg(Tape* t, const Tensor& x) { return mul_scalar(t, x, -1.f); }

Tensor add_scalar(Tape* t, const Tensor& x, float c) {
    bool tr = track1(t, x);
    Tensor out = make_out(x.shape, tr);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] + c;
    if (tr) {
        auto xg = x.grad, og = out.grad;
        t->record([xg, og, n] {
            if (!xg) return;
            for (long i = 0; i < n; ++i) (*xg)[i] += (*og)[i];
        }, {og, xg});
    }
    return out;
}

Tensor mul_scalar(Tape* t, const Tensor& x, float c) {
    bool tr = track1(t, x);
    Tensor out = make_out(x.shape, tr);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * c;
    if (tr) {
        auto xg = x.grad, og = out.grad;
        t->record([xg, og, n, c] {
            if (!xg) return;
            for (long i = 0; i < n; ++i) (*xg)[i] += (*og)[i] * c;
        }, {og, xg});
    }
    return out;
}

Tensor scale_by(Tape* t, const Tensor& x, const Tensor& s) {
    if (!s.is_scalar())
        throw ContractError("scale_by: scale must be scalar, got " + shape_str(s.shape));
    bool tr = track2(t, x, s);
    Tensor out = make_out(x.shape, tr);
    const long n = out.numel();
    const float sv = (*s.data)[0];
    for (long i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * sv;
    if (tr) {
        auto xd = x.data, sd = s.data;
        auto xg = x.grad, sg = s.grad, og = out.grad;
        t->record([xd, sd, xg, sg, og, n] {
            const float sv2 = (*sd)[0];
            if (xg)
                for (long i = 0; i < n; ++i) (*xg)[i] += (*og)[i] * sv2;
            if (sg) {
                double acc = 0.0;
                for (long i = 0; i < n; ++i) acc += static_cast<double>((*og)[i]) * (*xd)[i];
                (*sg)[0] += static_cast<float>(acc);
            }
        }, {og, xg, sg});
    }
    return out;
}

Tensor recip(Tape* t, const Tensor& x) {
    bool tr = track1(t, x);
    Tensor out = make_out(x.shape, tr);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) (*out.data)[i] = 1.f / (*x.data)[i];
    if (tr) {
        auto od = out.data;
        auto xg = x.grad, og = out.grad;
        t->record([od, xg, og, n] {
            if (!xg) return;
            for (long i = 0; i < n; ++i) {
                const float y = (*od)[i];
                (*xg)[i] -= (*og)[i] * y * y;
            }
        }, {og, xg});
    }
    return out;
}

Tensor exp_(Tape* t, const Tensor& x) {
    bool tr = track1(t, x);
    Tensor out = make_out(x.shape, tr);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) (*out.data)[i] = std::exp((*x.data)[i]);
    if (tr) {
        auto od = out.data;
        auto xg = x.grad, og = out.grad;
        t->record([od, xg, og, n] {
            if (!xg) return;
            for (long i = 0; i < n; ++i) (*xg)[i] += (*og)[i] * (*od)[i];
        }, {og, xg});
    }
    return out;
}

Tensor log_(Tape* t, const Tensor& x) {
    bool tr = track1(t, x);
    Tensor out = make_out(x.shape, tr);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) (*out.data)[i] = std::log((*x.data)[i]);
    if (tr) {
        auto xd = x.data;
        auto xg = x.grad, og = out.grad;
        t->record([xd, xg, og, n] {
            if (!xg) return;
            for (long i = 0; i < n; ++i) (*xg)[i] += (*og)[i] / (*xd)[i];
        }, {og, xg});
    }
    return out;
}

Tensor relu(Tape* t, const Tensor& x) {
    bool tr = track1(t, x);
    Tensor out = make_out(x.shape, tr);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] > 0.f ? (*x.data)[i] : 0.f;
    if (tr) {
        auto xd = x.data;
        auto xg = x.grad, og = out.grad;
        // subgradient at 0 is defined as 0
        t->record([xd, xg, og, n] {
            if (!xg) return;
            for (long i = 0; i < n; ++i)
                if ((*xd)[i] > 0.f) (*xg)[i] += (*og)[i];
        }, {og, xg});
    }
    return out;
}

Tensor sigmoid(Tape* t, const Tensor& x) {
    bool tr = track1(t, x);
    Tensor out = make_out(x.shape, tr);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) {
        const float z = (*x.data)[i];
        (*out.data)[i] = z >= 0.f ? 1.f / (1.f + std::exp(-z))
                                  : std::exp(z) / (1.f + std::exp(z));
    }
    if (tr) {
        auto od = out.data;
        auto xg = x.grad, og = out.grad;
        t->record([od, xg, og, n] {
            if (!xg) return;
            for (long i = 0; i < n; ++i) {
                const float y = (*od)[i];
                (*xg)[i] += (*og)[i] * y * (1.f - y);
            }
        }, {og, xg});
    }
    return out;
}

// ---- linear algebra ----------------------------------------------------------

Tensor matmul(Tape* t, const Tensor& a, const Tensor& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
        throw ContractError("matmul: incompatible shapes " + shape_str(a.shape) + " x " +
                            shape_str(b.shape));
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    bool tr = track2(t, a, b);
    Tensor out = make_out({m, n}, tr);
    const float* pa = a.ptr();
    const float* pb = b.ptr();
    float* po = out.data->data();
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const float av = pa[i * k + p];
            if (av == 0.f) continue;
            const float* brow = pb + p * n;
            float* orow = po + i * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    if (tr) {
        auto ad = a.data, bd = b.data;
        auto ag = a.grad, bg = b.grad, og = out.grad;
        t->record([ad, bd, ag, bg, og, m, k, n] {
            const float* pa2 = ad->data();
            const float* pb2 = bd->data();
            const float* pg = og->data();
            if (ag) {
                float* pag = ag->data();
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        float acc = 0.f;
                        const float* grow = pg + i * n;
                        const float* brow = pb2 + p * n;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        pag[i * k + p] += acc;
                    }
            }
            if (bg) {
                float* pbg = bg->data();
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        const float av = pa2[i * k + p];
                        if (av == 0.f) continue;
                        const float* grow = pg + i * n;
                        float* brow = pbg + p * n;
                        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
            }
        }, {og, ag, bg});
    }
    return out;
}

Tensor add_bias(Tape* t, const Tensor& m, const Tensor& b) {
    if (m.shape.size() != 2 || b.shape.size() != 1 || m.shape[1] != b.shape[0])
        throw ContractError("add_bias: shapes " + shape_str(m.shape) + " + " + shape_str(b.shape));
    const int rows = m.shape[0], d = m.shape[1];
    bool tr = track2(t, m, b);
    Tensor out = make_out(m.shape, tr);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < d; ++j)
            (*out.data)[i * d + j] = (*m.data)[i * d + j] + (*b.data)[j];
    if (tr) {
        auto mg = m.grad, bg = b.grad, og = out.grad;
        t->record([mg, bg, og, rows, d] {
            if (mg)
                for (long i = 0; i < static_cast<long>(rows) * d; ++i) (*mg)[i] += (*og)[i];
            if (bg)
                for (int j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < rows; ++i) acc += (*og)[i * d + j];
                    (*bg)[j] += static_cast<float>(acc);
                }
        }, {og, mg, bg});
    }
    return out;
}

// ---- reductions ---------------------------------------------------------------

Tensor reduce_sum(Tape* t, const Tensor& x) {
    bool tr = track1(t, x);
    Tensor out = make_out({1}, tr);
    double acc = 0.0;
    for (float v : *x.data) acc += v;
    (*out.data)[0] = static_cast<float>(acc);
    if (tr) {
        auto xg = x.grad, og = out.grad;
        const long n = x.numel();
        t->record([xg, og, n] {
            if (!xg) return;
            const float g = (*og)[0];
            for (long i = 0; i < n; ++i) (*xg)[i] += g;
        }, {og, xg});
    }
    return out;
}

Tensor reduce_mean(Tape* t, const Tensor& x) {
    const long n = x.numel();
    if (n == 0) throw ContractError("reduce_mean: empty tensor");
    bool tr = track1(t, x);
    Tensor out = make_out({1}, tr);
    double acc = 0.0;
    for (float v : *x.data) acc += v;
    (*out.data)[0] = static_cast<float>(acc / n);
    if (tr) {
        auto xg = x.grad, og = out.grad;
        t->record([xg, og, n] {
            if (!xg) return;
            const float g = (*og)[0] / n;
            for (long i = 0; i < n; ++i) (*xg)[i] += g;
        }, {og, xg});
    }
    return out;
}

Tensor row_sum(Tape* t, const Tensor& x) {
    if (x.shape.size() != 2) throw ContractError("row_sum: want rank-2, got " + shape_str(x.shape));
    const int rows = x.shape[0], d = x.shape[1];
    bool tr = track1(t, x);
    Tensor out = make_out({rows}, tr);
    for (int i = 0; i < rows; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += (*x.data)[i * d + j];
        (*out.data)[i] = static_cast<float>(acc);
    }
    if (tr) {
        auto xg = x.grad, og = out.grad;
        t->record([xg, og, rows, d] {
            if (!xg) return;
            for (int i = 0; i < rows; ++i) {
                const float g = (*og)[i];
                for (int j = 0; j < d; ++j) (*xg)[i * d + j] += g;
            }
        }, {og, xg});
    }
    return out;
}

Tensor softmax_rows(Tape* t, const Tensor& logits) {
    if (logits.shape.size() != 2)
        throw ContractError("softmax: want rank-2, got " + shape_str(logits.shape));
    const int rows = logits.shape[0], k = logits.shape[1];
    bool tr = track1(t, logits);
    Tensor out = make_out(logits.shape, tr);
    for (int i = 0; i < rows; ++i) {
        const float* z = logits.ptr() + i * k;
        float m = z[0];
        for (int j = 1; j < k; ++j) m = std::max(m, z[j]);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j]) - m);
        for (int j = 0; j < k; ++j)
            (*out.data)[i * k + j] =
                static_cast<float>(std::exp(static_cast<double>(z[j]) - m) / sum);
    }
    if (tr) {
        auto od = out.data;
        auto xg = logits.grad, og = out.grad;
        t->record([od, xg, og, rows, k] {
            if (!xg) return;
            for (int i = 0; i < rows; ++i) {
                double dot = 0.0;
                for (int j = 0; j < k; ++j)
                    dot += static_cast<double>((*og)[i * k + j]) * (*od)[i * k + j];
                for (int j = 0; j < k; ++j) {
                    const float y = (*od)[i * k + j];
                    (*xg)[i * k + j] += y * ((*og)[i * k + j] - static_cast<float>(dot));
                }
            }
        }, {og, xg});
    }
    return out;
}

Tensor pairwise_sqdist(Tape* t, const Tensor& x) {
    if (x.shape.size() != 2)
        throw ContractError("pairwise_sqdist: want rank-2, got " + shape_str(x.shape));
    const int n = x.shape[0], d = x.shape[1];
    bool tr = track1(t, x);
    Tensor out = make_out({n, n}, tr);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double acc = 0.0;
            const float* xi = x.ptr() + i * d;
            const float* xj = x.ptr() + j * d;
            for (int c = 0; c < d; ++c) {
                const double diff = static_cast<double>(xi[c]) - xj[c];
                acc += diff * diff;
            }
            const float v = static_cast<float>(acc);
            (*out.data)[i * n + j] = v;
            (*out.data)[j * n + i] = v;
        }
    if (tr) {
        auto xd = x.data;
        auto xg = x.grad, og = out.grad;
        t->record([xd, xg, og, n, d] {
            if (!xg) return;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    if (i == j) continue;
                    const float g = (*og)[i * n + j] + (*og)[j * n + i];
                    if (g == 0.f) continue;
                    const float* xi = xd->data() + i * d;
                    const float* xj = xd->data() + j * d;
                    float* gi = xg->data() + i * d;
                    for (int c = 0; c < d; ++c) gi[c] += 2.f * g * (xi[c] - xj[c]);
                }
        }, {og, xg});
    }
    return out;
}

Tensor reshape(Tape*, const Tensor& x, Shape s) {
    if (numel_of(s) != x.numel())
        throw ContractError("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(s));
    Tensor out = x;  // shared data and grad buffers: gradient flows with no node
    out.shape = std::move(s);
    return out;
}

Tensor concat_rows(Tape* t, const Tensor& a, const Tensor& b) {
    if (a.shape.empty() || b.shape.empty() || a.shape.size() != b.shape.size())
        throw ContractError("concat_rows: rank mismatch " + shape_str(a.shape) + " vs " +
                            shape_str(b.shape));
    for (size_t i = 1; i < a.shape.size(); ++i)
        if (a.shape[i] != b.shape[i])
            throw ContractError("concat_rows: trailing dims differ " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
    Shape s = a.shape;
    s[0] += b.shape[0];
    bool tr = track2(t, a, b);
    Tensor out = make_out(s, tr);
    const long na = a.numel(), nb = b.numel();
    std::memcpy(out.data->data(), a.ptr(), sizeof(float) * na);
    std::memcpy(out.data->data() + na, b.ptr(), sizeof(float) * nb);
    if (tr) {
        auto ag = a.grad, bg = b.grad, og = out.grad;
        t->record([ag, bg, og, na, nb] {
            if (ag)
                for (long i = 0; i < na; ++i) (*ag)[i] += (*og)[i];
            if (bg)
                for (long i = 0; i < nb; ++i) (*bg)[i] += (*og)[na + i];
        }, {og, ag, bg});
    }
    return out;
}

// ---- convolution and pooling ---------------------------------------------------

Tensor conv2d(Tape* t, const Tensor& x, const Tensor& k, const Tensor& bias, Padding pad) {
    if (x.shape.size() != 4 || k.shape.size() != 4 || x.shape[1] != k.shape[1])
        throw ContractError("conv2d: shapes " + shape_str(x.shape) + " (*) " + shape_str(k.shape));
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int F = k.shape[0], KH = k.shape[2], KW = k.shape[3];
    const bool has_bias = bias.numel() > 0;
    if (has_bias && (bias.shape.size() != 1 || bias.shape[0] != F))
        throw ContractError("conv2d: bias shape " + shape_str(bias.shape) + " wants (" +
                            std::to_string(F) + ")");
    int ph = 0, pw = 0;
    if (pad == Padding::Same) {
        if (KH % 2 == 0 || KW % 2 == 0)
            throw ContractError("conv2d: same-padding requires odd kernel, got " +
                                shape_str(k.shape));
        ph = (KH - 1) / 2;
        pw = (KW - 1) / 2;
    }
    const int OH = H + 2 * ph - KH + 1, OW = W + 2 * pw - KW + 1;
    if (OH <= 0 || OW <= 0)
        throw ContractError("conv2d: kernel " + shape_str(k.shape) + " larger than input " +
                            shape_str(x.shape));
    bool tr = t != nullptr && (x.requires_grad || k.requires_grad ||
                               (has_bias && bias.requires_grad));
    Tensor out = make_out({N, F, OH, OW}, tr);
    const float* px = x.ptr();
    const float* pk = k.ptr();
    float* po = out.data->data();
    for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f) {
            const float bv = has_bias ? (*bias.data)[f] : 0.f;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    float acc = bv;
                    for (int c = 0; c < C; ++c)
                        for (int i = 0; i < KH; ++i) {
                            const int ih = oh + i - ph;
                            if (ih < 0 || ih >= H) continue;
                            const float* xrow = px + ((n * C + c) * H + ih) * W;
                            const float* krow = pk + ((f * C + c) * KH + i) * KW;
                            for (int j = 0; j < KW; ++j) {
                                const int iw = ow + j - pw;
                                if (iw < 0 || iw >= W) continue;
                                acc += xrow[iw] * krow[j];
                            }
                        }
                    po[((n * F + f) * OH + oh) * OW + ow] = acc;
                }
        }
    if (tr) {
        auto xd = x.data, kd = k.data;
        auto xg = x.grad, kg = k.grad, og = out.grad;
        auto bgr = has_bias ? bias.grad : nullptr;
        t->record([xd, kd, xg, kg, bgr, og, N, C, H, W, F, KH, KW, OH, OW, ph, pw] {
            const float* px2 = xd->data();
            const float* pk2 = kd->data();
            const float* pg = og->data();
            for (int n = 0; n < N; ++n)
                for (int f = 0; f < F; ++f)
                    for (int oh = 0; oh < OH; ++oh)
                        for (int ow = 0; ow < OW; ++ow) {
                            const float g = pg[((n * F + f) * OH + oh) * OW + ow];
                            if (g == 0.f) continue;
                            if (bgr) (*bgr)[f] += g;
                            for (int c = 0; c < C; ++c)
                                for (int i = 0; i < KH; ++i) {
                                    const int ih = oh + i - ph;
                                    if (ih < 0 || ih >= H) continue;
                                    for (int j = 0; j < KW; ++j) {
                                        const int iw = ow + j - pw;
                                        if (iw < 0 || iw >= W) continue;
                                        const long xoff = ((static_cast<long>(n) * C + c) * H + ih) * W + iw;
                                        const long koff = ((static_cast<long>(f) * C + c) * KH + i) * KW + j;
                                        if (xg) (*xg)[xoff] += g * pk2[koff];
                                        if (kg) (*kg)[koff] += g * px2[xoff];
                                    }
                                }
                        }
        }, {og, xg, kg, bgr});
    }
    return out;
}

Tensor maxpool2(Tape* t, const Tensor& x) {
    if (x.shape.size() != 4)
        throw ContractError("maxpool2: want rank-4, got " + shape_str(x.shape));
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    if (H < 2 || W < 2)
        throw ContractError("maxpool2: spatial dims too small " + shape_str(x.shape));
    const int OH = H / 2, OW = W / 2;
    bool tr = track1(t, x);
    Tensor out = make_out({N, C, OH, OW}, tr);
    auto argmax = std::make_shared<std::vector<long>>(out.numel());
    const float* px = x.ptr();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    long best = -1;
                    float bv = 0.f;
                    for (int i = 0; i < 2; ++i)
                        for (int j = 0; j < 2; ++j) {
                            const long off =
                                ((static_cast<long>(n) * C + c) * H + oh * 2 + i) * W + ow * 2 + j;
                            if (best < 0 || px[off] > bv) {
                                best = off;
                                bv = px[off];
                            }
                        }
                    const long ooff = ((static_cast<long>(n) * C + c) * OH + oh) * OW + ow;
                    (*out.data)[ooff] = bv;
                    (*argmax)[ooff] = best;
                }
    if (tr) {
        auto xg = x.grad, og = out.grad;
        const long on = out.numel();
        t->record([xg, og, argmax, on] {
            if (!xg) return;
            for (long i = 0; i < on; ++i) (*xg)[(*argmax)[i]] += (*og)[i];
        }, {og, xg});
    }
    return out;
}

// ---- losses -----------------------------------------------------------------

Tensor ce_logits(Tape* t, const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape.size() != 2)
        throw ContractError("ce_logits: want rank-2 logits, got " + shape_str(logits.shape));
    const int n = logits.shape[0], k = logits.shape[1];
    if (static_cast<int>(labels.size()) != n)
        throw ContractError("ce_logits: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(n) + " rows");
    for (int y : labels)
        if (y < 0 || y >= k) throw ContractError("ce_logits: label " + std::to_string(y) +
                                                 " out of range [0," + std::to_string(k) + ")");
    bool tr = track1(t, logits);
    Tensor out = make_out({1}, tr);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const float* z = logits.ptr() + i * k;
        float m = z[0];
        for (int j = 1; j < k; ++j) m = std::max(m, z[j]);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j]) - m);
        total += m + std::log(sum) - z[labels[i]];
    }
    (*out.data)[0] = static_cast<float>(total / n);
    if (tr) {
        auto zd = logits.data;
        auto zg = logits.grad, og = out.grad;
        auto lab = labels;
        t->record([zd, zg, og, lab, n, k] {
            if (!zg) return;
            const float g = (*og)[0] / n;
            for (int i = 0; i < n; ++i) {
                const float* z = zd->data() + i * k;
                float m = z[0];
                for (int j = 1; j < k; ++j) m = std::max(m, z[j]);
                double sum = 0.0;
                for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j]) - m);
                for (int j = 0; j < k; ++j) {
                    const float p =
                        static_cast<float>(std::exp(static_cast<double>(z[j]) - m) / sum);
                    (*zg)[i * k + j] += g * (p - (j == lab[i] ? 1.f : 0.f));
                }
            }
        }, {og, zg});
    }
    return out;
}

Tensor bce_logits(Tape* t, const Tensor& x, const std::vector<float>& targets) {
    const long n = x.numel();
    if (n == 0 || static_cast<long>(targets.size()) != n)
        throw ContractError("bce_logits: " + std::to_string(targets.size()) + " targets for " +
                            std::to_string(n) + " logits");
    bool tr = track1(t, x);
    Tensor out = make_out({1}, tr);
    double total = 0.0;
    for (long i = 0; i < n; ++i) {
        const double z = (*x.data)[i], y = targets[i];
        total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    (*out.data)[0] = static_cast<float>(total / n);
    if (tr) {
        auto xd = x.data;
        auto xg = x.grad, og = out.grad;
        auto ts = targets;
        t->record([xd, xg, og, ts, n] {
            if (!xg) return;
            const float g = (*og)[0] / n;
            for (long i = 0; i < n; ++i) {
                const double z = (*xd)[i];
                const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                        : std::exp(z) / (1.0 + std::exp(z));
                (*xg)[i] += g * static_cast<float>(s - ts[i]);
            }
        }, {og, xg});
    }
    return out;
}

Tensor mask_blend(Tape* t, const Tensor& x, const Tensor& m, const Tensor& p) {
    if (x.shape.size() != 2)
        throw ContractError("mask_blend: want rank-2 batch, got " + shape_str(x.shape));
    const int rows = x.shape[0], d = x.shape[1];
    if (m.numel() != d || p.numel() != d)
        throw ContractError("mask_blend: mask/pattern size " + std::to_string(m.numel()) + "/" +
                            std::to_string(p.numel()) + " for feature dim " + std::to_string(d));
    bool tr = t != nullptr && (x.requires_grad || m.requires_grad || p.requires_grad);
    Tensor out = make_out(x.shape, tr);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < d; ++j) {
            const float mv = (*m.data)[j];
            (*out.data)[i * d + j] = (1.f - mv) * (*x.data)[i * d + j] + mv * (*p.data)[j];
        }
    if (tr) {
        auto xd = x.data, md = m.data, pd = p.data;
        auto xg = x.grad, mg = m.grad, pg = p.grad, og = out.grad;
        t->record([xd, md, pd, xg, mg, pg, og, rows, d] {
            for (int j = 0; j < d; ++j) {
                const float mv = (*md)[j];
                double dm = 0.0, dp = 0.0;
                for (int i = 0; i < rows; ++i) {
                    const float g = (*og)[i * d + j];
                    if (xg) (*xg)[i * d + j] += g * (1.f - mv);
                    dm += static_cast<double>(g) * ((*pd)[j] - (*xd)[i * d + j]);
                    dp += static_cast<double>(g) * mv;
                }
                if (mg) (*mg)[j] += static_cast<float>(dm);
                if (pg) (*pg)[j] += static_cast<float>(dp);
            }
        }, {og, xg, mg, pg});
    }
    return out;
}

// ---- Adam ----------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].numel(), 0.f);
        v_[i].assign(params_[i].numel(), 0.f);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Adam::set_mask(std::vector<std::vector<float>> masks) {
    if (masks.size() != params_.size())
        throw ContractError("Adam::set_mask: " + std::to_string(masks.size()) + " masks for " +
                            std::to_string(params_.size()) + " params");
    masks_ = std::move(masks);
}

void Adam::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.grad) throw ContractError("Adam::step: parameter " + std::to_string(i) +
                                         " has no gradient (missing backward?)");
        const long n = p.numel();
        const float* mask = masks_.empty() ? nullptr : masks_[i].data();
        for (long j = 0; j < n; ++j) {
            float g = (*p.grad)[j];
            if (mask) g *= mask[j];
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.f - cfg_.beta1) * g;
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.f - cfg_.beta2) * g * g;
            const double mh = m_[i][j] / bc1;
            const double vh = v_[i][j] / bc2;
            (*p.data)[j] -= static_cast<float>(cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
        }
    }
}

// ---- finite-difference gradient check ----------------------------------------

GradCheckResult grad_check(const std::function<Tensor(Tape*, const Tensor&)>& f,
                           const Tensor& x, double h, double tol) {
    if (h <= 0.0) throw ContractError("grad_check: h must be positive");
    if (tol <= 0.0) throw ContractError("grad_check: tol must be positive");

    Tensor xt = x.detach();
    xt.set_requires_grad(true);
    Tape tape;
    Tensor loss = f(&tape, xt);
    if (!loss.is_scalar())
        throw ContractError("grad_check: f must be scalar-valued, got " + shape_str(loss.shape));
    tape.backward(loss);
    std::vector<float> g(*xt.grad);

    Tensor xp = x.detach();
    GradCheckResult res;
    res.pass = true;
    const long n = x.numel();
    for (long i = 0; i < n; ++i) {
        const float old = (*xp.data)[i];
        (*xp.data)[i] = static_cast<float>(old + h);
        const double fp = f(nullptr, xp).value();
        (*xp.data)[i] = static_cast<float>(old - h);
        const double fm = f(nullptr, xp).value();
        (*xp.data)[i] = old;
        const double fd = (fp - fm) / (2.0 * h);
        const double tg = g[i];
        const double denom = std::max({1.0, std::abs(tg), std::abs(fd)});
        const double err = std::abs(tg - fd) / denom;
        if (err > res.max_err) {
            res.max_err = err;
            res.worst_index = i;
            res.tape_grad = tg;
            res.fd_grad = fd;
        }
    }
    res.pass = res.max_err < tol;
    return res;
}

}  // namespace ewe
