#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ewe/common.hpp"

namespace ewe {

// Dense row-major float32 array. Copies are shallow (shared buffers);
// detach() yields an untracked value. A tensor participates in
// differentiation when requires_grad is set, in which case a same-size
// grad buffer is attached.
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<float>> data;
    std::shared_ptr<std::vector<float>> grad;  // non-null iff requires_grad
    bool requires_grad = false;

    Tensor() = default;
    Tensor(Shape s, std::vector<float> values);

    long numel() const { return data ? static_cast<long>(data->size()) : 0; }
    bool is_scalar() const { return numel() == 1; }
    float value() const;  // scalar convenience accessor

    float* ptr() { return data->data(); }
    const float* ptr() const { return data->data(); }
    float operator[](long i) const { return (*data)[static_cast<size_t>(i)]; }

    void set_requires_grad(bool on);
    void zero_grad();
    Tensor detach() const;  // deep copy, untracked
    Tensor clone() const;   // deep copy, keeps requires_grad (fresh grad buffer)
};

Tensor zeros(const Shape& s);
Tensor full(const Shape& s, float v);
bool all_finite(const Tensor& t);

// Single-writer record of primitive applications. Creation order is
// topological, so the backward pass is a single reverse sweep.
class Tape {
public:
    using BackFn = std::function<void()>;

    void record(BackFn back, std::initializer_list<std::shared_ptr<std::vector<float>>> grads);

    // Reverse-sweep from a scalar, then reset the tape.
    void backward(const Tensor& loss);

    // Reverse-sweep without resetting; callable repeatedly while the saved
    // forward values are still valid (i.e. before any in-place update).
    void sweep(const Tensor& loss);

    void clear();
    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<BackFn> nodes_;
    std::vector<std::shared_ptr<std::vector<float>>> buffers_;
};

enum class Padding { Valid, Same };

// ---- primitives -----------------------------------------------------------
// Every primitive takes the tape first; pass nullptr for pure (untracked)
// forward evaluation. Shape violations raise ContractError naming the
// primitive and the offending dimensions.

Tensor add(Tape* t, const Tensor& a, const Tensor& b);
Tensor sub(Tape* t, const Tensor& a, const Tensor& b);
Tensor mul(Tape* t, const Tensor& a, const Tensor& b);
Tensor neg(Tape* t, const Tensor& x);
Tensor add_scalar(Tape* t, const Tensor& x, float c);
Tensor mul_scalar(Tape* t, const Tensor& x, float c);
Tensor scale_by(Tape* t, const Tensor& x, const Tensor& s);  // x * scalar-tensor s
Tensor recip(Tape* t, const Tensor& x);
Tensor exp_(Tape* t, const Tensor& x);
Tensor log_(Tape* t, const Tensor& x);
Tensor relu(Tape* t, const Tensor& x);
Tensor sigmoid(Tape* t, const Tensor& x);
Tensor matmul(Tape* t, const Tensor& a, const Tensor& b);     // (m,k)x(k,n)
Tensor add_bias(Tape* t, const Tensor& m, const Tensor& b);   // (n,d) + (d,) per row
Tensor reduce_sum(Tape* t, const Tensor& x);                  // -> scalar
Tensor reduce_mean(Tape* t, const Tensor& x);                 // -> scalar
Tensor row_sum(Tape* t, const Tensor& x);                     // (n,d) -> (n,)
Tensor softmax_rows(Tape* t, const Tensor& logits);           // stable, rows sum to 1
Tensor pairwise_sqdist(Tape* t, const Tensor& x);             // (n,d) -> (n,n)
Tensor reshape(Tape* t, const Tensor& x, Shape s);
Tensor concat_rows(Tape* t, const Tensor& a, const Tensor& b);
Tensor conv2d(Tape* t, const Tensor& x, const Tensor& k, const Tensor& bias, Padding pad);
Tensor maxpool2(Tape* t, const Tensor& x);                    // 2x2, stride 2, floor
// mean cross-entropy of softmax(logits) against integer labels
Tensor ce_logits(Tape* t, const Tensor& logits, const std::vector<int>& labels);
// mean binary cross-entropy of sigmoid(logit) against 0/1 targets; x is (n,) or (n,1)
Tensor bce_logits(Tape* t, const Tensor& x, const std::vector<float>& targets);
// per-sample blend: out_i = (1-m) * x_i + m * p, with m,p broadcast over rows
Tensor mask_blend(Tape* t, const Tensor& x, const Tensor& m, const Tensor& p);

// ---- optimizer -------------------------------------------------------------

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    void zero_grad();
    void step();  // throws ContractError when a parameter has no grad buffer

    // 0/1 mask per parameter tensor; masked-out coordinates are frozen.
    void set_mask(std::vector<std::vector<float>> masks);

    long step_count() const { return step_; }

private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    long step_ = 0;
    std::vector<std::vector<float>> m_, v_;
    std::vector<std::vector<float>> masks_;
};

// ---- gradient checking ------------------------------------------------------

struct GradCheckResult {
    bool pass = false;
    double max_err = 0.0;   // |tape - fd| / max(1, |tape|, |fd|), worst coordinate
    long worst_index = -1;
    double tape_grad = 0.0;
    double fd_grad = 0.0;
};

// Compares the tape gradient of a scalar-valued f against central finite
// differences at step h. The finite-difference side only ever calls f for
// forward values, so it is independent of the backward implementation.
GradCheckResult grad_check(const std::function<Tensor(Tape*, const Tensor&)>& f,
                           const Tensor& x, double h, double tol);

}  // namespace ewe
