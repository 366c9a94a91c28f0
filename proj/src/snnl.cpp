#include "ewe/snnl.hpp"

namespace ewe {

void SnnlBatch::validate() const {
    const int n = points.shape.empty() ? 0 : points.shape[0];
    if (n < 2) throw ContractError("snnl: need at least 2 points, got " + std::to_string(n));
    if (points.shape.size() != 2)
        throw ContractError("snnl: points must be (N,d), got " + shape_str(points.shape));
    if (static_cast<int>(groups.size()) != n)
        throw ContractError("snnl: " + std::to_string(groups.size()) + " group ids for " +
                            std::to_string(n) + " points");
    if (!(temperature > 0.0))
        throw ContractError("snnl: temperature must be positive, got " +
                            std::to_string(temperature));
}

Tensor snnl_value(Tape* tape, const Tensor& points, const std::vector<int>& groups,
                  const Tensor& temperature) {
    const int n = points.shape.empty() ? 0 : points.shape[0];
    if (n < 2) throw ContractError("snnl: need at least 2 points, got " + std::to_string(n));
    if (static_cast<int>(groups.size()) != n)
        throw ContractError("snnl: " + std::to_string(groups.size()) + " group ids for " +
                            std::to_string(n) + " points");
    if (!temperature.is_scalar())
        throw ContractError("snnl: temperature must be scalar, got " +
                            shape_str(temperature.shape));
    if (!(temperature.value() > 0.f))
        throw ContractError("snnl: temperature must be positive, got " +
                            std::to_string(temperature.value()));

    Tensor x = points;
    if (x.shape.size() != 2) x = reshape(tape, x, {n, static_cast<int>(x.numel() / n)});

    // off-diagonal and same-group masks are constants of the graph
    Tensor off_mask = zeros({n, n});
    Tensor same_mask = zeros({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            (*off_mask.data)[i * n + j] = 1.f;
            if (groups[i] == groups[j]) (*same_mask.data)[i * n + j] = 1.f;
        }

    Tensor d = pairwise_sqdist(tape, x);
    Tensor w = exp_(tape, scale_by(tape, d, neg(tape, recip(tape, temperature))));
    Tensor same_sum = row_sum(tape, mul(tape, w, same_mask));
    Tensor all_sum = row_sum(tape, mul(tape, w, off_mask));
    Tensor per_point = sub(tape, log_(tape, add_scalar(tape, same_sum, kSnnlEps)),
                           log_(tape, all_sum));
    return neg(tape, reduce_mean(tape, per_point));
}

double snnl(const SnnlBatch& batch) {
    batch.validate();
    Tensor t = full({1}, static_cast<float>(batch.temperature));
    return snnl_value(nullptr, batch.points, batch.groups, t).value();
}

Tensor snnl_grad_input(const SnnlBatch& batch) {
    batch.validate();
    Tensor x = batch.points.detach();
    x.set_requires_grad(true);
    Tensor t = full({1}, static_cast<float>(batch.temperature));
    Tape tape;
    Tensor loss = snnl_value(&tape, x, batch.groups, t);
    tape.backward(loss);
    Tensor g = zeros(batch.points.shape);
    *g.data = *x.grad;
    return g;
}

double snnl_grad_temperature(const SnnlBatch& batch) {
    batch.validate();
    Tensor t = full({1}, static_cast<float>(batch.temperature));
    t.set_requires_grad(true);
    Tape tape;
    Tensor loss = snnl_value(&tape, batch.points, batch.groups, t);
    tape.backward(loss);
    return (*t.grad)[0];
}

}  // namespace ewe
