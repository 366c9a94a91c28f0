#pragma once

#include <vector>

#include "ewe/tensor.hpp"

namespace ewe {

// Soft nearest neighbor loss over a batch of representations with group ids:
//   -1/N sum_i log( (eps + sum_{j!=i, y_j=y_i} e^{-||x_i-x_j||^2 / T})
//                 / sum_{k!=i} e^{-||x_i-x_k||^2 / T} )
// Large values mean the groups overlap (are entangled); minimal values mean
// they form separate clusters. eps keeps the loss finite for points without a
// same-group peer.
inline constexpr float kSnnlEps = 1e-12f;

struct SnnlBatch {
    Tensor points;            // (N,d), flattened representations
    std::vector<int> groups;  // N group ids
    double temperature = 1.0;

    void validate() const;  // N >= 2, T > 0, sizes agree
};

// Tape-recorded loss; temperature enters as a (possibly tracked) scalar
// tensor so dSNNL/dT is available from the same graph.
Tensor snnl_value(Tape* tape, const Tensor& points, const std::vector<int>& groups,
                  const Tensor& temperature);

double snnl(const SnnlBatch& batch);
Tensor snnl_grad_input(const SnnlBatch& batch);     // (N,d)
double snnl_grad_temperature(const SnnlBatch& batch);

}  // namespace ewe
