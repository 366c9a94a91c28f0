#pragma once

#include <string>
#include <vector>

#include "ewe/common.hpp"
#include "ewe/tensor.hpp"

namespace ewe {

// Labelled inputs. Image datasets are (N,H,W) single-channel with values in
// [0,1]; the 2-D toy task is (N,2) and deliberately allows the out-of-range
// watermark coordinate x2 = -1.
struct Dataset {
    Tensor inputs;             // (N,H,W) or (N,features)
    std::vector<int> labels;   // each in [0,K)
    int num_classes = 0;
    std::string name;

    long size() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }
    long feature_count() const { return size() ? inputs.numel() / size() : 0; }

    // row-major copy of sample i, flattened
    std::vector<float> sample(long i) const;
    // (count, features...) batch of the given indices
    Tensor gather(const std::vector<long>& idx) const;
    std::vector<long> indices_of_class(int c) const;

    void validate(bool require_unit_range = true) const;
};

// IDX (big-endian) image/label pair, u8 pixels scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
// Inverse of load_idx for u8-representable data (values must be k/255).
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

// Deterministic K-class glyph dataset: one stroke pattern per class on a
// side x side grid plus Gaussian pixel noise (sigma, clipped to [0,1]).
Dataset gen_synthetic(int num_classes, int n_per_class, int side, std::uint64_t seed,
                      float noise_sigma = 0.1f);

// 2-D binary task: x1,x2 ~ U(0,1), y = 1 iff x1+x2 > 1. With watermark on,
// appends n/10 points at x2 = -1 labelled 1.
Dataset gen_toy2d(long n, bool watermark, std::uint64_t seed);

}  // namespace ewe
