#pragma once

#include <string>
#include <vector>

#include "ewe/model.hpp"
#include "ewe/watermark.hpp"

namespace ewe {

// One-sided one-proportion z test at 95% confidence by default.
inline constexpr double kZCritical95 = 1.645;
inline constexpr int kCltFloor = 30;  // minimum query count for the CLT to apply

struct OwnershipReport {
    double raw_success = 0.0;   // p
    double false_rate = 0.0;    // p0
    double adjusted = 0.0;      // p - p0
    int n_queries = 0;
    double z = 0.0;
    bool claim = false;
    bool sampled_with_replacement = false;

    std::string text() const;
    std::string csv_row() const;
    static std::string csv_header();
};

// Fraction of watermark inputs the model classifies as the target class.
double watermark_success_rate(const Model& m, const WatermarkSet& wm);

// Mean watermark success over non-watermarked reference models. With an
// empty list the conservative chance bound 1/K applies; K must be supplied.
double false_watermark_rate(const std::vector<const Model*>& clean_models,
                            const WatermarkSet& wm, int num_classes);

// Queries needed to claim ownership at the given confidence:
//   n = max(30, ceil(z^2 * p(1-p) / (p - p0)^2)),
// z the one-sided normal quantile (1.645 at 0.95).
int queries_needed(double p, double p0, double confidence = 0.95);

// Samples n watermark inputs (with replacement when the set is smaller),
// queries the suspect, and runs the one-sided test of the observed success
// count against p0. Verdict is claim iff z > the critical value.
OwnershipReport claim_ownership(const Model& suspect, const WatermarkSet& wm, double p0, int n,
                                std::uint64_t seed = 1, double confidence = 0.95);

}  // namespace ewe
