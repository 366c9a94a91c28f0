#include "ewe/verification.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "ewe/rng.hpp"

namespace ewe {

namespace {

// Acklam's rational approximation; only used away from the pinned 95% point.
double normal_quantile(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1 - plow;
    double q, r;
    if (p < plow) {
        q = std::sqrt(-2 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    if (p <= phigh) {
        q = p - 0.5;
        r = q * q;
        return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
               (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    }
    q = std::sqrt(-2 * std::log(1 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
}

double z_for_confidence(double confidence) {
    if (std::abs(confidence - 0.95) < 1e-12) return kZCritical95;  // pinned
    if (!(confidence > 0.5 && confidence < 1.0))
        throw ContractError("confidence must be in (0.5, 1)");
    return normal_quantile(confidence);
}

}  // namespace

double watermark_success_rate(const Model& m, const WatermarkSet& wm) {
    if (wm.size() == 0) throw ContractError("watermark_success_rate: empty watermark set");
    std::vector<int> pred = predict_labels(m, wm.inputs);
    long hits = 0;
    for (int p : pred)
        if (p == wm.target_class) ++hits;
    return static_cast<double>(hits) / wm.size();
}

double false_watermark_rate(const std::vector<const Model*>& clean_models,
                            const WatermarkSet& wm, int num_classes) {
    if (clean_models.empty()) {
        if (num_classes < 2)
            throw ContractError("false_watermark_rate: need K >= 2 for the chance bound");
        return 1.0 / num_classes;  // conservative upper bound
    }
    double total = 0.0;
    for (const Model* m : clean_models) total += watermark_success_rate(*m, wm);
    return total / clean_models.size();
}

int queries_needed(double p, double p0, double confidence) {
    if (!(p >= 0.0 && p <= 1.0 && p0 >= 0.0 && p0 <= 1.0))
        throw ContractError("queries_needed: rates must be in [0,1]");
    if (p <= p0)
        throw ContractError("unverifiable: success rate does not exceed false rate");
    const double z = z_for_confidence(confidence);
    const double raw = z * z * p * (1.0 - p) / ((p - p0) * (p - p0));
    const double n = std::ceil(raw - 1e-12);
    return std::max<long>(kCltFloor, static_cast<long>(n));
}

OwnershipReport claim_ownership(const Model& suspect, const WatermarkSet& wm, double p0, int n,
                                std::uint64_t seed, double confidence) {
    if (n < kCltFloor)
        throw ContractError("claim_ownership: need at least " + std::to_string(kCltFloor) +
                            " queries for the CLT, got " + std::to_string(n));
    if (wm.size() == 0) throw ContractError("claim_ownership: empty watermark set");

    OwnershipReport rep;
    rep.n_queries = n;
    rep.false_rate = p0;

    std::vector<long> order(wm.size());
    for (long i = 0; i < wm.size(); ++i) order[i] = i;
    Rng rng = Rng(seed).substream("verify");
    std::vector<long> chosen;
    if (n <= wm.size()) {
        rng.shuffle(order);
        chosen.assign(order.begin(), order.begin() + n);
    } else {
        rep.sampled_with_replacement = true;
        for (int i = 0; i < n; ++i)
            chosen.push_back(order[rng.below(order.size())]);
    }

    Shape s = wm.inputs.shape;
    s[0] = n;
    Tensor queries = zeros(s);
    const long f = wm.inputs.numel() / wm.size();
    for (int i = 0; i < n; ++i)
        std::copy_n(wm.inputs.ptr() + chosen[i] * f, f, queries.data->data() + i * f);

    std::vector<int> pred = predict_labels(suspect, queries);
    long hits = 0;
    for (int p : pred)
        if (p == wm.target_class) ++hits;
    rep.raw_success = static_cast<double>(hits) / n;
    rep.adjusted = rep.raw_success - p0;

    const double crit = z_for_confidence(confidence);
    if (p0 <= 0.0) {
        rep.z = hits > 0 ? std::numeric_limits<double>::infinity() : 0.0;
    } else if (p0 >= 1.0) {
        rep.z = -std::numeric_limits<double>::infinity();
    } else {
        rep.z = (rep.raw_success - p0) / std::sqrt(p0 * (1.0 - p0) / n);
    }
    rep.claim = rep.z > crit;
    return rep;
}

std::string OwnershipReport::text() const {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "ownership verification\n"
                  "  queries:            %d%s\n"
                  "  watermark success:  %.4f\n"
                  "  false rate (p0):    %.4f\n"
                  "  adjusted success:   %.4f\n"
                  "  z statistic:        %.4f\n"
                  "  verdict:            %s\n",
                  n_queries, sampled_with_replacement ? " (sampled with replacement)" : "",
                  raw_success, false_rate, adjusted, z,
                  claim ? "CLAIM (95% confidence)" : "no claim");
    return buf;
}

std::string OwnershipReport::csv_header() {
    return "n_queries,raw_success,false_rate,adjusted,z,claim,with_replacement";
}

std::string OwnershipReport::csv_row() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%d,%d", n_queries, raw_success,
                  false_rate, adjusted, z, claim ? 1 : 0, sampled_with_replacement ? 1 : 0);
    return buf;
}

}  // namespace ewe
